#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "soda/action_grid.hpp"
#include "soda/dataset.hpp"
#include "soda/kdtree.hpp"

namespace soda {

using ActionDistribution = std::array<double, kNumActions>;
using ActionCounts = std::array<int, kNumActions>;

// Set of actions a policy may take at one state.
class SafetyMask {
 public:
  // Every action allowed.
  SafetyMask() { allowed_.set(); }

  static SafetyMask all() { return SafetyMask(); }
  static SafetyMask from_bits(std::uint32_t bits, double epsilon = 0.0);
  static SafetyMask of(std::initializer_list<ActionId> actions, double epsilon = 0.0);

  bool allows(ActionId a) const { return allowed_.test(static_cast<std::size_t>(a)); }
  int count() const { return static_cast<int>(allowed_.count()); }
  bool is_full() const { return allowed_.all(); }
  std::uint32_t bits() const { return static_cast<std::uint32_t>(allowed_.to_ulong()); }
  double epsilon() const { return epsilon_; }
  std::vector<ActionId> allowed_actions() const;

  bool operator==(const SafetyMask& o) const { return allowed_ == o.allowed_; }

 private:
  std::bitset<kNumActions> allowed_;
  double epsilon_ = 0.0;
};

// Weighted k-nearest-neighbour estimate of the logged (clinician) policy.
//
// Features are standardised to zero mean / unit scale over the reference
// set, multiplied by sqrt(weight), and compared with Euclidean distance.
// Equidistant neighbours are ranked by reference order.
class BehaviorModel {
 public:
  BehaviorModel() = default;

  static BehaviorModel fit(const Dataset& dataset, int k, std::vector<double> distance_weights = {});
  static BehaviorModel fit(const Schema& schema, std::vector<StateVector> states,
                           std::vector<ActionId> actions, int k,
                           std::vector<double> distance_weights = {});

  int k() const { return k_; }
  std::size_t size() const { return actions_.size(); }
  std::size_t dim() const { return schema_.size(); }
  const Schema& schema() const { return schema_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }
  const std::vector<double>& distance_weights() const { return weights_; }
  std::span<const double> reference_state(std::size_t i) const;
  ActionId reference_action(std::size_t i) const { return actions_[i]; }

  // Action counts among the k nearest reference transitions. With
  // `exclude_self`, the lowest-index reference transition whose state equals
  // the query exactly is removed from its own neighbour list (the count
  // total is then min(k, size-1)).
  ActionCounts neighbor_counts(std::span<const double> state, bool exclude_self = false) const;
  ActionCounts neighbor_counts_at(std::size_t reference_index, bool exclude_self) const;

  // Counts for many queries at once; `excluded` holds one reference index
  // (or nothing) per query.
  std::vector<ActionCounts> neighbor_counts_batch(const std::vector<std::span<const double>>& states,
                                                  const std::vector<std::optional<std::size_t>>& excluded) const;

  std::optional<std::size_t> find_reference(std::span<const double> state) const;
  std::vector<Neighbor> neighbors(std::span<const double> state, std::optional<std::size_t> excluded) const;

  void save(const std::filesystem::path& path) const;
  static BehaviorModel load(const std::filesystem::path& path);

 private:
  void build();
  std::vector<double> transform(std::span<const double> state) const;
  ActionCounts count(const std::vector<Neighbor>& nbrs) const;

  Schema schema_;
  int k_ = 0;
  std::vector<double> raw_;  // row-major reference states
  std::vector<ActionId> actions_;
  std::vector<double> weights_, mean_, scale_, multiplier_;
  KdTree tree_;
  std::unordered_multimap<std::size_t, std::size_t> exact_index_;
};

ActionDistribution counts_to_probs(const ActionCounts& counts);

ActionDistribution behavior_probs(const BehaviorModel& model, std::span<const double> state,
                                  bool exclude_self = false);

// allowed = {a : count(a) >= max(1, round(epsilon * total))}; falls back to
// the argmax action (lowest id on ties) when that set is empty.
SafetyMask mask_from_counts(const ActionCounts& counts, double epsilon);
SafetyMask safety_mask(const BehaviorModel& model, std::span<const double> state, double epsilon,
                       bool exclude_self = false);

// Zero outside the mask, renormalised inside; uniform over the mask when the
// in-mask mass is below 1e-12.
ActionDistribution apply_mask(const ActionDistribution& probs, const SafetyMask& mask);

// Neighbour counts for every transition of a dataset, in flattened order.
struct BehaviorTable {
  int k = 0;
  bool exclude_self = false;
  std::vector<ActionCounts> counts;

  std::size_t size() const { return counts.size(); }
  ActionDistribution probs(std::size_t i) const { return counts_to_probs(counts[i]); }
  SafetyMask mask(std::size_t i, double epsilon) const { return mask_from_counts(counts[i], epsilon); }
};

// `is_reference` states that `dataset` is the model's own reference set, so
// self-exclusion removes transition i itself rather than an equal state.
BehaviorTable tabulate_behavior(const BehaviorModel& model, const Dataset& dataset, bool exclude_self,
                                bool is_reference = false, int threads = 1);

// Mask cache: header line, then {"index","mask","counts"} per transition.
void save_mask_cache(const BehaviorTable& table, double epsilon, const std::filesystem::path& path);
BehaviorTable load_mask_cache(const std::filesystem::path& path);

// `feature_name weight` per line; unknown names are a SchemaError, missing
// features keep weight 1.
std::vector<double> load_distance_weights(const std::filesystem::path& path, const Schema& schema);

}  // namespace soda
