#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soda/action_grid.hpp"

namespace soda {

inline constexpr int kMaxHours = 72;

enum class FeatureKind { kContinuous, kIndicator };

struct FeatureSpec {
  std::string name;
  std::string unit;
  FeatureKind kind = FeatureKind::kContinuous;

  bool operator==(const FeatureSpec&) const = default;
};

// Ordered feature list shared by every state vector in a dataset.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FeatureSpec> features) : features_(std::move(features)) {}

  // Continuous features named f0..f{n-1}.
  static Schema generic(std::size_t n);

  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  const FeatureSpec& operator[](std::size_t i) const { return features_[i]; }
  const std::vector<FeatureSpec>& features() const { return features_; }

  // Case-insensitive lookup.
  std::optional<std::size_t> index_of(std::string_view name) const;

  // Throws SchemaError on length mismatch, non-finite entries, or
  // indicator features that are not exactly 0 or 1.
  void check(std::span<const double> state) const;

  bool operator==(const Schema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
};

using StateVector = std::vector<double>;

struct Transition {
  int t = 1;  // 1-based hour index
  StateVector state;
  ActionId action = 0;
  double reward = 0.0;

  bool operator==(const Transition&) const = default;
};

struct Trajectory {
  std::string stay_id;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  bool operator==(const Trajectory&) const = default;
};

enum class Split { kTrain, kValidation, kTest };

std::string to_string(Split split);
Split parse_split(std::string_view text);

struct Dataset {
  Schema schema;
  Split split = Split::kTrain;
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  std::size_t num_transitions() const;
  std::size_t max_length() const;

  // Checks every documented invariant; throws SchemaError / InvalidInput.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

// Flattened view: transition j of trajectory n lives at offsets[n] + j.
std::vector<std::size_t> transition_offsets(const Dataset& dataset);

// JSON Lines: optional header {"schema": [...], "split": "..."} followed by
// one object per transition {"stay_id","t","state","action","reward"}.
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
void write_dataset(const Dataset& dataset, std::ostream& out);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace soda
