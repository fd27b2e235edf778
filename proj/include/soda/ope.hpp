#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "soda/behavior.hpp"
#include "soda/dataset.hpp"
#include "soda/kv_config.hpp"
#include "soda/policy.hpp"

namespace soda {

struct EvalConfig {
  double gamma = 0.99;
  double ess_threshold = 50.0;
  double unseen_prob_threshold = 0.01;

  void validate() const;
  static EvalConfig from_kv(const KeyValueFile& kv);
  KeyValueFile to_kv() const;
};

// rho_t = prod_{i<=t} target_i / behavior_i. Behaviour probabilities below
// 1e-8 are clamped to 1e-8 and counted in `clamped`.
std::vector<double> importance_weights(std::span<const double> target_taken,
                                       std::span<const double> behavior_taken, std::size_t* clamped = nullptr);

struct CwpdisResult {
  double value = 0.0;
  std::vector<double> weight_sums;  // sum_n rho_nt over trajectories alive at t
  std::size_t degenerate_steps = 0; // steps whose weight sum was zero
};

// sum_t gamma^t (sum_n r_nt rho_nt) / (sum_n rho_nt), t = 1..max T_n, summing
// only over trajectories with T_n >= t. `weights` and `rewards` are ragged
// with one row per trajectory.
CwpdisResult cwpdis(const std::vector<std::vector<double>>& weights,
                    const std::vector<std::vector<double>>& rewards, double gamma);

// Kish effective sample size (sum w)^2 / sum w^2; 0 (with a warning) when
// every weight is zero.
double ess(std::span<const double> final_weights);

// Mean over trajectories of sum_t gamma^t r_nt.
double empirical_behavior_value(const Dataset& dataset, double gamma);

struct OPEResult {
  double value = 0.0;
  double ess = 0.0;
  std::vector<double> per_t_weight_sums;
  bool kept = false;
  std::size_t unseen_action_count = 0;
  double ce_vs_behavior = 0.0;
  double symkl_vs_behavior = 0.0;
  std::size_t clamped_behavior = 0;
  std::size_t degenerate_steps = 0;
};

// Target distribution for the transition at flat index i.
using TargetPolicy = std::function<ActionDistribution(std::size_t flat_index, const Transition& tr)>;

// Value/ESS of an arbitrary target against the tabulated behaviour. CE and
// symKL use the full action set; no unseen actions are counted.
OPEResult evaluate_target(const Dataset& dataset, const BehaviorTable& behavior, const TargetPolicy& target,
                          const EvalConfig& config);

// Deployed distributions of every policy at every transition, K x N.
std::vector<std::vector<ActionDistribution>> deployed_distributions(const PolicyCollection& collection,
                                                                    const Dataset& dataset,
                                                                    const BehaviorTable& behavior);

struct CollectionEvaluation {
  std::vector<OPEResult> results;
  // Mean per-state symKL between policies i and j (full matrix, zero diagonal).
  std::vector<std::vector<double>> pairwise_symkl;
  // Mean over pairs of kept policies; empty when fewer than two are kept.
  std::optional<double> kept_pairwise_symkl;

  std::size_t kept_count() const;
  // Mean symKL from kept policy i to the other kept policies.
  std::optional<double> kept_pairwise_for(std::size_t i) const;
};

// Full metric suite for each policy of a collection on `dataset`.
// Masks use the collection's epsilon; the unseen-action count flags
// (state, action) pairs outside that mask where the deployed policy puts
// more than `unseen_prob_threshold` probability.
CollectionEvaluation evaluate_collection(const PolicyCollection& collection, const Dataset& dataset,
                                         const BehaviorTable& behavior, const EvalConfig& config);

}  // namespace soda
