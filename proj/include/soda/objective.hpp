#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soda/behavior.hpp"
#include "soda/policy.hpp"

namespace soda {

// Probabilities are clamped below at this value inside every log term.
inline constexpr double kProbFloor = 1e-8;

enum class QualityKind { kCrossEntropy, kSymKL, kNone };

std::string to_string(QualityKind kind);
QualityKind parse_quality(std::string_view text);

struct LossBreakdown {
  double quality = 0.0;
  double diversity = 0.0;
  double l2 = 0.0;  // already multiplied by the L2 coefficient
  double total = 0.0;
  // Largest probability any policy puts on an action outside its mask.
  double masked_mass = 0.0;
};

struct ObjectiveSettings {
  QualityKind quality = QualityKind::kSymKL;
  double lambda = 0.4;
  bool use_diversity = true;
  double l2_coeff = 1e-6;
};

// States the objective is averaged over, with everything it needs per state.
// `masks` is the support the policies are restricted to (all actions when
// training without the safety mask); `behavior` holds the behaviour
// distribution already renormalised over that support.
struct Batch {
  RowMatrix states;
  std::vector<ActionId> actions;
  std::vector<SafetyMask> masks;
  std::vector<ActionDistribution> behavior;

  std::size_t size() const { return actions.size(); }
};

// Builds a batch, applying each mask to the raw behaviour distribution.
Batch make_batch(const std::vector<StateVector>& states, std::vector<ActionId> actions,
                 std::vector<SafetyMask> masks, const std::vector<ActionDistribution>& raw_behavior);

// KL(p || q) over the support, with both arguments clamped at kProbFloor
// inside the logs.
double kl_divergence(const ActionDistribution& p, const ActionDistribution& q,
                     const SafetyMask& support = SafetyMask::all());
// 0.5 KL(p||q) + 0.5 KL(q||p).
double sym_kl(const ActionDistribution& p, const ActionDistribution& q,
              const SafetyMask& support = SafetyMask::all());

// Softmax over the allowed logits of every batch state (B x 20); exactly
// zero outside each state's mask.
RowMatrix masked_probs(const PolicyParams& params, const Batch& batch);

// (1/K) sum_i mean_t -ln max(q_i(a_t|s_t), 1e-8). Taken actions outside the
// mask contribute -ln(1e-8); their number is reported through `masked_taken`.
double quality_loss_ce(std::span<const PolicyParams> policies, const Batch& batch,
                       std::size_t* masked_taken = nullptr);
// (1/K) sum_i mean_s symKL(behaviour(s), q_i(s)).
double quality_loss_symkl(std::span<const PolicyParams> policies, const Batch& batch);
// mean_s symKL(q_i(s), q_j(s)).
double pairwise_symkl(const PolicyParams& a, const PolicyParams& b, const Batch& batch);
// 2/(K(K-1)) sum_{i<j} pairwise_symkl(i, j); 0 (with a warning) for K < 2.
double diversity_loss(std::span<const PolicyParams> policies, const Batch& batch);

// total = quality - lambda * diversity + l2_coeff * sum_i ||theta_i||^2.
// With use_diversity off the diversity term is still reported but not
// subtracted.
LossBreakdown total_objective(std::span<const PolicyParams> policies, const Batch& batch,
                              const ObjectiveSettings& settings);

// Same value as total_objective, plus exact gradients of `total` with
// respect to every parameter of every policy (resized to match).
LossBreakdown objective_and_gradient(std::span<const PolicyParams> policies, const Batch& batch,
                                     const ObjectiveSettings& settings, std::vector<PolicyParams>& grads);

}  // namespace soda
