#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "soda/objective.hpp"
#include "soda/policy.hpp"

namespace soda::testing {

inline std::vector<double*> parameter_pointers(PolicyParams& p) {
  std::vector<double*> out;
  auto add = [&](double* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(data + i);
  };
  add(p.w1.data(), p.w1.size());
  add(p.b1.data(), p.b1.size());
  add(p.w2.data(), p.w2.size());
  add(p.b2.data(), p.b2.size());
  add(p.w3.data(), p.w3.size());
  add(p.b3.data(), p.b3.size());
  return out;
}

// D=6 toy problem: random states, masks that always contain the taken
// action, and a random behaviour distribution renormalised on each mask.
inline Batch toy_batch(std::size_t n_states, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<int> act(0, kNumActions - 1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<StateVector> states;
  std::vector<ActionId> actions;
  std::vector<SafetyMask> masks;
  std::vector<ActionDistribution> behavior;
  for (std::size_t i = 0; i < n_states; ++i) {
    StateVector s(dim);
    for (double& x : s) x = g(rng);
    states.push_back(s);
    const ActionId a = act(rng);
    actions.push_back(a);
    std::uint32_t bits = 1u << a;
    for (int k = 0; k < 4; ++k) bits |= 1u << act(rng);
    masks.push_back(i == 0 ? SafetyMask::all() : SafetyMask::from_bits(bits));
    ActionDistribution b;
    double total = 0;
    for (double& x : b) total += (x = u(rng));
    for (double& x : b) x /= total;
    behavior.push_back(b);
  }
  return make_batch(states, actions, masks, behavior);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of total_objective against objective_and_gradient.
// Relative error |a - n| / max(|a|, |n|, floor); gradients smaller than
// `floor` are compared absolutely.
inline GradCheck check_gradients(std::vector<PolicyParams> policies, const Batch& batch,
                                 const ObjectiveSettings& settings, double step = 1e-5, double floor = 1e-6) {
  std::vector<PolicyParams> grads;
  objective_and_gradient(policies, batch, settings, grads);
  GradCheck out;
  for (std::size_t k = 0; k < policies.size(); ++k) {
    auto ptrs = parameter_pointers(policies[k]);
    auto gptrs = parameter_pointers(grads[k]);
    for (std::size_t j = 0; j < ptrs.size(); ++j) {
      const double saved = *ptrs[j];
      *ptrs[j] = saved + step;
      const double up = total_objective(policies, batch, settings).total;
      *ptrs[j] = saved - step;
      const double down = total_objective(policies, batch, settings).total;
      *ptrs[j] = saved;
      const double numeric = (up - down) / (2 * step);
      const double analytic = *gptrs[j];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace soda::testing
