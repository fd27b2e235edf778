#include "soda/ope.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soda/error.hpp"
#include "soda/log.hpp"
#include "soda/objective.hpp"

namespace soda {

namespace {

constexpr std::size_t kChunkRows = 4096;

double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }

struct FlatInputs {
  const Dataset& dataset;
  const std::vector<std::size_t>& offsets;
  const BehaviorTable& behavior;
};

// Value, ESS, CE and symKL to behaviour for one target given per-transition
// distributions. `support` (if set) restricts the symKL comparison and
// renormalises the behaviour; `unseen` (if set) is the mask the unseen-action
// count is taken against.
OPEResult evaluate_flat(const FlatInputs& in, const std::vector<ActionDistribution>& targets,
                        const std::vector<SafetyMask>* support, const std::vector<SafetyMask>* unseen,
                        const EvalConfig& config) {
  const Dataset& data = in.dataset;
  OPEResult out;
  std::vector<std::vector<double>> weights(data.size()), rewards(data.size());
  std::vector<double> final_weights;
  final_weights.reserve(data.size());
  double ce_sum = 0.0, symkl_sum = 0.0;
  std::size_t n_transitions = 0;

  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& traj = data.trajectories[n];
    std::vector<double> target_taken(traj.size()), behavior_taken(traj.size());
    rewards[n].resize(traj.size());
    for (std::size_t j = 0; j < traj.size(); ++j) {
      std::size_t i = in.offsets[n] + j;
      const auto& tr = traj.transitions[j];
      const ActionDistribution& pi = targets[i];
      ActionDistribution beh = in.behavior.probs(i);
      target_taken[j] = pi[tr.action];
      behavior_taken[j] = beh[tr.action];
      rewards[n][j] = tr.reward;

      ce_sum += -clamped_log(pi[tr.action]);
      if (support) {
        const SafetyMask& m = (*support)[i];
        symkl_sum += sym_kl(apply_mask(beh, m), pi, m);
      } else {
        symkl_sum += sym_kl(beh, pi);
      }
      if (unseen) {
        const SafetyMask& m = (*unseen)[i];
        for (int a = 0; a < kNumActions; ++a) {
          if (!m.allows(a) && pi[a] > config.unseen_prob_threshold) ++out.unseen_action_count;
        }
      }
      ++n_transitions;
    }
    weights[n] = importance_weights(target_taken, behavior_taken, &out.clamped_behavior);
    if (!weights[n].empty()) final_weights.push_back(weights[n].back());
  }

  if (out.clamped_behavior > 0) {
    log_warning(std::to_string(out.clamped_behavior) + " behaviour probabilities clamped to 1e-8");
  }
  auto cw = cwpdis(weights, rewards, config.gamma);
  out.value = cw.value;
  out.per_t_weight_sums = std::move(cw.weight_sums);
  out.degenerate_steps = cw.degenerate_steps;
  out.ess = ess(final_weights);
  out.kept = out.ess >= config.ess_threshold;
  if (n_transitions > 0) {
    out.ce_vs_behavior = ce_sum / static_cast<double>(n_transitions);
    out.symkl_vs_behavior = symkl_sum / static_cast<double>(n_transitions);
  }
  return out;
}

void check_inputs(const Dataset& dataset, const BehaviorTable& behavior) {
  if (dataset.empty()) throw InvalidInput("evaluation dataset is empty");
  if (behavior.size() != dataset.num_transitions()) {
    throw InvalidInput("behaviour table has " + std::to_string(behavior.size()) + " rows but dataset has " +
                       std::to_string(dataset.num_transitions()) + " transitions");
  }
}

}  // namespace

void EvalConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(ess_threshold > 0.0)) throw ConfigError("ess_threshold must be positive");
  if (!(unseen_prob_threshold > 0.0)) throw ConfigError("unseen_prob_threshold must be positive");
}

EvalConfig EvalConfig::from_kv(const KeyValueFile& kv) {
  EvalConfig c;
  c.gamma = kv.get_double("gamma", c.gamma);
  c.ess_threshold = kv.get_double("ess_threshold", c.ess_threshold);
  c.unseen_prob_threshold = kv.get_double("unseen_prob_threshold", c.unseen_prob_threshold);
  c.validate();
  return c;
}

KeyValueFile EvalConfig::to_kv() const {
  KeyValueFile kv;
  kv.set("gamma", format_number(gamma));
  kv.set("ess_threshold", format_number(ess_threshold));
  kv.set("unseen_prob_threshold", format_number(unseen_prob_threshold));
  return kv;
}

std::vector<double> importance_weights(std::span<const double> target_taken,
                                       std::span<const double> behavior_taken, std::size_t* clamped) {
  if (target_taken.size() != behavior_taken.size()) {
    throw InvalidInput("importance_weights: target and behaviour lengths differ");
  }
  std::vector<double> rho(target_taken.size());
  double running = 1.0;
  for (std::size_t t = 0; t < rho.size(); ++t) {
    double b = behavior_taken[t];
    if (!(b >= kProbFloor)) {
      b = kProbFloor;
      if (clamped) ++*clamped;
    }
    running *= target_taken[t] / b;
    rho[t] = running;
  }
  return rho;
}

CwpdisResult cwpdis(const std::vector<std::vector<double>>& weights,
                    const std::vector<std::vector<double>>& rewards, double gamma) {
  if (weights.size() != rewards.size()) throw InvalidInput("cwpdis: weights and rewards differ in count");
  std::size_t horizon = 0;
  for (std::size_t n = 0; n < weights.size(); ++n) {
    if (weights[n].size() != rewards[n].size()) throw InvalidInput("cwpdis: ragged row lengths differ");
    horizon = std::max(horizon, weights[n].size());
  }
  CwpdisResult out;
  out.weight_sums.assign(horizon, 0.0);
  std::vector<double> weighted(horizon, 0.0);
  for (std::size_t n = 0; n < weights.size(); ++n) {
    for (std::size_t t = 0; t < weights[n].size(); ++t) {
      out.weight_sums[t] += weights[n][t];
      weighted[t] += weights[n][t] * rewards[n][t];
    }
  }
  double discount = 1.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    discount *= gamma;
    if (out.weight_sums[t] > 0.0) {
      out.value += discount * weighted[t] / out.weight_sums[t];
    } else {
      ++out.degenerate_steps;
    }
  }
  return out;
}

double ess(std::span<const double> final_weights) {
  // Scaling by the largest weight keeps equal weights exact and avoids
  // overflow in the squares.
  double scale = 0.0;
  for (double w : final_weights) scale = std::max(scale, std::abs(w));
  double sum = 0.0, sum_sq = 0.0;
  if (scale > 0.0) {
    for (double w : final_weights) {
      const double x = w / scale;
      sum += x;
      sum_sq += x * x;
    }
  }
  if (!(sum_sq > 0.0)) {
    log_warning("ESS: every importance weight is zero");
    return 0.0;
  }
  return sum * sum / sum_sq;
}

double empirical_behavior_value(const Dataset& dataset, double gamma) {
  if (dataset.empty()) throw InvalidInput("empirical_behavior_value: dataset is empty");
  double total = 0.0;
  for (const auto& traj : dataset.trajectories) {
    double discount = 1.0, ret = 0.0;
    for (const auto& tr : traj.transitions) {
      discount *= gamma;
      ret += discount * tr.reward;
    }
    total += ret;
  }
  return total / static_cast<double>(dataset.size());
}

OPEResult evaluate_target(const Dataset& dataset, const BehaviorTable& behavior, const TargetPolicy& target,
                          const EvalConfig& config) {
  check_inputs(dataset, behavior);
  auto offsets = transition_offsets(dataset);
  std::vector<ActionDistribution> targets(dataset.num_transitions());
  for (std::size_t n = 0; n < dataset.size(); ++n) {
    const auto& traj = dataset.trajectories[n];
    for (std::size_t j = 0; j < traj.size(); ++j) {
      targets[offsets[n] + j] = target(offsets[n] + j, traj.transitions[j]);
    }
  }
  return evaluate_flat({dataset, offsets, behavior}, targets, nullptr, nullptr, config);
}

std::vector<std::vector<ActionDistribution>> deployed_distributions(const PolicyCollection& collection,
                                                                    const Dataset& dataset,
                                                                    const BehaviorTable& behavior) {
  check_inputs(dataset, behavior);
  std::vector<const StateVector*> states;
  states.reserve(dataset.num_transitions());
  for (const auto& traj : dataset.trajectories) {
    for (const auto& tr : traj.transitions) states.push_back(&tr.state);
  }
  const std::size_t N = states.size();
  const std::size_t D = collection.schema.size();
  std::vector<std::vector<ActionDistribution>> out(collection.size(), std::vector<ActionDistribution>(N));
  std::vector<SafetyMask> masks;
  if (collection.use_safety) {
    masks.reserve(N);
    for (std::size_t i = 0; i < N; ++i) masks.push_back(behavior.mask(i, collection.epsilon));
  }

  for (std::size_t start = 0; start < N; start += kChunkRows) {
    std::size_t rows = std::min(kChunkRows, N - start);
    RowMatrix chunk(rows, D);
    for (std::size_t r = 0; r < rows; ++r) {
      const StateVector& s = *states[start + r];
      if (s.size() != D) throw InvalidInput("state dimension does not match the policy schema");
      for (std::size_t d = 0; d < D; ++d) chunk(r, d) = s[d];
    }
    for (std::size_t k = 0; k < collection.size(); ++k) {
      RowMatrix logits = forward_logits_batch(collection.policies[k], chunk);
      for (std::size_t r = 0; r < rows; ++r) {
        auto p = softmax(std::span<const double>(logits.row(r).data(), kNumActions));
        ActionDistribution dist{};
        std::copy(p.begin(), p.end(), dist.begin());
        out[k][start + r] = collection.use_safety ? apply_mask(dist, masks[start + r]) : dist;
      }
    }
  }
  return out;
}

std::size_t CollectionEvaluation::kept_count() const {
  return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [](const auto& r) { return r.kept; }));
}

std::optional<double> CollectionEvaluation::kept_pairwise_for(std::size_t i) const {
  if (!results.at(i).kept || kept_count() < 2) return std::nullopt;
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t j = 0; j < results.size(); ++j) {
    if (j == i || !results[j].kept) continue;
    sum += pairwise_symkl[i][j];
    ++pairs;
  }
  return sum / pairs;
}

CollectionEvaluation evaluate_collection(const PolicyCollection& collection, const Dataset& dataset,
                                         const BehaviorTable& behavior, const EvalConfig& config) {
  config.validate();
  check_inputs(dataset, behavior);
  auto offsets = transition_offsets(dataset);
  const std::size_t N = dataset.num_transitions();
  std::vector<SafetyMask> masks;
  masks.reserve(N);
  for (std::size_t i = 0; i < N; ++i) masks.push_back(behavior.mask(i, collection.epsilon));

  auto dists = deployed_distributions(collection, dataset, behavior);
  CollectionEvaluation eval;
  const std::vector<SafetyMask>* support = collection.use_safety ? &masks : nullptr;
  for (std::size_t k = 0; k < collection.size(); ++k) {
    eval.results.push_back(evaluate_flat({dataset, offsets, behavior}, dists[k], support, &masks, config));
  }

  const std::size_t K = collection.size();
  eval.pairwise_symkl.assign(K, std::vector<double>(K, 0.0));
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      double sum = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        sum += support ? sym_kl(dists[a][i], dists[b][i], masks[i]) : sym_kl(dists[a][i], dists[b][i]);
      }
      eval.pairwise_symkl[a][b] = eval.pairwise_symkl[b][a] = N ? sum / static_cast<double>(N) : 0.0;
    }
  }

  double sum = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      if (eval.results[a].kept && eval.results[b].kept) {
        sum += eval.pairwise_symkl[a][b];
        ++pairs;
      }
    }
  }
  if (pairs > 0) eval.kept_pairwise_symkl = sum / pairs;
  return eval;
}

}  // namespace soda
