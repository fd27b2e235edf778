#include "soda/objective.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>

#include "soda/error.hpp"
#include "soda/log.hpp"

namespace soda {

namespace {

const double kLogFloor = std::log(kProbFloor);

inline double clamped_log(double p) { return p > kProbFloor ? std::log(p) : kLogFloor; }

struct ForwardCache {
  RowMatrix x, a1, h1, a2, h2, q;
};

ForwardCache run_forward(const PolicyParams& p, const Batch& batch) {
  ForwardCache c;
  c.x = p.standardize(batch.states);
  c.a1 = (c.x * p.w1.transpose()).rowwise() + p.b1.transpose();
  c.h1 = c.a1.cwiseMax(0.0);
  c.a2 = (c.h1 * p.w2.transpose()).rowwise() + p.b2.transpose();
  c.h2 = c.a2.cwiseMax(0.0);
  RowMatrix z = (c.h2 * p.w3.transpose()).rowwise() + p.b3.transpose();
  c.q = RowMatrix::Zero(z.rows(), kNumActions);
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const SafetyMask& mask = batch.masks[static_cast<std::size_t>(s)];
    double m = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kNumActions; ++a) {
      if (mask.allows(a)) m = std::max(m, z(s, a));
    }
    double sum = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      if (mask.allows(a)) {
        c.q(s, a) = std::exp(z(s, a) - m);
        sum += c.q(s, a);
      }
    }
    c.q.row(s) /= sum;
  }
  return c;
}

void check_batch(std::span<const PolicyParams> policies, const Batch& batch) {
  const auto b = batch.size();
  if (batch.masks.size() != b || batch.behavior.size() != b || static_cast<std::size_t>(batch.states.rows()) != b) {
    throw InvalidInput("objective: batch fields have inconsistent sizes");
  }
  if (b == 0) throw InvalidInput("objective: empty batch");
  for (const auto& p : policies) {
    if (p.input_dim() != batch.states.cols()) throw InvalidInput("objective: state dimension mismatch");
  }
}

// Value of symKL(p, q) over `mask` and, optionally, accumulation of
// scale * d/dq and scale * d/dp into the gradient rows.
template <class RowP, class RowQ>
double sym_kl_rows(const RowP& p, const RowQ& q, const SafetyMask& mask, double scale, double* dp, double* dq) {
  double value = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!mask.allows(a)) continue;
    const double pa = p[a], qa = q[a];
    const double lp = clamped_log(pa), lq = clamped_log(qa);
    value += 0.5 * pa * (lp - lq) + 0.5 * qa * (lq - lp);
    if (dq) {
      double g = 0.5 * (lq - lp + (qa > kProbFloor ? 1.0 : 0.0));
      if (qa > kProbFloor) g -= 0.5 * pa / qa;
      dq[a] += scale * g;
    }
    if (dp) {
      double g = 0.5 * (lp - lq + (pa > kProbFloor ? 1.0 : 0.0));
      if (pa > kProbFloor) g -= 0.5 * qa / pa;
      dp[a] += scale * g;
    }
  }
  return value;
}

void backprop(const PolicyParams& p, const ForwardCache& c, const Batch& batch, const RowMatrix& dq,
              PolicyParams& grad) {
  const Eigen::Index b = c.q.rows();
  RowMatrix dz = RowMatrix::Zero(b, kNumActions);
  for (Eigen::Index s = 0; s < b; ++s) {
    const SafetyMask& mask = batch.masks[static_cast<std::size_t>(s)];
    double inner = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      if (mask.allows(a)) inner += c.q(s, a) * dq(s, a);
    }
    for (int a = 0; a < kNumActions; ++a) {
      if (mask.allows(a)) dz(s, a) = c.q(s, a) * (dq(s, a) - inner);
    }
  }
  grad.w3.noalias() += dz.transpose() * c.h2;
  grad.b3 += dz.colwise().sum().transpose();
  RowMatrix d2 = (dz * p.w3).cwiseProduct((c.a2.array() > 0.0).cast<double>().matrix());
  grad.w2.noalias() += d2.transpose() * c.h1;
  grad.b2 += d2.colwise().sum().transpose();
  RowMatrix d1 = (d2 * p.w2).cwiseProduct((c.a1.array() > 0.0).cast<double>().matrix());
  grad.w1.noalias() += d1.transpose() * c.x;
  grad.b1 += d1.colwise().sum().transpose();
}

LossBreakdown evaluate(std::span<const PolicyParams> policies, const Batch& batch,
                       const ObjectiveSettings& settings, std::vector<PolicyParams>* grads) {
  check_batch(policies, batch);
  const std::size_t k = policies.size();
  if (k == 0) throw InvalidInput("objective: empty policy collection");
  const std::size_t b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);

  std::vector<ForwardCache> caches;
  caches.reserve(k);
  for (const auto& p : policies) caches.push_back(run_forward(p, batch));

  LossBreakdown out;
  for (const auto& c : caches) {
    for (std::size_t s = 0; s < b; ++s) {
      for (int a = 0; a < kNumActions; ++a) {
        if (!batch.masks[s].allows(a)) out.masked_mass = std::max(out.masked_mass, c.q(static_cast<Eigen::Index>(s), a));
      }
    }
  }

  std::vector<RowMatrix> dq;
  if (grads) dq.assign(k, RowMatrix::Zero(static_cast<Eigen::Index>(b), kNumActions));

  const double q_scale = inv_b / static_cast<double>(k);
  if (settings.quality == QualityKind::kCrossEntropy) {
    std::size_t masked_taken = 0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t s = 0; s < b; ++s) {
        const ActionId a = batch.actions[s];
        const double qa = caches[i].q(static_cast<Eigen::Index>(s), a);
        if (!batch.masks[s].allows(a)) ++masked_taken;
        out.quality -= q_scale * clamped_log(qa);
        if (grads && qa > kProbFloor) dq[i](static_cast<Eigen::Index>(s), a) -= q_scale / qa;
      }
    }
    if (masked_taken > 0 && grads) {
      log_info("objective: " + std::to_string(masked_taken / k) + " taken actions outside the safety mask");
    }
  } else if (settings.quality == QualityKind::kSymKL) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t s = 0; s < b; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        double* g = grads ? dq[i].row(si).data() : nullptr;
        out.quality +=
            q_scale * sym_kl_rows(batch.behavior[s], caches[i].q.row(si), batch.masks[s], q_scale, nullptr, g);
      }
    }
  }

  if (k >= 2) {
    const double pair_scale = 2.0 / (static_cast<double>(k) * static_cast<double>(k - 1)) * inv_b;
    const double grad_scale = settings.use_diversity ? -settings.lambda * pair_scale : 0.0;
    const bool want_grad = grads && settings.use_diversity && settings.lambda != 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        for (std::size_t s = 0; s < b; ++s) {
          const auto si = static_cast<Eigen::Index>(s);
          out.diversity += pair_scale * sym_kl_rows(caches[i].q.row(si), caches[j].q.row(si), batch.masks[s],
                                                    grad_scale, want_grad ? dq[i].row(si).data() : nullptr,
                                                    want_grad ? dq[j].row(si).data() : nullptr);
        }
      }
    }
  }

  double norm = 0.0;
  for (const auto& p : policies) norm += p.squared_norm();
  out.l2 = settings.l2_coeff * norm;
  out.total = out.quality + out.l2 - (settings.use_diversity ? settings.lambda * out.diversity : 0.0);

  if (grads) {
    grads->clear();
    grads->reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      PolicyParams g = policies[i].zeros_like();
      backprop(policies[i], caches[i], batch, dq[i], g);
      const double c = 2.0 * settings.l2_coeff;
      g.w1 += c * policies[i].w1;
      g.w2 += c * policies[i].w2;
      g.w3 += c * policies[i].w3;
      g.b1 += c * policies[i].b1;
      g.b2 += c * policies[i].b2;
      g.b3 += c * policies[i].b3;
      grads->push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace

std::string to_string(QualityKind kind) {
  switch (kind) {
    case QualityKind::kCrossEntropy: return "ce";
    case QualityKind::kSymKL: return "symkl";
    case QualityKind::kNone: return "none";
  }
  return "none";
}

QualityKind parse_quality(std::string_view text) {
  std::string s(text);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "ce" || s == "cross-entropy" || s == "crossentropy") return QualityKind::kCrossEntropy;
  if (s == "symkl" || s == "sym-kl") return QualityKind::kSymKL;
  if (s == "none") return QualityKind::kNone;
  throw InvalidInput("unknown quality kind '" + std::string(text) + "' (expected ce, symkl or none)");
}

Batch make_batch(const std::vector<StateVector>& states, std::vector<ActionId> actions,
                 std::vector<SafetyMask> masks, const std::vector<ActionDistribution>& raw_behavior) {
  const std::size_t b = states.size();
  if (actions.size() != b || masks.size() != b || raw_behavior.size() != b) {
    throw InvalidInput("make_batch: inconsistent sizes");
  }
  Batch batch;
  const auto d = b ? static_cast<Eigen::Index>(states.front().size()) : 0;
  batch.states.resize(static_cast<Eigen::Index>(b), d);
  batch.behavior.resize(b);
  for (std::size_t s = 0; s < b; ++s) {
    if (static_cast<Eigen::Index>(states[s].size()) != d) throw InvalidInput("make_batch: ragged states");
    for (Eigen::Index f = 0; f < d; ++f) batch.states(static_cast<Eigen::Index>(s), f) = states[s][f];
    batch.behavior[s] = apply_mask(raw_behavior[s], masks[s]);
  }
  batch.actions = std::move(actions);
  batch.masks = std::move(masks);
  return batch;
}

double kl_divergence(const ActionDistribution& p, const ActionDistribution& q, const SafetyMask& support) {
  double v = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (support.allows(a)) v += p[a] * (clamped_log(p[a]) - clamped_log(q[a]));
  }
  return v;
}

double sym_kl(const ActionDistribution& p, const ActionDistribution& q, const SafetyMask& support) {
  return sym_kl_rows(p, q, support, 0.0, nullptr, nullptr);
}

RowMatrix masked_probs(const PolicyParams& params, const Batch& batch) {
  return run_forward(params, batch).q;
}

double quality_loss_ce(std::span<const PolicyParams> policies, const Batch& batch, std::size_t* masked_taken) {
  check_batch(policies, batch);
  double loss = 0.0;
  std::size_t masked = 0;
  for (const auto& p : policies) {
    RowMatrix q = masked_probs(p, batch);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const ActionId a = batch.actions[s];
      if (!batch.masks[s].allows(a)) ++masked;
      loss -= clamped_log(q(static_cast<Eigen::Index>(s), a));
    }
  }
  if (masked_taken) *masked_taken = policies.empty() ? 0 : masked / policies.size();
  return loss / static_cast<double>(batch.size() * policies.size());
}

double quality_loss_symkl(std::span<const PolicyParams> policies, const Batch& batch) {
  check_batch(policies, batch);
  double loss = 0.0;
  for (const auto& p : policies) {
    RowMatrix q = masked_probs(p, batch);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      loss += sym_kl_rows(batch.behavior[s], q.row(static_cast<Eigen::Index>(s)), batch.masks[s], 0.0, nullptr,
                          nullptr);
    }
  }
  return loss / static_cast<double>(batch.size() * policies.size());
}

double pairwise_symkl(const PolicyParams& a, const PolicyParams& b, const Batch& batch) {
  std::array<PolicyParams, 2> pair{a, b};
  check_batch(pair, batch);
  RowMatrix qa = masked_probs(a, batch);
  RowMatrix qb = masked_probs(b, batch);
  double v = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    v += sym_kl_rows(qa.row(si), qb.row(si), batch.masks[s], 0.0, nullptr, nullptr);
  }
  return v / static_cast<double>(batch.size());
}

double diversity_loss(std::span<const PolicyParams> policies, const Batch& batch) {
  const std::size_t k = policies.size();
  if (k < 2) {
    log_warning("diversity loss needs at least two policies; returning 0");
    return 0.0;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) sum += pairwise_symkl(policies[i], policies[j], batch);
  }
  return 2.0 * sum / (static_cast<double>(k) * static_cast<double>(k - 1));
}

LossBreakdown total_objective(std::span<const PolicyParams> policies, const Batch& batch,
                              const ObjectiveSettings& settings) {
  return evaluate(policies, batch, settings, nullptr);
}

LossBreakdown objective_and_gradient(std::span<const PolicyParams> policies, const Batch& batch,
                                     const ObjectiveSettings& settings, std::vector<PolicyParams>& grads) {
  return evaluate(policies, batch, settings, &grads);
}

}  // namespace soda
