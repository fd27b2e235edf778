#include "soda/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "soda/error.hpp"
#include "soda/random.hpp"

namespace soda {

namespace {

constexpr double kNoFloor = -std::numeric_limits<double>::infinity();

std::vector<double> parse_row(const std::string& line, const std::string& where) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<double> row;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      row.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError(where + ": bad number '" + token + "'");
    }
  }
  return row;
}

std::vector<std::vector<double>> parse_table(const KeyValueFile& kv, const std::string& name, std::size_t rows,
                                             std::size_t cols) {
  std::string where = kv.source() + " [" + name + "]";
  const auto& lines = kv.block(name);
  if (lines.size() != rows) {
    throw ConfigError(where + ": expected " + std::to_string(rows) + " rows, got " + std::to_string(lines.size()));
  }
  std::vector<std::vector<double>> table;
  for (const auto& line : lines) {
    auto row = parse_row(line, where);
    if (row.size() != cols) {
      throw ConfigError(where + ": expected " + std::to_string(cols) + " columns, got " +
                        std::to_string(row.size()));
    }
    table.push_back(std::move(row));
  }
  return table;
}

void read_vector(const KeyValueFile& kv, const std::string& key, std::vector<double>& target) {
  if (auto v = kv.get_doubles(key)) {
    if (v->size() != target.size()) {
      throw ConfigError(kv.source() + ": '" + key + "' needs " + std::to_string(target.size()) + " values");
    }
    target = *v;
  }
}

std::array<double, kNumActions> softmax_array(const std::array<double, kNumActions>& logits) {
  double hi = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumActions> out{};
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    out[a] = std::exp(logits[a] - hi);
    sum += out[a];
  }
  for (double& p : out) p /= sum;
  return out;
}

ActionId sample_action(const ActionDistribution& probs, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  for (int a = kNumActions - 1; a >= 0; --a) {
    if (probs[a] > 0.0) return a;
  }
  return 0;
}

StateVector initial_state(const SimConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  StateVector s(c.state_dim);
  double offset = 0.0;
  if (!c.type_offsets.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, c.type_offsets.size() - 1);
    offset = c.type_offsets[pick(rng)];
  }
  for (int d = 0; d < c.state_dim; ++d) {
    double shift = d == c.type_coordinate ? offset : 0.0;
    s[d] = std::max(c.floor[d], c.mean[d] + shift + c.init_std[d] * normal(rng));
  }
  return s;
}

StateVector step(const SimConfig& c, const StateVector& s, ActionId a, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  StateVector next = expected_next_state(c, s, a);
  for (int d = 0; d < c.state_dim; ++d) next[d] = std::max(c.floor[d], next[d] + c.noise[d] * normal(rng));
  return next;
}

double step_reward(const SimConfig& c, const StateVector& next) {
  return compute_reward(next[kSimMap], next[kSimUrine], c.reward);
}

template <typename Visit>
void rollout(const SimConfig& c, const GroundTruthPolicy& policy, std::uint64_t stream_seed, Visit&& visit) {
  std::mt19937_64 rng(stream_seed);
  StateVector s = initial_state(c, rng);
  for (int t = 1; t <= c.horizon; ++t) {
    ActionId a = sample_action(policy(s), rng);
    StateVector next = step(c, s, a, rng);
    visit(t, s, a, step_reward(c, next));
    s = std::move(next);
  }
}

}  // namespace

std::string to_string(Style style) {
  switch (style) {
    case Style::kFluidHeavy: return "fluid-heavy";
    case Style::kVasoHeavy: return "vaso-heavy";
    case Style::kMixed: return "mixed";
  }
  return "unknown";
}

SimConfig SimConfig::defaults(int state_dim) {
  if (state_dim < 5) throw ConfigError("simulator state_dim must be at least 5");
  SimConfig c;
  const auto D = static_cast<std::size_t>(state_dim);
  c.state_dim = state_dim;
  c.mean.assign(D, 0.0);
  c.init_std.assign(D, 1.0);
  c.noise.assign(D, 0.5);
  c.floor.assign(D, kNoFloor);
  c.drift.assign(D, std::vector<double>(D, 0.0));

  c.mean[kSimMap] = 74.0, c.init_std[kSimMap] = 6.0, c.noise[kSimMap] = 3.0, c.floor[kSimMap] = 20.0;
  c.drift[kSimMap][kSimMap] = -0.2;
  c.mean[kSimUrine] = 25.0, c.init_std[kSimUrine] = 10.0, c.noise[kSimUrine] = 8.0, c.floor[kSimUrine] = 0.0;
  c.drift[kSimUrine][kSimUrine] = -0.3;
  c.mean[kSimLactate] = 2.0, c.init_std[kSimLactate] = 0.7, c.noise[kSimLactate] = 0.2,
  c.floor[kSimLactate] = 0.1;
  c.drift[kSimLactate][kSimLactate] = -0.1;
  c.drift[kSimLactate][kSimMap] = -0.01;
  c.mean[kSimHeartRate] = 90.0, c.init_std[kSimHeartRate] = 10.0, c.noise[kSimHeartRate] = 3.0,
  c.floor[kSimHeartRate] = 30.0;
  c.drift[kSimHeartRate][kSimHeartRate] = -0.2;
  // x4 is a slowly varying patient covariate that steers the style choice.
  c.drift[4][4] = 0.0;
  c.noise[4] = 0.02;
  c.init_std[4] = 0.2;
  c.type_offsets = {-2.0, 0.0, 2.0};
  // Remaining coordinates are noisy lagged readouts of the others.
  const double readout_gain[] = {0.1, 0.05, 0.8, 0.05, 0.5};
  for (std::size_t d = 5; d < D; ++d) {
    const std::size_t source = (d - 5) % 5;
    c.drift[d][d] = -0.5;
    c.drift[d][source] = readout_gain[source];
    c.noise[d] = 0.2;
    c.init_std[d] = 0.5;
  }

  const double fluid_map[] = {0.0, 4.0, 8.0, 10.0};
  const double fluid_urine[] = {0.0, 5.0, 10.0, 15.0};
  const double vaso_map[] = {0.0, 4.0, 8.0, 10.0, 12.0};
  const double vaso_hr[] = {0.0, 1.0, 2.0, 3.0, 4.0};
  c.action_effects.assign(kNumActions, std::vector<double>(D, 0.0));
  for (int a = 0; a < kNumActions; ++a) {
    auto [v, f] = action_components(a);
    c.action_effects[a][kSimMap] = fluid_map[f] + vaso_map[v];
    c.action_effects[a][kSimUrine] = fluid_urine[f];
    c.action_effects[a][kSimHeartRate] = vaso_hr[v];
  }

  // Each style has one preferred treatment; the switch away from no
  // treatment happens within about a mmHg.
  auto set_style = [&](Style s, ActionId treatment) {
    auto& base = c.style_base[static_cast<int>(s)];
    auto& slope = c.style_slope[static_cast<int>(s)];
    base.fill(-10.0);
    slope.fill(0.0);
    base[0] = 10.0;
    slope[0] = -20.0;
    base[treatment] = 0.0;
    slope[treatment] = 20.0;
  };
  set_style(Style::kFluidHeavy, make_action(0, 2));
  set_style(Style::kVasoHeavy, make_action(2, 0));
  set_style(Style::kMixed, make_action(1, 1));

  c.style_bias.fill(0.0);
  for (auto& coef : c.style_coef) coef.assign(D, 0.0);
  c.style_coef[static_cast<int>(Style::kFluidHeavy)][4] = 3.0;
  c.style_coef[static_cast<int>(Style::kVasoHeavy)][4] = -3.0;
  return c;
}

SimConfig SimConfig::from_kv(const KeyValueFile& kv) {
  auto D = static_cast<int>(kv.get_int("state_dim", 10));
  SimConfig c = defaults(D);
  c.horizon = static_cast<int>(kv.get_int("horizon", c.horizon));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  read_vector(kv, "mean", c.mean);
  read_vector(kv, "init_std", c.init_std);
  read_vector(kv, "noise", c.noise);
  read_vector(kv, "floor", c.floor);
  c.type_coordinate = static_cast<int>(kv.get_int("type_coordinate", c.type_coordinate));
  if (kv.contains("type_offsets")) c.type_offsets = kv.get_doubles("type_offsets").value_or(std::vector<double>{});
  if (auto diag = kv.get_doubles("drift_diagonal")) {
    if (diag->size() != static_cast<std::size_t>(D)) throw ConfigError(kv.source() + ": drift_diagonal size");
    for (int d = 0; d < D; ++d) c.drift[d].assign(D, 0.0), c.drift[d][d] = (*diag)[d];
  }
  if (kv.has_block("drift")) c.drift = parse_table(kv, "drift", D, D);
  if (kv.has_block("action_effects")) c.action_effects = parse_table(kv, "action_effects", kNumActions, D);
  c.sat_map = kv.get_double("sat_map", c.sat_map);
  c.sat_width = kv.get_double("sat_width", c.sat_width);
  c.severity_map = kv.get_double("severity_map", c.severity_map);
  c.severity_scale = kv.get_double("severity_scale", c.severity_scale);
  c.severity_max = kv.get_double("severity_max", c.severity_max);
  auto copy_styles = [&](const std::string& name, auto& target) {
    if (!kv.has_block(name)) return;
    auto t = parse_table(kv, name, kNumStyles, kNumActions);
    for (int s = 0; s < kNumStyles; ++s) std::copy(t[s].begin(), t[s].end(), target[s].begin());
  };
  copy_styles("style_base", c.style_base);
  copy_styles("style_slope", c.style_slope);
  if (kv.has_block("style_logits")) {
    auto t = parse_table(kv, "style_logits", kNumStyles, D + 1);
    for (int s = 0; s < kNumStyles; ++s) {
      c.style_bias[s] = t[s][0];
      c.style_coef[s].assign(t[s].begin() + 1, t[s].end());
    }
  }
  c.reward = RewardConfig::from_kv(kv);
  c.validate();
  return c;
}

SimConfig SimConfig::load(const std::filesystem::path& path) { return from_kv(KeyValueFile::load(path)); }

void SimConfig::validate() const {
  const auto D = static_cast<std::size_t>(state_dim);
  if (state_dim < 5) throw ConfigError("simulator state_dim must be at least 5");
  if (horizon < 1 || horizon > kMaxHours) throw ConfigError("simulator horizon must lie in [1, 72]");
  for (const auto* v : {&mean, &init_std, &noise, &floor}) {
    if (v->size() != D) throw ConfigError("simulator vectors must have state_dim entries");
  }
  for (std::size_t d = 0; d < D; ++d) {
    if (!(noise[d] >= 0.0) || !(init_std[d] >= 0.0)) throw ConfigError("noise scales must be non-negative");
  }
  if (drift.size() != D) throw ConfigError("drift must be state_dim x state_dim");
  for (const auto& row : drift) {
    if (row.size() != D) throw ConfigError("drift must be state_dim x state_dim");
  }
  if (action_effects.size() != kNumActions) throw ConfigError("action effects must cover all 20 actions");
  for (const auto& row : action_effects) {
    if (row.size() != D) throw ConfigError("each action effect needs state_dim entries");
  }
  for (const auto& coef : style_coef) {
    if (coef.size() != D) throw ConfigError("style logit coefficients need state_dim entries");
  }
  if (!(sat_width > 0.0) || !(severity_scale > 0.0) || !(severity_max >= 0.0)) {
    throw ConfigError("saturation width and severity scale must be positive");
  }
  if (!(floor[kSimMap] > 0.0)) throw ConfigError("the MAP floor must be positive");
  if (!type_offsets.empty() && (type_coordinate < 0 || type_coordinate >= state_dim)) {
    throw ConfigError("type_coordinate must index a state coordinate");
  }
  reward.validate();
}

Schema SimConfig::schema() const {
  std::vector<FeatureSpec> features = {
      {"MAP", "mmHg", FeatureKind::kContinuous},
      {"UrineOutput", "mL/h", FeatureKind::kContinuous},
      {"Lactate", "mmol/L", FeatureKind::kContinuous},
      {"HeartRate", "bpm", FeatureKind::kContinuous},
  };
  for (int d = 4; d < state_dim; ++d) features.push_back({"x" + std::to_string(d), "", FeatureKind::kContinuous});
  return Schema(std::move(features));
}

double SimConfig::severity(std::span<const double> state) const {
  return std::clamp((severity_map - state[kSimMap]) / severity_scale, 0.0, severity_max);
}

std::array<double, kNumStyles> style_weights(const SimConfig& config, std::span<const double> state) {
  std::array<double, kNumStyles> logits{};
  for (int s = 0; s < kNumStyles; ++s) {
    logits[s] = config.style_bias[s];
    for (int d = 0; d < config.state_dim; ++d) logits[s] += config.style_coef[s][d] * state[d];
  }
  double hi = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) sum += (l = std::exp(l - hi));
  for (double& l : logits) l /= sum;
  return logits;
}

ActionDistribution style_probs(const SimConfig& config, Style style, std::span<const double> state) {
  const int s = static_cast<int>(style);
  const double sev = config.severity(state);
  std::array<double, kNumActions> logits{};
  for (int a = 0; a < kNumActions; ++a) logits[a] = config.style_base[s][a] + sev * config.style_slope[s][a];
  return softmax_array(logits);
}

ActionDistribution true_behavior_probs(const SimConfig& config, std::span<const double> state) {
  auto w = style_weights(config, state);
  ActionDistribution out{};
  for (int s = 0; s < kNumStyles; ++s) {
    auto p = style_probs(config, static_cast<Style>(s), state);
    for (int a = 0; a < kNumActions; ++a) out[a] += w[s] * p[a];
  }
  return out;
}

GroundTruthPolicy behavior_policy(const SimConfig& config) {
  return [config](std::span<const double> s) { return true_behavior_probs(config, s); };
}

GroundTruthPolicy style_policy(const SimConfig& config, Style style) {
  return [config, style](std::span<const double> s) { return style_probs(config, style, s); };
}

StateVector expected_next_state(const SimConfig& c, std::span<const double> state, ActionId action) {
  if (state.size() != static_cast<std::size_t>(c.state_dim)) throw InvalidInput("simulator state has wrong size");
  const auto& effect = c.action_effects.at(static_cast<std::size_t>(action));
  const double sat = std::clamp((c.sat_map - state[kSimMap]) / c.sat_width, 0.0, 1.0);
  StateVector next(state.begin(), state.end());
  for (int i = 0; i < c.state_dim; ++i) {
    double drift = 0.0;
    for (int j = 0; j < c.state_dim; ++j) drift += c.drift[i][j] * (state[j] - c.mean[j]);
    next[i] += drift + sat * effect[i];
  }
  return next;
}

Dataset simulate_dataset(const SimConfig& config, std::size_t n_trajectories, std::uint64_t seed, Split split) {
  config.validate();
  Dataset data;
  data.schema = config.schema();
  data.split = split;
  data.trajectories.reserve(n_trajectories);
  auto policy = behavior_policy(config);
  for (std::size_t n = 0; n < n_trajectories; ++n) {
    Trajectory traj;
    char id[32];
    std::snprintf(id, sizeof(id), "sim-%06zu", n);
    traj.stay_id = id;
    traj.transitions.reserve(static_cast<std::size_t>(config.horizon));
    rollout(config, policy, derive_seed(seed, n), [&](int t, const StateVector& s, ActionId a, double r) {
      traj.transitions.push_back({t, s, a, r});
    });
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

McEstimate mc_value(const GroundTruthPolicy& policy, const SimConfig& config, std::size_t n_rollouts, double gamma,
                    std::uint64_t seed) {
  if (n_rollouts < 1) throw InvalidInput("mc_value needs at least one rollout");
  config.validate();
  // Welford accumulation of the discounted returns.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t n = 0; n < n_rollouts; ++n) {
    double ret = 0.0;
    rollout(config, policy, derive_seed(seed, n), [&](int t, const StateVector&, ActionId, double r) {
      ret += std::pow(gamma, t) * r;
    });
    double delta = ret - mean;
    mean += delta / static_cast<double>(n + 1);
    m2 += delta * (ret - mean);
  }
  McEstimate out;
  out.value = mean;
  out.rollouts = n_rollouts;
  if (n_rollouts > 1) {
    double var = m2 / static_cast<double>(n_rollouts - 1);
    out.standard_error = std::sqrt(var / static_cast<double>(n_rollouts));
  }
  return out;
}

}  // namespace soda
