#include "soda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "soda/error.hpp"
#include "soda/log.hpp"
#include "soda/policy_json.hpp"
#include "soda/random.hpp"

namespace soda {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Offset keeping shuffle streams apart from per-policy init streams.
constexpr std::uint64_t kShuffleStream = 1ULL << 32;

template <class F>
void for_each_block(PolicyParams& p, const PolicyParams& g, PolicyParams& m, PolicyParams& v, F&& f) {
  f(p.w1, g.w1, m.w1, v.w1);
  f(p.w2, g.w2, m.w2, v.w2);
  f(p.w3, g.w3, m.w3, v.w3);
  f(p.b1, g.b1, m.b1, v.b1);
  f(p.b2, g.b2, m.b2, v.b2);
  f(p.b3, g.b3, m.b3, v.b3);
}

struct FlatData {
  RowMatrix states;
  std::vector<ActionId> actions;
  std::vector<SafetyMask> masks;
  std::vector<ActionDistribution> behavior;  // masked
  std::vector<std::size_t> offsets;
};

FlatData flatten(const Dataset& dataset, const BehaviorTable& behavior, const TrainConfig& config) {
  const std::size_t n = dataset.num_transitions();
  if (behavior.size() != n) {
    throw InvalidInput("behaviour table has " + std::to_string(behavior.size()) + " rows but dataset has " +
                       std::to_string(n) + " transitions");
  }
  FlatData f;
  f.offsets = transition_offsets(dataset);
  const auto d = static_cast<Eigen::Index>(dataset.schema.size());
  f.states.resize(static_cast<Eigen::Index>(n), d);
  f.actions.reserve(n);
  f.masks.reserve(n);
  f.behavior.reserve(n);
  std::size_t i = 0;
  for (const auto& traj : dataset.trajectories) {
    for (const auto& tr : traj.transitions) {
      for (Eigen::Index c = 0; c < d; ++c) f.states(static_cast<Eigen::Index>(i), c) = tr.state[c];
      f.actions.push_back(tr.action);
      SafetyMask mask = config.use_safety ? behavior.mask(i, config.epsilon) : SafetyMask::all();
      f.behavior.push_back(apply_mask(behavior.probs(i), mask));
      f.masks.push_back(mask);
      ++i;
    }
  }
  return f;
}

Batch gather(const FlatData& f, const Dataset& dataset, std::span<const std::size_t> trajectories) {
  std::size_t rows = 0;
  for (auto n : trajectories) rows += dataset.trajectories[n].size();
  Batch b;
  b.states.resize(static_cast<Eigen::Index>(rows), f.states.cols());
  b.actions.reserve(rows);
  b.masks.reserve(rows);
  b.behavior.reserve(rows);
  Eigen::Index r = 0;
  for (auto n : trajectories) {
    const std::size_t start = f.offsets[n];
    const std::size_t len = dataset.trajectories[n].size();
    b.states.middleRows(r, static_cast<Eigen::Index>(len)) =
        f.states.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    r += static_cast<Eigen::Index>(len);
    for (std::size_t i = start; i < start + len; ++i) {
      b.actions.push_back(f.actions[i]);
      b.masks.push_back(f.masks[i]);
      b.behavior.push_back(f.behavior[i]);
    }
  }
  return b;
}

ordered_json loss_json(const LossBreakdown& l) {
  return {{"quality", l.quality}, {"diversity", l.diversity}, {"l2", l.l2}, {"total", l.total}};
}

LossBreakdown loss_from_json(const json& j) {
  LossBreakdown l;
  l.quality = j.at("quality").get<double>();
  l.diversity = j.at("diversity").get<double>();
  l.l2 = j.at("l2").get<double>();
  l.total = j.at("total").get<double>();
  return l;
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j = ordered_json::object();
  const KeyValueFile kv = c.to_kv();
  for (const auto& [k, v] : kv.values()) j[k] = v;
  return j;
}

TrainConfig config_from_json(const json& j) {
  KeyValueFile kv;
  for (const auto& [k, v] : j.items()) kv.set(k, v.get<std::string>());
  return TrainConfig::from_kv(kv);
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

bool same_run(const TrainConfig& a, const TrainConfig& b) {
  TrainConfig x = a, y = b;
  x.epochs = y.epochs = 0;
  return x.to_kv().values() == y.to_kv().values();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(l2_coeff >= 0.0)) throw ConfigError("l2_coeff must be >= 0");
  if (K < 1) throw ConfigError("K must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

ObjectiveSettings TrainConfig::objective() const {
  return {quality, lambda, use_diversity, l2_coeff};
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv, TrainConfig c) {
  c.lambda = kv.get_double("lambda", c.lambda);
  c.epsilon = kv.get_double("epsilon", c.epsilon);
  if (auto q = kv.get("quality")) {
    try {
      c.quality = parse_quality(*q);
    } catch (const InvalidInput& e) {
      throw ConfigError(kv.source() + ": " + e.what());
    }
  }
  c.use_safety = kv.get_bool("use_safety", c.use_safety);
  c.use_diversity = kv.get_bool("use_diversity", c.use_diversity);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.l2_coeff = kv.get_double("l2_coeff", c.l2_coeff);
  c.K = static_cast<int>(kv.get_int("K", c.K));
  c.hidden = static_cast<int>(kv.get_int("hidden", c.hidden));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.exclude_self = kv.get_bool("exclude_self", c.exclude_self);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv) { return from_kv(kv, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return from_kv(KeyValueFile::load(path)); }

KeyValueFile TrainConfig::to_kv() const {
  KeyValueFile kv;
  kv.set("lambda", format_number(lambda));
  kv.set("epsilon", format_number(epsilon));
  kv.set("quality", to_string(quality));
  kv.set("use_safety", use_safety ? "true" : "false");
  kv.set("use_diversity", use_diversity ? "true" : "false");
  kv.set("learning_rate", format_number(learning_rate));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("l2_coeff", format_number(l2_coeff));
  kv.set("K", std::to_string(K));
  kv.set("hidden", std::to_string(hidden));
  kv.set("epochs", std::to_string(epochs));
  kv.set("seed", std::to_string(seed));
  kv.set("exclude_self", exclude_self ? "true" : "false");
  return kv;
}

void AdamState::reset(const std::vector<PolicyParams>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.push_back(p.zeros_like());
    v.push_back(p.zeros_like());
  }
}

LossBreakdown grad_step(std::vector<PolicyParams>& policies, const Batch& batch, const ObjectiveSettings& settings,
                        double learning_rate, AdamState& adam) {
  if (adam.m.size() != policies.size()) adam.reset(policies);
  std::vector<PolicyParams> grads;
  LossBreakdown loss = objective_and_gradient(policies, batch, settings, grads);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw TrainingError("non-finite gradient for policy " + std::to_string(i) + " at step " +
                          std::to_string(adam.step + 1) + " (loss " + std::to_string(loss.total) + ")");
    }
  }
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < policies.size(); ++i) {
    for_each_block(policies[i], grads[i], adam.m[i], adam.v[i], [&](auto& p, const auto& g, auto& m, auto& v) {
      m = adam.beta1 * m + (1.0 - adam.beta1) * g;
      v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
      p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + adam.eps);
    });
  }
  return loss;
}

Batch make_full_batch(const Dataset& dataset, const BehaviorTable& behavior, const TrainConfig& config) {
  FlatData f = flatten(dataset, behavior, config);
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  return gather(f, dataset, all);
}

TrainState train(const Dataset& dataset, const BehaviorTable& behavior, const TrainConfig& config,
                 const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw InvalidInput("training dataset is empty");
  if ((options.validation == nullptr) != (options.validation_behavior == nullptr)) {
    throw InvalidInput("validation data and validation behaviour must be given together");
  }
  const auto dim = static_cast<int>(dataset.schema.size());

  TrainState state;
  std::filesystem::path state_path;
  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    state_path = *options.checkpoint_dir / "train_state.json";
  }
  if (options.resume && options.checkpoint_dir && std::filesystem::exists(state_path)) {
    state = load_train_state(state_path);
    if (!same_run(state.config, config)) {
      throw ConfigError("cannot resume: " + state_path.string() + " was written with a different config");
    }
    state.config = config;
    log_info("resuming after epoch " + std::to_string(state.epochs_done));
  } else {
    state.config = config;
    state.collection.schema = dataset.schema;
    state.collection.use_safety = config.use_safety;
    state.collection.epsilon = config.epsilon;
    const auto [shift, scale] = input_statistics(dataset);
    for (int i = 0; i < config.K; ++i) {
      state.collection.policies.push_back(init_params(derive_seed(config.seed, static_cast<std::uint64_t>(i)), dim,
                                                      config.hidden));
      state.collection.policies.back().set_standardizer(shift, scale);
    }
    state.adam.reset(state.collection.policies);
  }
  if (state.collection.schema != dataset.schema) throw SchemaError("training data schema differs from the run's");

  const FlatData flat = flatten(dataset, behavior, config);
  const ObjectiveSettings settings = config.objective();
  std::vector<std::size_t> order(dataset.size());

  while (state.epochs_done < config.epochs) {
    if (options.stop_after && state.epochs_done >= *options.stop_after) break;
    const int epoch = state.epochs_done + 1;
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord record;
    record.epoch = epoch;
    double weight = 0.0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::span<const std::size_t> ids(order.data() + start, std::min(bs, order.size() - start));
      Batch batch = gather(flat, dataset, ids);
      LossBreakdown loss =
          grad_step(state.collection.policies, batch, settings, config.learning_rate, state.adam);
      if (config.use_safety && loss.masked_mass > 1e-12) {
        throw TrainingError("safety violation: a policy put " + std::to_string(loss.masked_mass) +
                            " probability on a masked action");
      }
      const double w = static_cast<double>(batch.size());
      record.loss.quality += w * loss.quality;
      record.loss.diversity += w * loss.diversity;
      record.loss.l2 += w * loss.l2;
      record.loss.total += w * loss.total;
      weight += w;
    }
    record.loss.quality /= weight;
    record.loss.diversity /= weight;
    record.loss.l2 /= weight;
    record.loss.total /= weight;

    if (options.validation) {
      auto eval = evaluate_collection(state.collection, *options.validation, *options.validation_behavior,
                                      options.eval);
      for (const auto& r : eval.results) {
        record.val_ess.push_back(r.ess);
        record.val_cwpdis.push_back(r.value);
      }
    }
    state.history.push_back(record);
    state.epochs_done = epoch;
    log_info("epoch " + std::to_string(epoch) + " total " + std::to_string(record.loss.total) + " quality " +
             std::to_string(record.loss.quality) + " diversity " + std::to_string(record.loss.diversity));
    if (options.checkpoint_dir) {
      save_collection(state.collection, *options.checkpoint_dir / "checkpoint.json");
      save_train_state(state, state_path);
      write_history_csv(state.history, state.collection.size(), *options.checkpoint_dir / "history.csv");
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  return state;
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  ordered_json j;
  j["format"] = "soda-train-state";
  j["version"] = 1;
  j["config"] = config_json(state.config);
  j["epochs_done"] = state.epochs_done;
  j["schema"] = schema_to_json(state.collection.schema);
  j["use_safety"] = state.collection.use_safety;
  j["epsilon"] = state.collection.epsilon;
  ordered_json adam;
  adam["beta1"] = state.adam.beta1;
  adam["beta2"] = state.adam.beta2;
  adam["eps"] = state.adam.eps;
  adam["step"] = state.adam.step;
  adam["m"] = ordered_json::array();
  adam["v"] = ordered_json::array();
  for (const auto& m : state.adam.m) adam["m"].push_back(params_to_json(m));
  for (const auto& v : state.adam.v) adam["v"].push_back(params_to_json(v));
  j["policies"] = ordered_json::array();
  for (const auto& p : state.collection.policies) j["policies"].push_back(params_to_json(p));
  j["adam"] = std::move(adam);
  j["history"] = ordered_json::array();
  for (const auto& r : state.history) {
    j["history"].push_back(
        {{"epoch", r.epoch}, {"loss", loss_json(r.loss)}, {"val_ess", r.val_ess}, {"val_cwpdis", r.val_cwpdis}});
  }
  write_atomic(path, j.dump());
}

TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open train state " + path.string());
  json j;
  try {
    in >> j;
    if (j.at("format") != "soda-train-state") throw InvalidInput(path.string() + " is not a train state");
    TrainState s;
    s.config = config_from_json(j.at("config"));
    s.epochs_done = j.at("epochs_done").get<int>();
    s.collection.schema = schema_from_json(j.at("schema"));
    s.collection.use_safety = j.at("use_safety").get<bool>();
    s.collection.epsilon = j.at("epsilon").get<double>();
    for (const auto& p : j.at("policies")) s.collection.policies.push_back(params_from_json(p));
    const auto& adam = j.at("adam");
    s.adam.beta1 = adam.at("beta1").get<double>();
    s.adam.beta2 = adam.at("beta2").get<double>();
    s.adam.eps = adam.at("eps").get<double>();
    s.adam.step = adam.at("step").get<std::uint64_t>();
    for (const auto& m : adam.at("m")) s.adam.m.push_back(params_from_json(m));
    for (const auto& v : adam.at("v")) s.adam.v.push_back(params_from_json(v));
    for (const auto& r : j.at("history")) {
      EpochRecord rec;
      rec.epoch = r.at("epoch").get<int>();
      rec.loss = loss_from_json(r.at("loss"));
      rec.val_ess = r.at("val_ess").get<std::vector<double>>();
      rec.val_cwpdis = r.at("val_cwpdis").get<std::vector<double>>();
      s.history.push_back(std::move(rec));
    }
    return s;
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": malformed train state: " + e.what());
  }
}

void write_history_csv(const std::vector<EpochRecord>& history, std::size_t num_policies,
                       const std::filesystem::path& path) {
  std::ostringstream out;
  out << "epoch,quality,diversity,l2,total";
  for (std::size_t i = 0; i < num_policies; ++i) out << ",val_ess_" << i;
  for (std::size_t i = 0; i < num_policies; ++i) out << ",val_cwpdis_" << i;
  out << "\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_number(r.loss.quality) << ',' << format_number(r.loss.diversity) << ','
        << format_number(r.loss.l2) << ',' << format_number(r.loss.total);
    for (std::size_t i = 0; i < num_policies; ++i) {
      out << ',' << (i < r.val_ess.size() ? format_number(r.val_ess[i]) : "");
    }
    for (std::size_t i = 0; i < num_policies; ++i) {
      out << ',' << (i < r.val_cwpdis.size() ? format_number(r.val_cwpdis[i]) : "");
    }
    out << "\n";
  }
  write_atomic(path, out.str());
}

}  // namespace soda
