#include "soda/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "soda/error.hpp"

namespace soda {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::size_t hash_state(std::span<const double> state) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : state) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return static_cast<std::size_t>(h);
}

}  // namespace

SafetyMask SafetyMask::from_bits(std::uint32_t bits, double epsilon) {
  if ((bits & ((1u << kNumActions) - 1)) == 0 || (bits >> kNumActions) != 0) {
    throw InvalidInput("safety mask must allow at least one valid action");
  }
  SafetyMask m;
  m.allowed_ = std::bitset<kNumActions>(bits);
  m.epsilon_ = epsilon;
  return m;
}

SafetyMask SafetyMask::of(std::initializer_list<ActionId> actions, double epsilon) {
  std::uint32_t bits = 0;
  for (ActionId a : actions) {
    if (!is_valid_action(a)) throw InvalidInput("action id out of range");
    bits |= 1u << a;
  }
  return from_bits(bits, epsilon);
}

std::vector<ActionId> SafetyMask::allowed_actions() const {
  std::vector<ActionId> out;
  for (ActionId a = 0; a < kNumActions; ++a) {
    if (allows(a)) out.push_back(a);
  }
  return out;
}

BehaviorModel BehaviorModel::fit(const Dataset& dataset, int k, std::vector<double> distance_weights) {
  std::vector<StateVector> states;
  std::vector<ActionId> actions;
  states.reserve(dataset.num_transitions());
  actions.reserve(dataset.num_transitions());
  for (const auto& traj : dataset.trajectories) {
    for (const auto& tr : traj.transitions) {
      states.push_back(tr.state);
      actions.push_back(tr.action);
    }
  }
  return fit(dataset.schema, std::move(states), std::move(actions), k, std::move(distance_weights));
}

BehaviorModel BehaviorModel::fit(const Schema& schema, std::vector<StateVector> states,
                                 std::vector<ActionId> actions, int k,
                                 std::vector<double> distance_weights) {
  if (states.empty()) throw InvalidInput("behavior: empty reference set");
  if (states.size() != actions.size()) throw InvalidInput("behavior: states/actions size mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > states.size()) {
    throw ConfigError("behavior: k=" + std::to_string(k) + " must be in [1, " +
                      std::to_string(states.size()) + "]");
  }
  const std::size_t d = schema.size();
  if (distance_weights.empty()) distance_weights.assign(d, 1.0);
  if (distance_weights.size() != d) throw ConfigError("behavior: one distance weight per feature required");
  bool any_positive = false;
  for (double w : distance_weights) {
    if (!(w >= 0.0) || std::isinf(w)) throw ConfigError("behavior: distance weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ConfigError("behavior: at least one distance weight must be positive");

  BehaviorModel model;
  model.schema_ = schema;
  model.k_ = k;
  model.weights_ = std::move(distance_weights);
  model.raw_.reserve(states.size() * d);
  for (const auto& s : states) {
    schema.check(s);
    model.raw_.insert(model.raw_.end(), s.begin(), s.end());
  }
  for (ActionId a : actions) {
    if (!is_valid_action(a)) throw InvalidInput("behavior: action id out of range");
  }
  model.actions_ = std::move(actions);
  model.build();
  return model;
}

void BehaviorModel::build() {
  const std::size_t d = schema_.size();
  const std::size_t n = actions_.size();
  mean_.assign(d, 0.0);
  scale_.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) mean_[f] += raw_[i * d + f];
  }
  for (double& m : mean_) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      double c = raw_[i * d + f] - mean_[f];
      scale_[f] += c * c;
    }
  }
  multiplier_.resize(d);
  for (std::size_t f = 0; f < d; ++f) {
    scale_[f] = std::sqrt(scale_[f] / static_cast<double>(n));
    if (!(scale_[f] > 0.0)) scale_[f] = 1.0;
    multiplier_[f] = std::sqrt(weights_[f]) / scale_[f];
  }
  std::vector<double> points(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) points[i * d + f] = (raw_[i * d + f] - mean_[f]) * multiplier_[f];
  }
  tree_ = KdTree(std::move(points), d);
  exact_index_.clear();
  exact_index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) exact_index_.emplace(hash_state(reference_state(i)), i);
}

std::span<const double> BehaviorModel::reference_state(std::size_t i) const {
  return {raw_.data() + i * schema_.size(), schema_.size()};
}

std::vector<double> BehaviorModel::transform(std::span<const double> state) const {
  if (state.size() != schema_.size()) {
    throw SchemaError("behavior: query has " + std::to_string(state.size()) + " features, expected " +
                      std::to_string(schema_.size()));
  }
  std::vector<double> out(state.size());
  for (std::size_t f = 0; f < state.size(); ++f) out[f] = (state[f] - mean_[f]) * multiplier_[f];
  return out;
}

std::optional<std::size_t> BehaviorModel::find_reference(std::span<const double> state) const {
  if (state.size() != schema_.size()) return std::nullopt;
  std::optional<std::size_t> best;
  auto [lo, hi] = exact_index_.equal_range(hash_state(state));
  for (auto it = lo; it != hi; ++it) {
    auto ref = reference_state(it->second);
    if (std::equal(ref.begin(), ref.end(), state.begin()) && (!best || it->second < *best)) {
      best = it->second;
    }
  }
  return best;
}

std::vector<Neighbor> BehaviorModel::neighbors(std::span<const double> state,
                                               std::optional<std::size_t> excluded) const {
  if (excluded && size() <= 1) excluded.reset();
  auto q = transform(state);
  return tree_.knn(q, static_cast<std::size_t>(k_), excluded);
}

ActionCounts BehaviorModel::count(const std::vector<Neighbor>& nbrs) const {
  ActionCounts counts{};
  for (const auto& n : nbrs) ++counts[actions_[n.index]];
  return counts;
}

ActionCounts BehaviorModel::neighbor_counts(std::span<const double> state, bool exclude_self) const {
  std::optional<std::size_t> excluded;
  if (exclude_self) excluded = find_reference(state);
  return count(neighbors(state, excluded));
}

ActionCounts BehaviorModel::neighbor_counts_at(std::size_t reference_index, bool exclude_self) const {
  if (reference_index >= size()) throw InvalidInput("behavior: reference index out of range");
  std::optional<std::size_t> excluded;
  if (exclude_self) excluded = reference_index;
  return count(neighbors(reference_state(reference_index), excluded));
}

std::vector<ActionCounts> BehaviorModel::neighbor_counts_batch(
    const std::vector<std::span<const double>>& states, const std::vector<std::optional<std::size_t>>& excluded) const {
  if (excluded.size() != states.size()) throw InvalidInput("behavior: one exclusion entry per query is required");
  std::vector<double> queries;
  queries.reserve(states.size() * dim());
  std::vector<std::optional<std::size_t>> skip(excluded);
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto q = transform(states[i]);
    queries.insert(queries.end(), q.begin(), q.end());
    if (size() <= 1) skip[i].reset();
  }
  auto nbrs = tree_.knn_batch(queries, static_cast<std::size_t>(k_), skip);
  std::vector<ActionCounts> out;
  out.reserve(nbrs.size());
  for (const auto& n : nbrs) out.push_back(count(n));
  return out;
}

void BehaviorModel::save(const std::filesystem::path& path) const {
  ordered_json j;
  j["format"] = "soda-behavior-model";
  j["version"] = 1;
  j["k"] = k_;
  ordered_json features = ordered_json::array();
  for (const auto& f : schema_.features()) {
    features.push_back({{"name", f.name},
                        {"unit", f.unit},
                        {"kind", f.kind == FeatureKind::kIndicator ? "indicator" : "continuous"}});
  }
  j["schema"] = std::move(features);
  j["distance_weights"] = weights_;
  j["actions"] = actions_;
  j["states"] = raw_;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write behavior model: " + path.string());
  out << j.dump() << '\n';
}

BehaviorModel BehaviorModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open behavior model: " + path.string());
  json j;
  try {
    in >> j;
    if (j.at("format") != "soda-behavior-model") throw ConfigError(path.string() + ": not a behavior model");
    std::vector<FeatureSpec> features;
    for (const auto& f : j.at("schema")) {
      features.push_back({f.at("name").get<std::string>(), f.value("unit", ""),
                          f.value("kind", "continuous") == "indicator" ? FeatureKind::kIndicator
                                                                       : FeatureKind::kContinuous});
    }
    Schema schema(std::move(features));
    auto flat = j.at("states").get<std::vector<double>>();
    auto actions = j.at("actions").get<std::vector<ActionId>>();
    const std::size_t d = schema.size();
    if (d == 0 || flat.size() != actions.size() * d) throw ConfigError(path.string() + ": state payload size mismatch");
    std::vector<StateVector> states(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
      states[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * d),
                       flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    }
    return fit(schema, std::move(states), std::move(actions), j.at("k").get<int>(),
               j.at("distance_weights").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ActionDistribution counts_to_probs(const ActionCounts& counts) {
  int total = 0;
  for (int c : counts) total += c;
  if (total <= 0) throw InvalidInput("behavior: no neighbours counted");
  ActionDistribution p{};
  for (int a = 0; a < kNumActions; ++a) p[a] = static_cast<double>(counts[a]) / total;
  return p;
}

ActionDistribution behavior_probs(const BehaviorModel& model, std::span<const double> state,
                                  bool exclude_self) {
  return counts_to_probs(model.neighbor_counts(state, exclude_self));
}

SafetyMask mask_from_counts(const ActionCounts& counts, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidInput("safety epsilon must be in (0,1)");
  int total = 0;
  for (int c : counts) total += c;
  const int threshold = std::max(1, static_cast<int>(std::lround(epsilon * total)));
  std::uint32_t bits = 0;
  int argmax = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (counts[a] >= threshold) bits |= 1u << a;
    if (counts[a] > counts[argmax]) argmax = a;
  }
  if (bits == 0) bits = 1u << argmax;
  return SafetyMask::from_bits(bits, epsilon);
}

SafetyMask safety_mask(const BehaviorModel& model, std::span<const double> state, double epsilon,
                       bool exclude_self) {
  return mask_from_counts(model.neighbor_counts(state, exclude_self), epsilon);
}

ActionDistribution apply_mask(const ActionDistribution& probs, const SafetyMask& mask) {
  ActionDistribution out{};
  double mass = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (mask.allows(a)) mass += probs[a];
  }
  if (mass < 1e-12) {
    double u = 1.0 / mask.count();
    for (int a = 0; a < kNumActions; ++a) out[a] = mask.allows(a) ? u : 0.0;
    return out;
  }
  for (int a = 0; a < kNumActions; ++a) out[a] = mask.allows(a) ? probs[a] / mass : 0.0;
  return out;
}

BehaviorTable tabulate_behavior(const BehaviorModel& model, const Dataset& dataset, bool exclude_self,
                                bool is_reference, int threads) {
  BehaviorTable table;
  table.k = model.k();
  table.exclude_self = exclude_self;
  std::vector<std::span<const double>> states;
  states.reserve(dataset.num_transitions());
  for (const auto& traj : dataset.trajectories) {
    for (const auto& tr : traj.transitions) states.emplace_back(tr.state);
  }
  if (is_reference && states.size() != model.size()) {
    throw InvalidInput("behavior: dataset is not the model's reference set");
  }
  table.counts.resize(states.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::span<const double>> chunk(states.begin() + begin, states.begin() + end);
    std::vector<std::optional<std::size_t>> excluded(end - begin);
    if (exclude_self) {
      for (std::size_t i = begin; i < end; ++i) {
        excluded[i - begin] = is_reference ? std::optional<std::size_t>(i) : model.find_reference(states[i]);
      }
    }
    auto counts = model.neighbor_counts_batch(chunk, excluded);
    std::copy(counts.begin(), counts.end(), table.counts.begin() + begin);
  };
  const std::size_t n = states.size();
  const std::size_t nthreads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1,
                                                       std::max<std::size_t>(n, 1));
  if (nthreads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) {
      pool.emplace_back(work, n * t / nthreads, n * (t + 1) / nthreads);
    }
    for (auto& th : pool) th.join();
  }
  return table;
}

void save_mask_cache(const BehaviorTable& table, double epsilon, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write mask cache: " + path.string());
  ordered_json header;
  header["format"] = "soda-mask-cache";
  header["k"] = table.k;
  header["exclude_self"] = table.exclude_self;
  header["epsilon"] = epsilon;
  header["transitions"] = table.size();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    ordered_json row;
    row["index"] = i;
    row["mask"] = table.mask(i, epsilon).bits();
    row["counts"] = table.counts[i];
    out << row.dump() << '\n';
  }
}

BehaviorTable load_mask_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mask cache: " + path.string());
  BehaviorTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      if (line_no == 1) {
        if (j.value("format", "") != "soda-mask-cache") throw ParseError(path.string(), 1, "not a mask cache");
        table.k = j.at("k").get<int>();
        table.exclude_self = j.at("exclude_self").get<bool>();
        expected = j.at("transitions").get<std::size_t>();
        table.counts.reserve(expected);
        continue;
      }
      if (j.at("index").get<std::size_t>() != table.counts.size()) {
        throw ParseError(path.string(), line_no, "mask cache indices must be consecutive");
      }
      table.counts.push_back(j.at("counts").get<ActionCounts>());
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  if (table.counts.size() != expected) throw ParseError(path.string(), line_no, "truncated mask cache");
  return table;
}

std::vector<double> load_distance_weights(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open distance weights: " + path.string());
  std::vector<double> weights(schema.size(), 1.0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string name;
    double w = 0.0;
    if (!(ls >> name)) continue;
    if (!(ls >> w)) throw ParseError(path.string(), line_no, "expected 'feature_name weight'");
    auto idx = schema.index_of(name);
    if (!idx) throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": unknown feature '" + name + "'");
    weights[*idx] = w;
  }
  return weights;
}

}  // namespace soda
