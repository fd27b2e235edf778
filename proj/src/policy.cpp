#include "soda/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "soda/error.hpp"
#include "soda/policy_json.hpp"

namespace soda {

using nlohmann::json;
using nlohmann::ordered_json;

std::size_t PolicyParams::num_parameters() const {
  return static_cast<std::size_t>(w1.size() + w2.size() + w3.size() + b1.size() + b2.size() + b3.size());
}

double PolicyParams::squared_norm() const {
  return w1.squaredNorm() + w2.squaredNorm() + w3.squaredNorm() + b1.squaredNorm() + b2.squaredNorm() +
         b3.squaredNorm();
}

bool PolicyParams::all_finite() const {
  return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() && b2.allFinite() &&
         b3.allFinite();
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams z;
  z.w1 = RowMatrix::Zero(w1.rows(), w1.cols());
  z.w2 = RowMatrix::Zero(w2.rows(), w2.cols());
  z.w3 = RowMatrix::Zero(w3.rows(), w3.cols());
  z.b1 = Eigen::VectorXd::Zero(b1.size());
  z.b2 = Eigen::VectorXd::Zero(b2.size());
  z.b3 = Eigen::VectorXd::Zero(b3.size());
  z.input_shift = input_shift;
  z.input_scale = input_scale;
  z.activation = activation;
  z.seed = seed;
  return z;
}

void PolicyParams::set_standardizer(Eigen::VectorXd shift, Eigen::VectorXd scale) {
  if (shift.size() != w1.cols() || scale.size() != w1.cols()) {
    throw InvalidInput("policy: standardiser size does not match the input dimension");
  }
  if (!shift.allFinite() || !scale.allFinite() || !(scale.array() > 0.0).all()) {
    throw InvalidInput("policy: standardiser needs finite shifts and positive scales");
  }
  input_shift = std::move(shift);
  input_scale = std::move(scale);
}

RowMatrix PolicyParams::standardize(const RowMatrix& states) const {
  if (!standardizes()) return states;
  return (states.rowwise() - input_shift.transpose()).array().rowwise() / input_scale.transpose().array();
}

bool PolicyParams::operator==(const PolicyParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return activation == o.activation && seed == o.seed && same(w1, o.w1) && same(w2, o.w2) &&
         same(w3, o.w3) && same(b1, o.b1) && same(b2, o.b2) && same(b3, o.b3) &&
         same(input_shift, o.input_shift) && same(input_scale, o.input_scale);
}

PolicyParams init_params(std::uint64_t seed, int input_dim, int hidden) {
  if (input_dim < 1 || hidden < 1) throw InvalidInput("policy dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](int out, int in) {
    double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    RowMatrix w(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = u(rng);
    }
    return w;
  };
  PolicyParams p;
  p.seed = seed;
  p.w1 = glorot(hidden, input_dim);
  p.w2 = glorot(hidden, hidden);
  p.w3 = glorot(kNumActions, hidden);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.b2 = Eigen::VectorXd::Zero(hidden);
  p.b3 = Eigen::VectorXd::Zero(kNumActions);
  return p;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> input_statistics(const Dataset& dataset) {
  const auto d = static_cast<Eigen::Index>(dataset.schema.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  std::size_t n = 0;
  for (const auto& t : dataset.trajectories) {
    for (const auto& tr : t.transitions) {
      mean += Eigen::Map<const Eigen::VectorXd>(tr.state.data(), d);
      ++n;
    }
  }
  if (n == 0) throw InvalidInput("input_statistics: dataset has no transitions");
  mean /= static_cast<double>(n);
  for (const auto& t : dataset.trajectories) {
    for (const auto& tr : t.transitions) {
      sq += (Eigen::Map<const Eigen::VectorXd>(tr.state.data(), d) - mean).cwiseAbs2();
    }
  }
  Eigen::VectorXd scale = (sq / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index f = 0; f < d; ++f) {
    if (!(scale[f] > 1e-12)) scale[f] = 1.0;
  }
  return {mean, scale};
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

ActionDistribution policy_logits(const PolicyParams& params, std::span<const double> state) {
  if (static_cast<int>(state.size()) != params.input_dim()) {
    throw InvalidInput("policy: state has " + std::to_string(state.size()) + " entries, expected " +
                       std::to_string(params.input_dim()));
  }
  for (double v : state) {
    if (!std::isfinite(v)) throw InvalidInput("policy: non-finite state entry");
  }
  Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size()));
  if (params.standardizes()) s = (s - params.input_shift).cwiseQuotient(params.input_scale);
  Eigen::VectorXd h1 = (params.w1 * s + params.b1).cwiseMax(0.0);
  Eigen::VectorXd h2 = (params.w2 * h1 + params.b2).cwiseMax(0.0);
  Eigen::VectorXd z = params.w3 * h2 + params.b3;
  ActionDistribution out{};
  for (int a = 0; a < kNumActions; ++a) out[a] = z[a];
  return out;
}

ActionDistribution forward(const PolicyParams& params, std::span<const double> state) {
  auto z = policy_logits(params, state);
  auto p = softmax(z);
  ActionDistribution out{};
  std::copy(p.begin(), p.end(), out.begin());
  return out;
}

ActionDistribution masked_forward(const PolicyParams& params, std::span<const double> state,
                                  const SafetyMask& mask) {
  return apply_mask(forward(params, state), mask);
}

RowMatrix forward_logits_batch(const PolicyParams& params, const RowMatrix& states) {
  RowMatrix h1 = ((params.standardize(states) * params.w1.transpose()).rowwise() + params.b1.transpose()).cwiseMax(0.0);
  RowMatrix h2 = ((h1 * params.w2.transpose()).rowwise() + params.b2.transpose()).cwiseMax(0.0);
  return (h2 * params.w3.transpose()).rowwise() + params.b3.transpose();
}

ActionDistribution PolicyCollection::deployed(std::size_t i, std::span<const double> state,
                                              const SafetyMask& mask) const {
  return use_safety ? masked_forward(policies.at(i), state, mask) : forward(policies.at(i), state);
}

namespace {

ordered_json matrix_json(const RowMatrix& m) {
  ordered_json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

RowMatrix matrix_from_json(const json& j) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ConfigError("checkpoint: matrix payload does not match its shape");
  }
  RowMatrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  auto data = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

ordered_json params_to_json(const PolicyParams& p) {
  ordered_json j;
  j["seed"] = p.seed;
  j["activation"] = "relu";
  j["w1"] = matrix_json(p.w1);
  j["b1"] = std::vector<double>(p.b1.data(), p.b1.data() + p.b1.size());
  j["w2"] = matrix_json(p.w2);
  j["b2"] = std::vector<double>(p.b2.data(), p.b2.data() + p.b2.size());
  j["w3"] = matrix_json(p.w3);
  j["b3"] = std::vector<double>(p.b3.data(), p.b3.data() + p.b3.size());
  if (p.standardizes()) {
    j["input_shift"] = std::vector<double>(p.input_shift.data(), p.input_shift.data() + p.input_shift.size());
    j["input_scale"] = std::vector<double>(p.input_scale.data(), p.input_scale.data() + p.input_scale.size());
  }
  return j;
}

PolicyParams params_from_json(const json& j) {
  PolicyParams p;
  p.seed = j.at("seed").get<std::uint64_t>();
  if (j.at("activation") != "relu") throw ConfigError("checkpoint: unsupported activation");
  p.w1 = matrix_from_json(j.at("w1"));
  p.b1 = vector_from_json(j.at("b1"));
  p.w2 = matrix_from_json(j.at("w2"));
  p.b2 = vector_from_json(j.at("b2"));
  p.w3 = matrix_from_json(j.at("w3"));
  p.b3 = vector_from_json(j.at("b3"));
  const auto h = p.w1.rows();
  if (p.b1.size() != h || p.w2.rows() != h || p.w2.cols() != h || p.b2.size() != h ||
      p.w3.rows() != kNumActions || p.w3.cols() != h || p.b3.size() != kNumActions) {
    throw ConfigError("checkpoint: inconsistent layer shapes");
  }
  if (j.contains("input_shift") || j.contains("input_scale")) {
    try {
      p.set_standardizer(vector_from_json(j.at("input_shift")), vector_from_json(j.at("input_scale")));
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("checkpoint: ") + e.what());
    }
  }
  return p;
}

ordered_json schema_to_json(const Schema& schema) {
  ordered_json features = ordered_json::array();
  for (const auto& f : schema.features()) {
    features.push_back({{"name", f.name},
                        {"unit", f.unit},
                        {"kind", f.kind == FeatureKind::kIndicator ? "indicator" : "continuous"}});
  }
  return features;
}

Schema schema_from_json(const json& j) {
  std::vector<FeatureSpec> features;
  for (const auto& f : j) {
    features.push_back({f.at("name").get<std::string>(), f.value("unit", ""),
                        f.value("kind", "continuous") == "indicator" ? FeatureKind::kIndicator
                                                                     : FeatureKind::kContinuous});
  }
  return Schema(std::move(features));
}

void save_collection(const PolicyCollection& collection, const std::filesystem::path& path) {
  ordered_json j;
  j["format"] = "soda-policy-collection";
  j["version"] = 1;
  j["input_dim"] = collection.policies.empty() ? 0 : collection.policies.front().input_dim();
  j["hidden_dim"] = collection.policies.empty() ? 0 : collection.policies.front().hidden_dim();
  j["num_actions"] = kNumActions;
  j["use_safety"] = collection.use_safety;
  j["epsilon"] = collection.epsilon;
  j["schema"] = schema_to_json(collection.schema);
  ordered_json policies = ordered_json::array();
  for (const auto& p : collection.policies) policies.push_back(params_to_json(p));
  j["policies"] = std::move(policies);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out << j.dump() << '\n';
}

PolicyCollection load_collection(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  try {
    json j;
    in >> j;
    if (j.at("format") != "soda-policy-collection") throw ConfigError(path.string() + ": not a policy checkpoint");
    if (j.at("version").get<int>() != 1) throw ConfigError(path.string() + ": unsupported checkpoint version");
    PolicyCollection c;
    c.use_safety = j.at("use_safety").get<bool>();
    c.epsilon = j.at("epsilon").get<double>();
    c.schema = schema_from_json(j.at("schema"));
    for (const auto& p : j.at("policies")) c.policies.push_back(params_from_json(p));
    for (const auto& p : c.policies) {
      if (static_cast<std::size_t>(p.input_dim()) != c.schema.size()) {
        throw ConfigError(path.string() + ": policy input dimension does not match schema");
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace soda
