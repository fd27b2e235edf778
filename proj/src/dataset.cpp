#include "soda/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "soda/error.hpp"

namespace soda {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::string kind_name(FeatureKind kind) {
  return kind == FeatureKind::kIndicator ? "indicator" : "continuous";
}

}  // namespace

Schema Schema::generic(std::size_t n) {
  std::vector<FeatureSpec> features;
  features.reserve(n);
  for (std::size_t i = 0; i < n; ++i) features.push_back({"f" + std::to_string(i), "", FeatureKind::kContinuous});
  return Schema(std::move(features));
}

std::optional<std::size_t> Schema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (iequals(features_[i].name, name)) return i;
  }
  return std::nullopt;
}

void Schema::check(std::span<const double> state) const {
  if (state.size() != features_.size()) {
    throw SchemaError("state has " + std::to_string(state.size()) + " entries, schema declares " +
                      std::to_string(features_.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!std::isfinite(state[i])) throw SchemaError("feature '" + features_[i].name + "' is not finite");
    if (features_[i].kind == FeatureKind::kIndicator && state[i] != 0.0 && state[i] != 1.0) {
      throw SchemaError("indicator feature '" + features_[i].name + "' must be 0 or 1");
    }
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "validation") return Split::kValidation;
  if (text == "test") return Split::kTest;
  throw InvalidInput("unknown split '" + std::string(text) + "'");
}

std::size_t Dataset::num_transitions() const {
  std::size_t n = 0;
  for (const auto& traj : trajectories) n += traj.size();
  return n;
}

std::size_t Dataset::max_length() const {
  std::size_t n = 0;
  for (const auto& traj : trajectories) n = std::max(n, traj.size());
  return n;
}

void Dataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& traj : trajectories) {
    if (!ids.insert(traj.stay_id).second) throw SchemaError("duplicate stay_id '" + traj.stay_id + "'");
    if (traj.transitions.empty()) throw InvalidInput("trajectory '" + traj.stay_id + "' is empty");
    if (traj.size() > static_cast<std::size_t>(kMaxHours)) {
      throw InvalidInput("trajectory '" + traj.stay_id + "' longer than 72 hours");
    }
    for (std::size_t j = 0; j < traj.size(); ++j) {
      const auto& tr = traj.transitions[j];
      if (tr.t != static_cast<int>(j) + 1) {
        throw InvalidInput("trajectory '" + traj.stay_id + "': hours must run 1,2,3,...");
      }
      if (!is_valid_action(tr.action)) throw InvalidInput("action id out of range");
      if (!(tr.reward >= 0.0 && tr.reward <= 1.0)) throw InvalidInput("reward outside [0,1]");
      schema.check(tr.state);
    }
  }
}

std::vector<std::size_t> transition_offsets(const Dataset& dataset) {
  std::vector<std::size_t> offsets;
  offsets.reserve(dataset.size() + 1);
  std::size_t total = 0;
  for (const auto& traj : dataset.trajectories) {
    offsets.push_back(total);
    total += traj.size();
  }
  offsets.push_back(total);
  return offsets;
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  Dataset dataset;
  std::unordered_set<std::string> seen;
  bool have_schema = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(source, line_no, "expected a JSON object");

    if (obj.contains("schema")) {
      if (have_schema || !dataset.trajectories.empty()) {
        throw ParseError(source, line_no, "schema header must be the first line");
      }
      std::vector<FeatureSpec> features;
      try {
        for (const auto& f : obj.at("schema")) {
          FeatureSpec spec;
          spec.name = f.at("name").get<std::string>();
          spec.unit = f.value("unit", "");
          std::string kind = f.value("kind", "continuous");
          if (kind == "indicator") {
            spec.kind = FeatureKind::kIndicator;
          } else if (kind == "continuous") {
            spec.kind = FeatureKind::kContinuous;
          } else {
            throw ParseError(source, line_no, "unknown feature kind '" + kind + "'");
          }
          features.push_back(std::move(spec));
        }
        if (obj.contains("split")) dataset.split = parse_split(obj.at("split").get<std::string>());
      } catch (const json::exception& e) {
        throw ParseError(source, line_no, std::string("bad schema header: ") + e.what());
      } catch (const InvalidInput& e) {
        throw ParseError(source, line_no, e.what());
      }
      dataset.schema = Schema(std::move(features));
      have_schema = true;
      continue;
    }

    Transition tr;
    std::string stay_id;
    try {
      stay_id = obj.at("stay_id").get<std::string>();
      tr.t = obj.at("t").get<int>();
      tr.state = obj.at("state").get<std::vector<double>>();
      long long action = obj.at("action").get<long long>();
      if (!is_valid_action(action)) {
        throw ParseError(source, line_no, "action id " + std::to_string(action) + " outside 0-19");
      }
      tr.action = static_cast<ActionId>(action);
      tr.reward = obj.at("reward").get<double>();
    } catch (const json::exception& e) {
      throw ParseError(source, line_no, std::string("bad transition: ") + e.what());
    }
    if (!(tr.reward >= 0.0 && tr.reward <= 1.0)) throw ParseError(source, line_no, "reward outside [0,1]");

    if (!have_schema) {
      dataset.schema = Schema::generic(tr.state.size());
      have_schema = true;
    }
    try {
      dataset.schema.check(tr.state);
    } catch (const SchemaError& e) {
      throw ParseError(source, line_no, e.what());
    }

    if (dataset.trajectories.empty() || dataset.trajectories.back().stay_id != stay_id) {
      if (!seen.insert(stay_id).second) {
        throw ParseError(source, line_no, "duplicate stay_id '" + stay_id + "'");
      }
      dataset.trajectories.push_back({stay_id, {}});
    }
    auto& traj = dataset.trajectories.back();
    if (tr.t != static_cast<int>(traj.size()) + 1) {
      throw ParseError(source, line_no, "expected t=" + std::to_string(traj.size() + 1) + " for stay '" +
                                            stay_id + "'");
    }
    if (tr.t > kMaxHours) throw ParseError(source, line_no, "t exceeds 72");
    traj.transitions.push_back(std::move(tr));
  }
  return dataset;
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
  ordered_json header;
  ordered_json features = ordered_json::array();
  for (const auto& f : dataset.schema.features()) {
    features.push_back({{"name", f.name}, {"unit", f.unit}, {"kind", kind_name(f.kind)}});
  }
  header["schema"] = std::move(features);
  header["split"] = to_string(dataset.split);
  out << header.dump() << '\n';
  for (const auto& traj : dataset.trajectories) {
    for (const auto& tr : traj.transitions) {
      ordered_json row;
      row["stay_id"] = traj.stay_id;
      row["t"] = tr.t;
      row["state"] = tr.state;
      row["action"] = tr.action;
      row["reward"] = tr.reward;
      out << row.dump() << '\n';
    }
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path.string());
  return read_dataset(in, path.string());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset: " + path.string());
  write_dataset(dataset, out);
  if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace soda
