#include "soda/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "soda/error.hpp"

namespace soda {

namespace {

struct VariableTrack {
  std::optional<double> last;  // carried-forward value
  int last_measured_hour = 0;  // 0 = never
};

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void check_spec(const PreprocessSpec& spec) {
  if (spec.recipes.size() != spec.schema.size()) {
    throw SchemaError("preprocess: " + std::to_string(spec.recipes.size()) + " recipes for " +
                      std::to_string(spec.schema.size()) + " schema features");
  }
  for (std::size_t i = 0; i < spec.recipes.size(); ++i) {
    const auto& r = spec.recipes[i];
    bool indicator_rule = r.rule == FeatureRecipe::Rule::kMeasuredWithin ||
                          r.rule == FeatureRecipe::Rule::kEverMeasured;
    bool indicator_kind = spec.schema[i].kind == FeatureKind::kIndicator;
    if (indicator_rule != indicator_kind) {
      throw SchemaError("preprocess: feature '" + spec.schema[i].name +
                        "' kind does not match its derivation rule");
    }
    if (r.rule == FeatureRecipe::Rule::kMeasuredWithin && r.window_hours < 1) {
      throw SchemaError("preprocess: indicator window must be >= 1 hour");
    }
    if (r.rule == FeatureRecipe::Rule::kValue && !std::isfinite(r.population_median)) {
      throw SchemaError("preprocess: feature '" + spec.schema[i].name + "' has no finite median");
    }
  }
}

}  // namespace

PreprocessSpec PreprocessSpec::for_variables(const std::vector<std::string>& variables,
                                             const std::map<std::string, double>& medians) {
  PreprocessSpec spec;
  std::vector<FeatureSpec> features;
  for (const auto& v : variables) {
    features.push_back({v, "", FeatureKind::kContinuous});
    FeatureRecipe recipe;
    recipe.source = v;
    auto it = medians.find(v);
    recipe.population_median = it == medians.end() ? 0.0 : it->second;
    spec.recipes.push_back(recipe);
  }
  spec.schema = Schema(std::move(features));
  return spec;
}

std::map<std::string, double> population_medians(std::span<const HourlyRecord> records) {
  std::map<std::string, std::vector<double>> pooled;
  for (const auto& rec : records) {
    for (const auto& [name, values] : rec.measurements) {
      auto& dst = pooled[name];
      for (double v : values) {
        if (std::isfinite(v)) dst.push_back(v);
      }
    }
  }
  std::map<std::string, double> medians;
  for (auto& [name, values] : pooled) {
    if (!values.empty()) medians[name] = median_of(std::move(values));
  }
  return medians;
}

Trajectory preprocess(std::span<const HourlyRecord> records, const PreprocessSpec& spec,
                      const RewardConfig& reward) {
  if (records.empty()) throw InvalidInput("preprocess: empty record list");
  check_spec(spec);
  reward.validate();

  const std::string& stay_id = records.front().stay_id;
  if (records.size() > static_cast<std::size_t>(kMaxHours)) {
    throw InvalidInput("preprocess: more than 72 hourly records for stay '" + stay_id + "'");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.stay_id != stay_id) throw InvalidInput("preprocess: records span more than one stay");
    if (rec.hour != static_cast<int>(i) + 1) {
      throw InvalidInput("preprocess: records must be sorted with one record per hour starting at 1");
    }
    if (!(rec.fluid_ml >= 0.0) || !(rec.vaso_rate >= 0.0)) {
      throw InvalidInput("preprocess: negative treatment amount");
    }
  }

  std::optional<double> map_median;
  for (const auto& r : spec.recipes) {
    if (r.rule == FeatureRecipe::Rule::kValue && r.source == spec.map_variable) {
      map_median = r.population_median;
    }
  }
  if (!map_median) {
    throw SchemaError("preprocess: schema has no value feature for '" + spec.map_variable + "'");
  }

  auto aggregate = [&](const std::string& name, const std::vector<double>& values) {
    if (spec.min_aggregated.count(name)) return *std::min_element(values.begin(), values.end());
    return values.back();
  };

  std::map<std::string, VariableTrack> tracks;
  std::vector<double> hourly_map(records.size());
  std::vector<std::optional<double>> hourly_urine(records.size());

  Trajectory traj;
  traj.stay_id = stay_id;
  traj.transitions.reserve(records.size());

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    for (const auto& [name, raw] : rec.measurements) {
      std::vector<double> values;
      for (double v : raw) {
        if (std::isfinite(v)) values.push_back(v);
      }
      if (values.empty()) continue;
      auto& track = tracks[name];
      track.last = aggregate(name, values);
      track.last_measured_hour = rec.hour;
    }

    Transition tr;
    tr.t = rec.hour;
    tr.state.resize(spec.schema.size());
    for (std::size_t f = 0; f < spec.recipes.size(); ++f) {
      const auto& recipe = spec.recipes[f];
      auto it = tracks.find(recipe.source);
      const VariableTrack* track = it == tracks.end() ? nullptr : &it->second;
      switch (recipe.rule) {
        case FeatureRecipe::Rule::kValue:
          tr.state[f] = track && track->last ? *track->last : recipe.population_median;
          break;
        case FeatureRecipe::Rule::kMeasuredWithin:
          tr.state[f] = track && track->last_measured_hour > 0 &&
                                rec.hour - track->last_measured_hour < recipe.window_hours
                            ? 1.0
                            : 0.0;
          break;
        case FeatureRecipe::Rule::kEverMeasured:
          tr.state[f] = track && track->last_measured_hour > 0 ? 1.0 : 0.0;
          break;
        case FeatureRecipe::Rule::kHour:
          tr.state[f] = static_cast<double>(rec.hour);
          break;
      }
    }
    spec.schema.check(tr.state);

    auto map_it = tracks.find(spec.map_variable);
    hourly_map[i] = map_it != tracks.end() && map_it->second.last ? *map_it->second.last : *map_median;
    auto urine_it = tracks.find(spec.urine_variable);
    if (urine_it != tracks.end() && urine_it->second.last_measured_hour == rec.hour) {
      hourly_urine[i] = urine_it->second.last;
    }

    tr.action = discretize_action(rec.fluid_ml, rec.vaso_rate, spec.grid);
    traj.transitions.push_back(std::move(tr));
  }

  for (std::size_t i = 0; i < traj.transitions.size(); ++i) {
    std::size_t outcome = std::min(i + 1, traj.transitions.size() - 1);
    traj.transitions[i].reward = compute_reward(hourly_map[outcome], hourly_urine[outcome], reward);
  }
  return traj;
}

}  // namespace soda
