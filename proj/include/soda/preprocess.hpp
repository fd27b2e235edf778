#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "soda/action_grid.hpp"
#include "soda/dataset.hpp"
#include "soda/reward.hpp"

namespace soda {

// One hour of raw data for one stay. Each measured variable maps to the
// values recorded within the hour, in chronological order.
struct HourlyRecord {
  std::string stay_id;
  int hour = 1;
  std::map<std::string, std::vector<double>> measurements;
  double fluid_ml = 0.0;   // total bolus volume this hour
  double vaso_rate = 0.0;  // norepinephrine-equivalent mcg/kg this hour
};

// How one schema feature is derived from the raw hourly records.
struct FeatureRecipe {
  enum class Rule {
    kValue,          // aggregated value, carried forward, median-imputed
    kMeasuredWithin, // 1 if `source` was measured in the last `window_hours` hours
    kEverMeasured,   // 1 once `source` has been measured in this stay
    kHour,           // hour index within the stay
  };

  std::string source;
  Rule rule = Rule::kValue;
  int window_hours = 1;
  double population_median = 0.0;
};

struct PreprocessSpec {
  Schema schema;
  std::vector<FeatureRecipe> recipes;  // one per schema feature, same order
  std::string map_variable = "MAP";
  std::string urine_variable = "UrineOutput";
  // Variables aggregated by the hourly minimum instead of the latest value.
  std::set<std::string> min_aggregated{"MAP", "SBP", "DBP"};
  ActionGrid grid;

  // Value recipes for every variable, with medians from `medians` (0 if absent).
  static PreprocessSpec for_variables(const std::vector<std::string>& variables,
                                      const std::map<std::string, double>& medians);
};

// Median of every measured value of every variable across all records.
std::map<std::string, double> population_medians(std::span<const HourlyRecord> records);

// Builds one trajectory from one stay's records (sorted by hour, hours 1..T).
// Reward r_t scores the MAP at hour t+1, i.e. the outcome of action a_t; the
// final hour scores its own MAP.
Trajectory preprocess(std::span<const HourlyRecord> records, const PreprocessSpec& spec,
                      const RewardConfig& reward = {});

}  // namespace soda
