#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "soda/kv_config.hpp"

namespace soda {

struct RewardKnot {
  double map_mmhg;
  double reward;
};

// Piecewise-linear reward on mean arterial pressure.
//
// The knot table must start at (map_floor, 0) and end at (map_ceiling, 1);
// interior knots are free. The defaults for the interior knots (60 -> 0.85,
// 55 -> 0.6) are this project's choice.
struct RewardConfig {
  std::vector<RewardKnot> knots{{28.0, 0.0}, {55.0, 0.6}, {60.0, 0.85}, {65.0, 1.0}};
  double map_floor = 28.0;
  double map_ceiling = 65.0;
  // Urine output (mL/hour) at or above which moderately low MAP is not penalised.
  double urine_exemption_threshold = 30.0;
  double urine_exempt_map_floor = 55.0;

  void validate() const;

  // Keys: knots (e.g. "28:0, 55:0.6, 60:0.85, 65:1"), map_floor, map_ceiling,
  // urine_exemption_threshold, urine_exempt_map_floor.
  static RewardConfig from_kv(const KeyValueFile& kv);
  static RewardConfig load(const std::filesystem::path& path);
  KeyValueFile to_kv() const;
};

double compute_reward(double map_mmhg, std::optional<double> urine_ml_per_hour,
                      const RewardConfig& config = {});

}  // namespace soda
