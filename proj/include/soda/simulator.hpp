#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "soda/behavior.hpp"
#include "soda/dataset.hpp"
#include "soda/kv_config.hpp"
#include "soda/reward.hpp"

namespace soda {

inline constexpr int kNumStyles = 3;

enum class Style { kFluidHeavy = 0, kVasoHeavy = 1, kMixed = 2 };

std::string to_string(Style style);

// Coordinates of the simulated state.
inline constexpr int kSimMap = 0;
inline constexpr int kSimUrine = 1;
inline constexpr int kSimLactate = 2;
inline constexpr int kSimHeartRate = 3;

// Linear-Gaussian hypotension-like MDP:
//   x' = x + A (x - mean) + sat(map) * effect[a] + noise (.) N(0, I)
// clipped below at `floor`, with sat(map) = clamp((sat_map - map) / sat_width, 0, 1).
// The logged policy mixes three treatment styles; style s picks action a
// with probability softmax(base[s] + severity(x) * slope[s]) and the style
// itself is drawn from softmax(style_bias + style_coef x).
struct SimConfig {
  int state_dim = 10;
  int horizon = 24;
  std::uint64_t seed = 0;

  std::vector<double> mean, init_std, noise, floor;
  // Patient types: each trajectory adds one offset, chosen uniformly, to
  // coordinate `type_coordinate` of its initial state.
  int type_coordinate = 4;
  std::vector<double> type_offsets;
  std::vector<std::vector<double>> drift;            // D x D
  std::vector<std::vector<double>> action_effects;   // 20 x D
  double sat_map = 90.0;
  double sat_width = 30.0;

  // severity = clamp((severity_map - map) / severity_scale, 0, severity_max)
  double severity_map = 65.0;
  double severity_scale = 5.0;
  double severity_max = 3.0;
  std::array<std::array<double, kNumActions>, kNumStyles> style_base{};
  std::array<std::array<double, kNumActions>, kNumStyles> style_slope{};
  std::array<double, kNumStyles> style_bias{};
  std::array<std::vector<double>, kNumStyles> style_coef;  // each of length D

  RewardConfig reward;

  // Defaults for a state of dimension `state_dim` (at least 5).
  static SimConfig defaults(int state_dim = 10);
  // Flat keys override the defaults; `[drift]`, `[action_effects]`,
  // `[style_base]`, `[style_slope]` and `[style_logits]` are CSV blocks.
  static SimConfig from_kv(const KeyValueFile& kv);
  static SimConfig load(const std::filesystem::path& path);
  void validate() const;

  Schema schema() const;
  double severity(std::span<const double> state) const;
};

using GroundTruthPolicy = std::function<ActionDistribution(std::span<const double> state)>;

std::array<double, kNumStyles> style_weights(const SimConfig& config, std::span<const double> state);
ActionDistribution style_probs(const SimConfig& config, Style style, std::span<const double> state);
ActionDistribution true_behavior_probs(const SimConfig& config, std::span<const double> state);

GroundTruthPolicy behavior_policy(const SimConfig& config);
GroundTruthPolicy style_policy(const SimConfig& config, Style style);

// Deterministic next state (before noise and clipping).
StateVector expected_next_state(const SimConfig& config, std::span<const double> state, ActionId action);

// Trajectory n is generated from its own stream derive_seed(seed, n).
Dataset simulate_dataset(const SimConfig& config, std::size_t n_trajectories, std::uint64_t seed,
                         Split split = Split::kTrain);

struct McEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t rollouts = 0;
};

// On-policy Monte-Carlo estimate of sum_{t=1}^{T} gamma^t r_t.
McEstimate mc_value(const GroundTruthPolicy& policy, const SimConfig& config, std::size_t n_rollouts,
                    double gamma, std::uint64_t seed);

}  // namespace soda
