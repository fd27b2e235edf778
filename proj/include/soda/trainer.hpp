#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "soda/behavior.hpp"
#include "soda/dataset.hpp"
#include "soda/kv_config.hpp"
#include "soda/objective.hpp"
#include "soda/ope.hpp"
#include "soda/policy.hpp"

namespace soda {

struct TrainConfig {
  double lambda = 0.4;
  double epsilon = 0.03;
  QualityKind quality = QualityKind::kSymKL;
  bool use_safety = true;
  bool use_diversity = true;
  double learning_rate = 1e-3;
  int batch_size = 100;  // trajectories per step
  double l2_coeff = 1e-6;
  int K = 4;
  int hidden = kDefaultHidden;
  int epochs = 30;
  std::uint64_t seed = 0;
  bool exclude_self = false;

  void validate() const;
  ObjectiveSettings objective() const;

  static TrainConfig from_kv(const KeyValueFile& kv);
  // Keys present in `kv` override `base`.
  static TrainConfig from_kv(const KeyValueFile& kv, TrainConfig base);
  static TrainConfig load(const std::filesystem::path& path);
  KeyValueFile to_kv() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<PolicyParams> m, v;

  void reset(const std::vector<PolicyParams>& params);
};

// One Adam update of every policy on the exact gradient of the objective.
// Throws TrainingError if any gradient entry is not finite.
LossBreakdown grad_step(std::vector<PolicyParams>& policies, const Batch& batch, const ObjectiveSettings& settings,
                        double learning_rate, AdamState& adam);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // transition-weighted mean over the epoch's steps
  std::vector<double> val_ess, val_cwpdis;
};

struct TrainState {
  TrainConfig config;
  PolicyCollection collection;
  AdamState adam;
  int epochs_done = 0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  const Dataset* validation = nullptr;
  const BehaviorTable* validation_behavior = nullptr;
  EvalConfig eval;
  // When set, the collection and full optimiser state are written here
  // after every epoch (checkpoint.json, train_state.json, history.csv).
  std::optional<std::filesystem::path> checkpoint_dir;
  // Continue from an existing train_state.json in checkpoint_dir.
  bool resume = false;
  // Stop after this many completed epochs (for interruption tests).
  std::optional<int> stop_after;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Whole-trajectory minibatches, reshuffled each epoch with a seed derived
// from (seed, epoch); policy i is initialised from derive_seed(seed, i).
TrainState train(const Dataset& dataset, const BehaviorTable& behavior, const TrainConfig& config,
                 const TrainOptions& options = {});

// Masks and masked behaviour for every training transition, as used by the
// objective.
Batch make_full_batch(const Dataset& dataset, const BehaviorTable& behavior, const TrainConfig& config);

void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

void write_history_csv(const std::vector<EpochRecord>& history, std::size_t num_policies,
                       const std::filesystem::path& path);

}  // namespace soda
