#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace soda::cli {

namespace fs = std::filesystem;

struct SimulateOptions {
  std::optional<fs::path> config;  // defaults when absent
  std::size_t n = 2000;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  // Overrides the config's seed. Splits use derive_seed(seed, 0/1/2).
  std::optional<std::uint64_t> seed;
  fs::path out;
};

struct FitBehaviorOptions {
  fs::path data;
  int k = 100;
  std::optional<fs::path> weights;
  double epsilon = 0.03;  // stored alongside the mask cache
  bool exclude_self = false;
  int threads = 1;
  fs::path out;
};

struct TrainOverrides {
  std::optional<double> lambda, epsilon, learning_rate;
  std::optional<std::string> quality;
  std::optional<int> epochs, K, hidden, batch_size;
  std::optional<std::uint64_t> seed;
  bool no_safety = false;
  bool no_diversity = false;
};

struct TrainCommandOptions {
  fs::path data;
  fs::path behavior;
  std::optional<fs::path> masks;
  std::optional<fs::path> config;
  std::optional<fs::path> validation;
  std::optional<fs::path> eval_config;
  TrainOverrides overrides;
  // `key=v1,v2,...` with key in {lambda, epsilon, quality}; runs the grid.
  std::vector<std::string> sweep;
  bool resume = false;
  std::optional<int> stop_after;
  int threads = 1;
  fs::path out;
};

struct EvaluateOptions {
  fs::path checkpoints;  // checkpoint.json or a directory searched recursively
  fs::path behavior;
  fs::path data;
  std::optional<fs::path> config;
  int threads = 1;
  fs::path out;
};

struct ReportOptions {
  fs::path checkpoints;
  fs::path behavior;
  fs::path data;
  std::optional<fs::path> config;
  std::vector<std::string> filters{"all"};
  std::size_t top = 10;
  int threads = 1;
  fs::path out;
};

void cmd_simulate(const SimulateOptions& opt);
void cmd_fit_behavior(const FitBehaviorOptions& opt);
void cmd_train(const TrainCommandOptions& opt);
void cmd_evaluate(const EvaluateOptions& opt);
void cmd_report(const ReportOptions& opt);

// Checkpoint files under `root` (itself, or every checkpoint.json below it),
// in sorted order. Throws ConfigError when none exist.
std::vector<fs::path> find_checkpoints(const fs::path& root);

inline const std::vector<std::string>& report_filters() {
  static const std::vector<std::string> names{"all", "fluid-taken", "vaso-taken", "lactate>2", "MAP<55"};
  return names;
}

// Parses argv and dispatches. Returns 0 on success, 2 on configuration or
// usage errors and 1 on any other failure.
int run(int argc, char** argv);

}  // namespace soda::cli
