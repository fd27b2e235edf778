#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "soda/behavior.hpp"
#include "soda/dataset.hpp"

namespace soda {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kDefaultHidden = 128;

enum class Activation { kRelu };

// Feedforward softmax policy: D -> H -> H -> 20 with ReLU hidden layers.
// Weight matrices are stored (out x in), row-major. Inputs are standardised
// as (x - input_shift) / input_scale first; empty vectors mean raw inputs.
// The standardiser is fixed, not a trainable parameter.
struct PolicyParams {
  RowMatrix w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;
  Eigen::VectorXd input_shift, input_scale;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  bool standardizes() const { return input_shift.size() > 0; }
  // Throws InvalidInput on size mismatch or a non-positive scale.
  void set_standardizer(Eigen::VectorXd shift, Eigen::VectorXd scale);
  RowMatrix standardize(const RowMatrix& states) const;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  std::size_t num_parameters() const;

  double squared_norm() const;
  bool all_finite() const;
  PolicyParams zeros_like() const;

  bool operator==(const PolicyParams& o) const;
};

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
PolicyParams init_params(std::uint64_t seed, int input_dim, int hidden = kDefaultHidden);

// Per-feature mean and population standard deviation over every transition
// (scale 1 for constant features).
std::pair<Eigen::VectorXd, Eigen::VectorXd> input_statistics(const Dataset& dataset);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

ActionDistribution policy_logits(const PolicyParams& params, std::span<const double> state);
ActionDistribution forward(const PolicyParams& params, std::span<const double> state);
ActionDistribution masked_forward(const PolicyParams& params, std::span<const double> state,
                                  const SafetyMask& mask);

// Logits for a batch of states (rows), B x 20.
RowMatrix forward_logits_batch(const PolicyParams& params, const RowMatrix& states);

// K policies trained together over one schema. Policies trained with the
// safety mask are deployed masked; ablations without it are deployed raw.
struct PolicyCollection {
  std::vector<PolicyParams> policies;
  Schema schema;
  bool use_safety = true;
  double epsilon = 0.03;

  std::size_t size() const { return policies.size(); }
  ActionDistribution deployed(std::size_t i, std::span<const double> state, const SafetyMask& mask) const;
};

// Versioned JSON checkpoint with shapes, seeds, activation tag and
// row-major weight payloads. Round trips are exact.
void save_collection(const PolicyCollection& collection, const std::filesystem::path& path);
PolicyCollection load_collection(const std::filesystem::path& path);

}  // namespace soda
