#include "soda/action_grid.hpp"

#include <cmath>

#include "soda/error.hpp"

namespace soda {

ActionGrid::ActionGrid()
    : ActionGrid({0.0, 200.0, 500.0, 1000.0, 2000.0}, {0.0, 0.0, 5.0, 15.0, 40.0, 150.0}) {}

ActionGrid::ActionGrid(std::array<double, kNumFluidBins + 1> fluid_edges,
                       std::array<double, kNumVasoBins + 1> vaso_edges)
    : fluid_edges_(fluid_edges), vaso_edges_(vaso_edges) {
  if (fluid_edges_[0] != 0.0 || vaso_edges_[0] != 0.0 || vaso_edges_[1] != 0.0) {
    throw InvalidInput("action grid must start at zero dose (vaso bin 0 is exactly zero)");
  }
  for (int i = 0; i < kNumFluidBins; ++i) {
    if (!(fluid_edges_[i] < fluid_edges_[i + 1])) throw InvalidInput("fluid edges must increase");
  }
  for (int i = 1; i < kNumVasoBins; ++i) {
    if (!(vaso_edges_[i] < vaso_edges_[i + 1])) throw InvalidInput("vaso edges must increase");
  }
}

const ActionGrid& ActionGrid::standard() {
  static const ActionGrid grid;
  return grid;
}

int ActionGrid::fluid_bin(double fluid_ml) const {
  if (!(fluid_ml >= 0.0) || std::isinf(fluid_ml)) {
    throw InvalidInput("fluid volume must be finite and non-negative");
  }
  for (int bin = kNumFluidBins - 1; bin > 0; --bin) {
    if (fluid_ml >= fluid_edges_[bin]) return bin;
  }
  return 0;
}

int ActionGrid::vaso_bin(double vaso_rate) const {
  if (!(vaso_rate >= 0.0) || std::isinf(vaso_rate)) {
    throw InvalidInput("vasopressor rate must be finite and non-negative");
  }
  if (vaso_rate == 0.0) return 0;
  for (int bin = kNumVasoBins - 1; bin > 1; --bin) {
    if (vaso_rate >= vaso_edges_[bin]) return bin;
  }
  return 1;
}

bool ActionGrid::fluid_bin_contains(int bin, double fluid_ml) const {
  if (bin < 0 || bin >= kNumFluidBins || fluid_ml < 0.0) return false;
  if (fluid_ml < fluid_edges_[bin]) return false;
  return bin == kNumFluidBins - 1 || fluid_ml < fluid_edges_[bin + 1];
}

bool ActionGrid::vaso_bin_contains(int bin, double vaso_rate) const {
  if (bin < 0 || bin >= kNumVasoBins || vaso_rate < 0.0) return false;
  if (bin == 0) return vaso_rate == 0.0;
  if (bin == 1) return vaso_rate > 0.0 && (kNumVasoBins == 2 || vaso_rate < vaso_edges_[2]);
  if (vaso_rate < vaso_edges_[bin]) return false;
  return bin == kNumVasoBins - 1 || vaso_rate < vaso_edges_[bin + 1];
}

ActionId discretize_action(double fluid_ml, double vaso_rate, const ActionGrid& grid) {
  return make_action(grid.vaso_bin(vaso_rate), grid.fluid_bin(fluid_ml));
}

bool is_valid_action(long long action) { return action >= 0 && action < kNumActions; }

ActionComponents action_components(ActionId action) {
  if (!is_valid_action(action)) {
    throw InvalidInput("action id out of range: " + std::to_string(action));
  }
  return {action / kNumFluidBins, action % kNumFluidBins};
}

ActionId make_action(int vaso_bin, int fluid_bin) {
  if (vaso_bin < 0 || vaso_bin >= kNumVasoBins || fluid_bin < 0 || fluid_bin >= kNumFluidBins) {
    throw InvalidInput("action bin out of range");
  }
  return vaso_bin * kNumFluidBins + fluid_bin;
}

std::string action_label(ActionId action) {
  auto c = action_components(action);
  return "v" + std::to_string(c.vaso_bin) + ",f" + std::to_string(c.fluid_bin);
}

}  // namespace soda
