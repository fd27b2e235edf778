#pragma once

#include <array>
#include <string>

namespace soda {

inline constexpr int kNumFluidBins = 4;
inline constexpr int kNumVasoBins = 5;
inline constexpr int kNumActions = kNumFluidBins * kNumVasoBins;

// Action ids are vaso_bin * 4 + fluid_bin, so ids 0..3 are "no vasopressor".
using ActionId = int;

struct ActionComponents {
  int vaso_bin = 0;
  int fluid_bin = 0;

  bool operator==(const ActionComponents&) const = default;
};

// Dose discretisation for the two treatment axes.
//
// Fluid bins are half-open [e_i, e_{i+1}) in mL per hour; boluses below the
// first interior edge (200 mL) count as "no bolus". Vasopressor bin 0 is the
// exact dose 0, bin 1 is (0, e_2), and the rest are half-open [e_i, e_{i+1})
// in mcg/kg per hour (norepinephrine equivalents). Doses at or above the top
// edge clamp into the top bin.
class ActionGrid {
 public:
  ActionGrid();
  ActionGrid(std::array<double, kNumFluidBins + 1> fluid_edges,
             std::array<double, kNumVasoBins + 1> vaso_edges);

  static const ActionGrid& standard();

  int fluid_bin(double fluid_ml) const;
  int vaso_bin(double vaso_rate) const;

  bool fluid_bin_contains(int bin, double fluid_ml) const;
  bool vaso_bin_contains(int bin, double vaso_rate) const;

  const std::array<double, kNumFluidBins + 1>& fluid_edges() const { return fluid_edges_; }
  const std::array<double, kNumVasoBins + 1>& vaso_edges() const { return vaso_edges_; }

 private:
  std::array<double, kNumFluidBins + 1> fluid_edges_;
  std::array<double, kNumVasoBins + 1> vaso_edges_;
};

ActionId discretize_action(double fluid_ml, double vaso_rate,
                           const ActionGrid& grid = ActionGrid::standard());

ActionComponents action_components(ActionId action);
ActionId make_action(int vaso_bin, int fluid_bin);

bool is_valid_action(long long action);

// Short label such as "v1,f0".
std::string action_label(ActionId action);

}  // namespace soda
