#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "soda/kv_config.hpp"

namespace soda {

// Multiplicative factors converting a vasopressor infusion into
// norepinephrine-equivalent dose. Drug names are matched case-insensitively.
//
// Defaults follow the usual norepinephrine-equivalence convention used in
// ICU reinforcement-learning cohorts: epinephrine 1, dopamine 0.01,
// phenylephrine 0.45, vasopressin 5 (per U/min). Norepinephrine is always 1.
class ConversionTable {
 public:
  static ConversionTable defaults();
  // One `drug = factor` per line; entries override the defaults.
  static ConversionTable load(const std::filesystem::path& path);
  static ConversionTable from_kv(const KeyValueFile& kv);

  double factor(std::string_view drug) const;  // throws UnknownDrug
  const std::map<std::string, double>& factors() const { return factors_; }

 private:
  std::map<std::string, double> factors_;
};

// rate * factor / weight_kg.
double norepi_equivalent(std::string_view drug, double rate, double weight_kg,
                         const ConversionTable& table = ConversionTable::defaults());

}  // namespace soda
