#include "soda/vasopressor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "soda/error.hpp"

namespace soda {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

ConversionTable ConversionTable::defaults() {
  ConversionTable t;
  t.factors_ = {
      {"norepinephrine", 1.0}, {"epinephrine", 1.0}, {"dopamine", 0.01},
      {"phenylephrine", 0.45}, {"vasopressin", 5.0},
  };
  return t;
}

ConversionTable ConversionTable::from_kv(const KeyValueFile& kv) {
  ConversionTable t = defaults();
  for (const auto& [name, _] : kv.values()) {
    double f = kv.get_double(name, 0.0);
    if (!(f >= 0.0) || std::isinf(f)) throw ConfigError(kv.source() + ": factor for '" + name + "' must be >= 0");
    t.factors_[lower(name)] = f;
  }
  if (t.factors_.at("norepinephrine") != 1.0) {
    throw ConfigError(kv.source() + ": norepinephrine factor is fixed at 1");
  }
  return t;
}

ConversionTable ConversionTable::load(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::load(path));
}

double ConversionTable::factor(std::string_view drug) const {
  auto it = factors_.find(lower(drug));
  if (it == factors_.end()) throw UnknownDrug("unknown vasopressor '" + std::string(drug) + "'");
  return it->second;
}

double norepi_equivalent(std::string_view drug, double rate, double weight_kg,
                         const ConversionTable& table) {
  double f = table.factor(drug);
  if (!(rate >= 0.0)) throw InvalidInput("vasopressor rate must be >= 0");
  if (!(weight_kg > 0.0)) throw InvalidInput("weight must be > 0");
  return rate * f / weight_kg;
}

}  // namespace soda
