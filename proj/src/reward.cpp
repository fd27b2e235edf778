#include "soda/reward.hpp"

#include <cmath>
#include <sstream>

#include "soda/error.hpp"

namespace soda {

void RewardConfig::validate() const {
  if (knots.size() < 2) throw ConfigError("reward: need at least two knots");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const auto& k = knots[i];
    if (!(k.reward >= 0.0 && k.reward <= 1.0)) throw ConfigError("reward: knot reward outside [0,1]");
    if (i > 0) {
      if (!(k.map_mmhg > knots[i - 1].map_mmhg)) {
        throw ConfigError("reward: knots must be strictly increasing in MAP");
      }
      if (k.reward < knots[i - 1].reward) throw ConfigError("reward: knot rewards must be nondecreasing");
    }
  }
  if (knots.front().map_mmhg != map_floor || knots.front().reward != 0.0) {
    throw ConfigError("reward: first knot must be (map_floor, 0)");
  }
  if (knots.back().map_mmhg != map_ceiling || knots.back().reward != 1.0) {
    throw ConfigError("reward: last knot must be (map_ceiling, 1)");
  }
  if (!(urine_exemption_threshold >= 0.0)) throw ConfigError("reward: urine threshold must be >= 0");
}

RewardConfig RewardConfig::from_kv(const KeyValueFile& kv) {
  RewardConfig cfg;
  cfg.map_floor = kv.get_double("map_floor", cfg.map_floor);
  cfg.map_ceiling = kv.get_double("map_ceiling", cfg.map_ceiling);
  cfg.urine_exemption_threshold =
      kv.get_double("urine_exemption_threshold", cfg.urine_exemption_threshold);
  cfg.urine_exempt_map_floor = kv.get_double("urine_exempt_map_floor", cfg.urine_exempt_map_floor);
  if (auto text = kv.get("knots")) {
    cfg.knots.clear();
    std::string s = *text;
    for (char& c : s) {
      if (c == ',') c = ' ';
    }
    std::istringstream in(s);
    std::string token;
    while (in >> token) {
      auto colon = token.find(':');
      if (colon == std::string::npos) throw ConfigError(kv.source() + ": knot '" + token + "' is not map:reward");
      try {
        cfg.knots.push_back({std::stod(token.substr(0, colon)), std::stod(token.substr(colon + 1))});
      } catch (const std::exception&) {
        throw ConfigError(kv.source() + ": bad knot '" + token + "'");
      }
    }
  } else if (kv.contains("map_floor") || kv.contains("map_ceiling")) {
    cfg.knots.front().map_mmhg = cfg.map_floor;
    cfg.knots.back().map_mmhg = cfg.map_ceiling;
  }
  cfg.validate();
  return cfg;
}

RewardConfig RewardConfig::load(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::load(path));
}

KeyValueFile RewardConfig::to_kv() const {
  KeyValueFile kv;
  std::ostringstream knots_text;
  knots_text.precision(17);
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (i) knots_text << ", ";
    knots_text << knots[i].map_mmhg << ":" << knots[i].reward;
  }
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  kv.set("knots", knots_text.str());
  kv.set("map_floor", num(map_floor));
  kv.set("map_ceiling", num(map_ceiling));
  kv.set("urine_exemption_threshold", num(urine_exemption_threshold));
  kv.set("urine_exempt_map_floor", num(urine_exempt_map_floor));
  return kv;
}

double compute_reward(double map_mmhg, std::optional<double> urine_ml_per_hour,
                      const RewardConfig& config) {
  if (!(map_mmhg > 0.0) || std::isinf(map_mmhg)) {
    throw InvalidInput("MAP must be a positive finite value");
  }
  if (urine_ml_per_hour && *urine_ml_per_hour >= config.urine_exemption_threshold &&
      map_mmhg >= config.urine_exempt_map_floor) {
    return 1.0;
  }
  const auto& knots = config.knots;
  if (map_mmhg >= knots.back().map_mmhg) return 1.0;
  if (map_mmhg <= knots.front().map_mmhg) return 0.0;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (map_mmhg <= knots[i].map_mmhg) {
      const auto& lo = knots[i - 1];
      const auto& hi = knots[i];
      double frac = (map_mmhg - lo.map_mmhg) / (hi.map_mmhg - lo.map_mmhg);
      return lo.reward + frac * (hi.reward - lo.reward);
    }
  }
  return 1.0;
}

}  // namespace soda
