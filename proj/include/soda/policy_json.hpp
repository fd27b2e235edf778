#pragma once

#include <json.hpp>

#include "soda/dataset.hpp"
#include "soda/policy.hpp"

namespace soda {

nlohmann::ordered_json params_to_json(const PolicyParams& params);
PolicyParams params_from_json(const nlohmann::json& j);

nlohmann::ordered_json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);

}  // namespace soda
