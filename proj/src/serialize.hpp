#pragma once

#include <json.hpp>

#include "faultdiff/data.hpp"

namespace faultdiff::data {

nlohmann::json fault_to_json(const FaultSpec& spec);
FaultSpec fault_from_json(const nlohmann::json& j);
nlohmann::json recipe_to_json(const FaultRecipe& recipe);
FaultRecipe recipe_from_json(const nlohmann::json& j);

} // namespace faultdiff::data
