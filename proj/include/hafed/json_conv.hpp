#pragma once

#include <json.hpp>

#include "hafed/arch.hpp"

namespace hafed {

nlohmann::json arch_to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

}  // namespace hafed
