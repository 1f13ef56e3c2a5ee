#pragma once

// Minimal JSON Schema checker for the keywords used by the service schema:
// type, enum, required, properties, additionalProperties, items, minItems,
// minimum, maximum, $ref (local), oneOf, allOf.

#include <string>
#include <vector>

#include <json.hpp>

namespace adherence::testing {

/// Returns one message per violation; empty when `value` conforms.
std::vector<std::string> check_schema(const nlohmann::json& root, const std::string& ref, const nlohmann::json& value);

}  // namespace adherence::testing
