#include "json_schema.hpp"

#include <stdexcept>

namespace adherence::testing {

using nlohmann::json;

namespace {

const json& resolve(const json& root, const std::string& ref) {
  if (ref.rfind("#/", 0) != 0) throw std::runtime_error("only local refs: " + ref);
  const json* node = &root;
  size_t pos = 2;
  while (pos <= ref.size()) {
    const size_t next = ref.find('/', pos);
    const std::string key = ref.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    node = &node->at(key);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return *node;
}

bool has_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  throw std::runtime_error("unknown type " + type);
}

void check(const json& root, const json& schema, const json& v, const std::string& path,
           std::vector<std::string>& errors) {
  if (schema.contains("$ref")) {
    check(root, resolve(root, schema["$ref"].get<std::string>()), v, path, errors);
    return;
  }
  if (schema.contains("allOf")) {
    for (const auto& s : schema["allOf"]) check(root, s, v, path, errors);
  }
  if (schema.contains("oneOf")) {
    int matches = 0;
    for (const auto& s : schema["oneOf"]) {
      std::vector<std::string> sub;
      check(root, s, v, path, sub);
      matches += sub.empty();
    }
    if (matches != 1) errors.push_back(path + ": matches " + std::to_string(matches) + " oneOf branches");
  }
  if (schema.contains("type")) {
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || has_type(v, t.get<std::string>());
    } else {
      ok = has_type(v, schema["type"].get<std::string>());
    }
    if (!ok) {
      errors.push_back(path + ": expected type " + schema["type"].dump() + ", got " + v.type_name());
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == v;
    if (!found) errors.push_back(path + ": " + v.dump() + " not in enum");
  }
  if (v.is_number()) {
    if (schema.contains("minimum") && v.get<double>() < schema["minimum"].get<double>()) {
      errors.push_back(path + ": below minimum");
    }
    if (schema.contains("maximum") && v.get<double>() > schema["maximum"].get<double>()) {
      errors.push_back(path + ": above maximum");
    }
  }
  if (v.is_object()) {
    for (const auto& key : schema.value("required", json::array())) {
      if (!v.contains(key.get<std::string>())) errors.push_back(path + ": missing " + key.get<std::string>());
    }
    const json props = schema.value("properties", json::object());
    for (const auto& [key, value] : v.items()) {
      if (props.contains(key)) {
        check(root, props[key], value, path + "." + key, errors);
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"].is_object()) {
        check(root, schema["additionalProperties"], value, path + "." + key, errors);
      }
    }
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<size_t>()) {
      errors.push_back(path + ": too few items");
    }
    if (schema.contains("items")) {
      for (size_t i = 0; i < v.size(); ++i) check(root, schema["items"], v[i], path + "[" + std::to_string(i) + "]", errors);
    }
  }
}

}  // namespace

std::vector<std::string> check_schema(const json& root, const std::string& ref, const json& value) {
  std::vector<std::string> errors;
  check(root, resolve(root, ref), value, "$", errors);
  return errors;
}

}  // namespace adherence::testing
