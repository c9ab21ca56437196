#pragma once

#include <initializer_list>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "fedrecon/data.hpp"
#include "fedrecon/forward.hpp"
#include "fedrecon/model.hpp"

namespace fedrecon {

using Json = nlohmann::ordered_json;

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context);

// Reads `key` into `out` when present; type mismatches become ConfigError.
template <typename T>
void read_optional(const Json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  bool ok = true;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned());
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  }
  if (!ok) throw ConfigError(context + "." + key + ": wrong type");
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(context + "." + key + ": wrong type");
  }
}

void to_json(Json& j, const SamplingMask& m);
void from_json(const Json& j, SamplingMask& m);
void to_json(Json& j, const DenoiserConfig& c);
void from_json(const Json& j, DenoiserConfig& c);
void to_json(Json& j, const UnrollConfig& c);
void from_json(const Json& j, UnrollConfig& c);
void to_json(Json& j, const ClientDatasetSpec& s);
void from_json(const Json& j, ClientDatasetSpec& s);
void to_json(Json& j, const MaskSpec& s);
void from_json(const Json& j, MaskSpec& s);

}  // namespace fedrecon
