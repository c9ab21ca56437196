#include "fedrecon/json_io.hpp"

#include <algorithm>
#include <cstring>

namespace fedrecon {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(context + ": unknown key \"" + key + "\"");
  }
}

void to_json(Json& j, const SamplingMask& m) {
  std::string lines;
  lines.reserve(m.cols);
  for (auto v : m.lines) lines.push_back(v ? '1' : '0');
  j = Json{{"rows", m.rows},
           {"cols", m.cols},
           {"acceleration", m.acceleration},
           {"center_fraction", m.center_fraction},
           {"center_begin", m.center_begin},
           {"center_end", m.center_end},
           {"lines", lines}};
}

void from_json(const Json& j, SamplingMask& m) {
  const std::string ctx = "mask";
  reject_unknown_keys(j, {"rows", "cols", "acceleration", "center_fraction", "center_begin", "center_end", "lines"},
                      ctx);
  try {
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.acceleration = j.at("acceleration").get<double>();
    m.center_fraction = j.at("center_fraction").get<double>();
    m.center_begin = j.at("center_begin").get<std::size_t>();
    m.center_end = j.at("center_end").get<std::size_t>();
    const auto lines = j.at("lines").get<std::string>();
    m.lines.clear();
    for (char ch : lines) {
      if (ch != '0' && ch != '1') throw ConfigError("mask.lines must contain only '0' and '1'");
      m.lines.push_back(ch == '1' ? 1 : 0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  m.validate();
}

void to_json(Json& j, const DenoiserConfig& c) {
  j = Json{{"layers", c.layers}, {"filters", c.filters}, {"kernel", c.kernel}};
}

void from_json(const Json& j, DenoiserConfig& c) {
  const std::string ctx = "denoiser";
  reject_unknown_keys(j, {"layers", "filters", "kernel"}, ctx);
  read_optional(j, "layers", c.layers, ctx);
  read_optional(j, "filters", c.filters, ctx);
  read_optional(j, "kernel", c.kernel, ctx);
  c.validate();
}

void to_json(Json& j, const UnrollConfig& c) {
  j = Json{{"iterations", c.iterations},
           {"lambda", c.lambda},
           {"cg_tol", c.cg.tol},
           {"cg_max_iter", c.cg.max_iter},
           {"dc_gradient", c.dc_gradient == DcGradient::implicit ? "implicit" : "unrolled"}};
}

void from_json(const Json& j, UnrollConfig& c) {
  const std::string ctx = "unroll";
  reject_unknown_keys(j, {"iterations", "lambda", "cg_tol", "cg_max_iter", "dc_gradient"}, ctx);
  read_optional(j, "iterations", c.iterations, ctx);
  read_optional(j, "lambda", c.lambda, ctx);
  read_optional(j, "cg_tol", c.cg.tol, ctx);
  read_optional(j, "cg_max_iter", c.cg.max_iter, ctx);
  std::string mode = c.dc_gradient == DcGradient::implicit ? "implicit" : "unrolled";
  read_optional(j, "dc_gradient", mode, ctx);
  if (mode == "implicit") {
    c.dc_gradient = DcGradient::implicit;
  } else if (mode == "unrolled") {
    c.dc_gradient = DcGradient::unrolled;
  } else {
    throw ConfigError(ctx + ".dc_gradient must be \"implicit\" or \"unrolled\"");
  }
  c.validate();
}

void to_json(Json& j, const ClientDatasetSpec& s) {
  j = Json{{"id", s.id},
           {"n_train", s.n_train},
           {"n_val", s.n_val},
           {"n_test", s.n_test},
           {"size", s.size},
           {"contrast_scale", s.contrast_scale},
           {"bias_field_strength", s.bias_field_strength},
           {"rotation_range", s.rotation_range},
           {"noise_sd", s.noise_sd},
           {"phantom_family", to_string(s.phantom_family)}};
}

void from_json(const Json& j, ClientDatasetSpec& s) {
  const std::string ctx = "client";
  reject_unknown_keys(j,
                      {"id", "n_train", "n_val", "n_test", "size", "contrast_scale", "bias_field_strength",
                       "rotation_range", "noise_sd", "phantom_family"},
                      ctx);
  read_optional(j, "id", s.id, ctx);
  read_optional(j, "n_train", s.n_train, ctx);
  read_optional(j, "n_val", s.n_val, ctx);
  read_optional(j, "n_test", s.n_test, ctx);
  read_optional(j, "size", s.size, ctx);
  read_optional(j, "contrast_scale", s.contrast_scale, ctx);
  read_optional(j, "bias_field_strength", s.bias_field_strength, ctx);
  read_optional(j, "rotation_range", s.rotation_range, ctx);
  read_optional(j, "noise_sd", s.noise_sd, ctx);
  std::string family = to_string(s.phantom_family);
  read_optional(j, "phantom_family", family, ctx);
  s.phantom_family = phantom_family_from_string(family);
  s.validate();
}

void to_json(Json& j, const MaskSpec& s) {
  j = Json{{"acceleration", s.acceleration}, {"center_fraction", s.center_fraction}};
}

void from_json(const Json& j, MaskSpec& s) {
  const std::string ctx = "mask";
  reject_unknown_keys(j, {"acceleration", "center_fraction"}, ctx);
  read_optional(j, "acceleration", s.acceleration, ctx);
  read_optional(j, "center_fraction", s.center_fraction, ctx);
  if (!(s.acceleration >= 1.0)) throw ConfigError("mask.acceleration must be >= 1");
  if (!(s.center_fraction >= 0.0) || s.center_fraction > 1.0 / s.acceleration) {
    throw ConfigError("mask.center_fraction must lie in [0, 1/acceleration]");
  }
}

}  // namespace fedrecon
