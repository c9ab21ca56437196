#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedrecon/data.hpp"
#include "fedrecon/fed.hpp"
#include "fedrecon/json_io.hpp"

namespace fedrecon {

// Everything a generate / train / evaluate invocation needs. Serialized as JSON;
// unknown keys are rejected and every field is optional (defaults below).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string output_dir = "runs/run";
  FederationConfig federation;  // federation.seed mirrors `seed`
  MaskSpec mask;
  std::vector<ClientDatasetSpec> clients = desk_client_presets();
  std::optional<ClientDatasetSpec> unseen = unseen_client_preset();
  int metric_every = 5;
  int checkpoint_every = 5;
  int workers = 1;

  void validate() const;
};

// Default tau for a strategy when none is given: 0 for fedavg_ss, 0.01 otherwise.
double default_tau(Strategy s);

Json to_json(const RunConfig& c);
// Strict parse. A missing "tau" resolves to default_tau(strategy).
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

std::string to_string(InferMode m);
InferMode infer_mode_from_string(const std::string& s);

}  // namespace fedrecon
