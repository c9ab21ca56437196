#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedrecon/fed.hpp"
#include "fedrecon/model.hpp"

namespace fedrecon {

// SSFM container: "SSFM" | u32 version | u32 json length | json metadata | f32 LE values.
inline constexpr std::uint32_t kSsfmVersion = 1;

struct CheckpointMeta {
  DenoiserConfig denoiser;
  UnrollConfig unroll;
  int round = 0;
  std::string branch;  // "a", "b", or "rms_a" / "rms_b" for optimizer accumulators

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamVector params;
};

std::vector<std::uint8_t> encode_ssfm(const ParamVector& p, const CheckpointMeta& meta);
Checkpoint decode_ssfm(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamVector& p, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Saves / loads a pair as <stem>_a.ssfm and <stem>_b.ssfm.
void save_pair(const std::filesystem::path& dir, const std::string& stem, const ParamPairF& p,
               const FederationConfig& cfg, int round);
ParamPairF load_pair(const std::filesystem::path& dir, const std::string& stem, const FederationConfig& cfg);

// Complete resumable federation state in `dir`: global pair, every client's pair and
// RMSProp accumulators, and state.json (next round, sigma_k, last loss).
void save_federation_state(const std::filesystem::path& dir, const FederationState& state,
                           const FederationConfig& cfg);
FederationState load_federation_state(const std::filesystem::path& dir, const FederationConfig& cfg);

}  // namespace fedrecon
