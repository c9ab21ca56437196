#include "fedrecon/checkpoint.hpp"

#include <optional>

#include "fedrecon/detail/binio.hpp"
#include "fedrecon/errors.hpp"
#include "fedrecon/json_io.hpp"

namespace fedrecon {
namespace {

std::string client_stem(int id) { return "client_" + std::to_string(id); }

void require_config(const CheckpointMeta& meta, const FederationConfig& cfg, const std::filesystem::path& path) {
  if (meta.denoiser.hash() != cfg.denoiser.hash()) {
    throw ConfigError(path.string() + ": denoiser configuration differs from the run configuration");
  }
}

ParamVector load_values(const std::filesystem::path& path, const FederationConfig& cfg, const std::string& branch) {
  auto ck = load_checkpoint(path);
  require_config(ck.meta, cfg, path);
  if (ck.meta.branch != branch) {
    throw ConfigError(path.string() + ": expected branch \"" + branch + "\", found \"" + ck.meta.branch + "\"");
  }
  return std::move(ck.params);
}

}  // namespace

std::vector<std::uint8_t> encode_ssfm(const ParamVector& p, const CheckpointMeta& meta) {
  if (p.size() != meta.denoiser.param_count()) {
    throw ShapeError("SSFM: " + std::to_string(p.size()) + " values do not match the denoiser's " +
                     std::to_string(meta.denoiser.param_count()) + " parameters");
  }
  Json j;
  j["denoiser"] = meta.denoiser;
  j["unroll"] = meta.unroll;
  j["round"] = meta.round;
  j["branch"] = meta.branch;
  const std::string text = j.dump();
  detail::ByteWriter w;
  w.put_bytes("SSFM");
  w.put_u32(kSsfmVersion);
  w.put_u32(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (float v : p.values) w.put_f32(v);
  return std::move(w.bytes());
}

Checkpoint decode_ssfm(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "SSFM");
  r.expect_magic("SSFM");
  const std::size_t version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kSsfmVersion) throw ParseError("SSFM: unsupported version " + std::to_string(version), version_at);
  const auto len = r.u32("header length");
  const std::size_t json_at = r.offset();
  const auto text = r.text(len, "JSON header");
  Checkpoint ck;
  try {
    const auto j = Json::parse(text);
    reject_unknown_keys(j, {"denoiser", "unroll", "round", "branch"}, "SSFM header");
    ck.meta.denoiser = j.at("denoiser").get<DenoiserConfig>();
    ck.meta.unroll = j.at("unroll").get<UnrollConfig>();
    ck.meta.round = j.at("round").get<int>();
    ck.meta.branch = j.at("branch").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("SSFM: malformed JSON header: ") + e.what(), json_at);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("SSFM: invalid JSON header: ") + e.what(), json_at);
  }
  const std::size_t expected = ck.meta.denoiser.param_count() * 4;
  if (r.remaining() != expected) {
    throw ParseError("SSFM: payload size mismatch, expected " + std::to_string(expected) + " bytes (" +
                         std::to_string(ck.meta.denoiser.param_count()) + " parameters), found " +
                         std::to_string(r.remaining()),
                     r.offset());
  }
  ck.params = ParamVector(ck.meta.denoiser);
  for (auto& v : ck.params.values) v = r.f32();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& p, const CheckpointMeta& meta) {
  detail::write_file(path, encode_ssfm(p, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_ssfm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void save_pair(const std::filesystem::path& dir, const std::string& stem, const ParamPairF& p,
               const FederationConfig& cfg, int round) {
  save_checkpoint(dir / (stem + "_a.ssfm"), p.a, {cfg.denoiser, cfg.unroll, round, "a"});
  save_checkpoint(dir / (stem + "_b.ssfm"), p.b, {cfg.denoiser, cfg.unroll, round, "b"});
}

ParamPairF load_pair(const std::filesystem::path& dir, const std::string& stem, const FederationConfig& cfg) {
  return {load_values(dir / (stem + "_a.ssfm"), cfg, "a"), load_values(dir / (stem + "_b.ssfm"), cfg, "b")};
}

void save_federation_state(const std::filesystem::path& dir, const FederationState& state,
                           const FederationConfig& cfg) {
  const int round = state.next_round - 1;
  save_pair(dir, "global", state.global, cfg, round);
  Json clients = Json::array();
  for (const auto& c : state.clients) {
    const auto stem = client_stem(c.id);
    save_pair(dir, stem, c.branches.params, cfg, round);
    ParamVector rms(cfg.denoiser);
    rms.values = c.branches.rms_a;
    save_checkpoint(dir / (stem + "_rms_a.ssfm"), rms, {cfg.denoiser, cfg.unroll, round, "rms_a"});
    rms.values = c.branches.rms_b;
    save_checkpoint(dir / (stem + "_rms_b.ssfm"), rms, {cfg.denoiser, cfg.unroll, round, "rms_b"});
    Json cj;
    cj["id"] = c.id;
    cj["sigma"] = c.sigma ? Json(*c.sigma) : Json(nullptr);
    cj["last_loss"] = c.last_loss;
    clients.push_back(cj);
  }
  Json j;
  j["next_round"] = state.next_round;
  j["clients"] = clients;
  detail::write_text(dir / "state.json", j.dump(2) + "\n");
}

FederationState load_federation_state(const std::filesystem::path& dir, const FederationConfig& cfg) {
  const auto path = dir / "state.json";
  Json j;
  try {
    j = Json::parse(detail::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  FederationState s;
  try {
    s.next_round = j.at("next_round").get<int>();
    s.global = load_pair(dir, "global", cfg);
    for (const auto& cj : j.at("clients")) {
      ClientState c;
      c.id = cj.at("id").get<int>();
      const auto stem = client_stem(c.id);
      c.branches.params = load_pair(dir, stem, cfg);
      c.branches.rms_a = load_values(dir / (stem + "_rms_a.ssfm"), cfg, "rms_a").values;
      c.branches.rms_b = load_values(dir / (stem + "_rms_b.ssfm"), cfg, "rms_b").values;
      if (!cj.at("sigma").is_null()) c.sigma = cj.at("sigma").get<double>();
      c.last_loss = cj.at("last_loss").get<double>();
      s.clients.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace fedrecon
