#include "fedrecon/config.hpp"

#include <set>

#include "fedrecon/detail/binio.hpp"
#include "fedrecon/errors.hpp"

namespace fedrecon {

double default_tau(Strategy s) { return s == Strategy::fedavg_ss ? 0.0 : 0.01; }

std::string to_string(InferMode m) { return m == InferMode::mean ? "mean" : "branch_a"; }

InferMode infer_mode_from_string(const std::string& s) {
  if (s == "mean") return InferMode::mean;
  if (s == "branch_a") return InferMode::branch_a;
  throw ConfigError("infer_mode must be \"mean\" or \"branch_a\", got \"" + s + "\"");
}

void RunConfig::validate() const {
  federation.validate();
  if (federation.seed != seed) throw ConfigError("federation seed must mirror the run seed");
  if (clients.empty()) throw ConfigError("at least one client is required");
  std::set<int> ids;
  const int size = clients.front().size;
  for (const auto& c : clients) {
    c.validate();
    if (c.id < 0) throw ConfigError("client ids must be non-negative");
    if (!ids.insert(c.id).second) throw ConfigError("duplicate client id " + std::to_string(c.id));
    if (c.size != size) throw ConfigError("all clients must share one image size");
  }
  if (unseen) {
    unseen->validate();
    if (ids.count(unseen->id)) throw ConfigError("unseen client id collides with a training client");
    if (unseen->size != size) throw ConfigError("unseen client must share the training image size");
  }
  if (!(mask.acceleration >= 1.0)) throw ConfigError("mask.acceleration must be >= 1");
  if (!(mask.center_fraction >= 0.0) || mask.center_fraction > 1.0 / mask.acceleration) {
    throw ConfigError("mask.center_fraction must lie in [0, 1/acceleration]");
  }
  if (metric_every < 1) throw ConfigError("metric_every must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data_dir.empty() || output_dir.empty()) throw ConfigError("data_dir and output_dir must be non-empty");
}

Json to_json(const RunConfig& c) {
  const auto& f = c.federation;
  Json fed;
  fed["rounds"] = f.rounds;
  fed["local_epochs_first"] = f.local_epochs_first;
  fed["local_epochs_rest"] = f.local_epochs_rest;
  fed["beta"] = f.beta;
  fed["strategy"] = to_string(f.strategy);
  fed["tau"] = f.tau;
  fed["gamma"] = f.gamma;
  fed["lr"] = f.lr;
  fed["split_rho"] = f.split_rho;
  fed["batch_size"] = f.batch_size;
  fed["weighted_aggregation"] = f.weighted_aggregation;
  fed["sigma_override"] = f.sigma_override ? Json(*f.sigma_override) : Json(nullptr);
  fed["infer_mode"] = to_string(f.infer_mode);

  Json j;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
  j["federation"] = fed;
  j["denoiser"] = f.denoiser;
  j["unroll"] = f.unroll;
  j["mask"] = c.mask;
  j["clients"] = c.clients;
  j["unseen_client"] = c.unseen ? Json(*c.unseen) : Json(nullptr);
  j["metric_every"] = c.metric_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["workers"] = c.workers;
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"seed", "data_dir", "output_dir", "federation", "denoiser", "unroll", "mask", "clients",
                       "unseen_client", "metric_every", "checkpoint_every", "workers"},
                      "config");
  RunConfig c;
  const std::string ctx = "config";
  read_optional(j, "seed", c.seed, ctx);
  read_optional(j, "data_dir", c.data_dir, ctx);
  read_optional(j, "output_dir", c.output_dir, ctx);
  read_optional(j, "metric_every", c.metric_every, ctx);
  read_optional(j, "checkpoint_every", c.checkpoint_every, ctx);
  read_optional(j, "workers", c.workers, ctx);

  auto& f = c.federation;
  std::optional<double> tau;
  if (j.contains("federation")) {
    const auto& fj = j.at("federation");
    const std::string fctx = "federation";
    reject_unknown_keys(fj,
                        {"rounds", "local_epochs_first", "local_epochs_rest", "beta", "strategy", "tau", "gamma", "lr",
                         "split_rho", "batch_size", "weighted_aggregation", "sigma_override", "infer_mode"},
                        fctx);
    read_optional(fj, "rounds", f.rounds, fctx);
    read_optional(fj, "local_epochs_first", f.local_epochs_first, fctx);
    read_optional(fj, "local_epochs_rest", f.local_epochs_rest, fctx);
    read_optional(fj, "beta", f.beta, fctx);
    std::string strategy = to_string(f.strategy);
    read_optional(fj, "strategy", strategy, fctx);
    f.strategy = strategy_from_string(strategy);
    if (fj.contains("tau")) {
      double t = 0.0;
      read_optional(fj, "tau", t, fctx);
      tau = t;
    }
    read_optional(fj, "gamma", f.gamma, fctx);
    read_optional(fj, "lr", f.lr, fctx);
    read_optional(fj, "split_rho", f.split_rho, fctx);
    read_optional(fj, "batch_size", f.batch_size, fctx);
    read_optional(fj, "weighted_aggregation", f.weighted_aggregation, fctx);
    if (fj.contains("sigma_override") && !fj.at("sigma_override").is_null()) {
      double s = 0.0;
      read_optional(fj, "sigma_override", s, fctx);
      f.sigma_override = s;
    }
    std::string mode = to_string(f.infer_mode);
    read_optional(fj, "infer_mode", mode, fctx);
    f.infer_mode = infer_mode_from_string(mode);
  }
  f.tau = tau ? *tau : default_tau(f.strategy);
  try {
    if (j.contains("denoiser")) f.denoiser = j.at("denoiser").get<DenoiserConfig>();
    if (j.contains("unroll")) f.unroll = j.at("unroll").get<UnrollConfig>();
    if (j.contains("mask")) c.mask = j.at("mask").get<MaskSpec>();
    if (j.contains("clients")) {
      if (!j.at("clients").is_array()) throw ConfigError("config.clients must be an array");
      c.clients.clear();
      for (const auto& cj : j.at("clients")) c.clients.push_back(cj.get<ClientDatasetSpec>());
    }
    if (j.contains("unseen_client")) {
      if (j.at("unseen_client").is_null()) {
        c.unseen.reset();
      } else {
        c.unseen = j.at("unseen_client").get<ClientDatasetSpec>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  f.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace fedrecon
