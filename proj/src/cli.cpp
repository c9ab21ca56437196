#include "fedrecon/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "fedrecon/checkpoint.hpp"
#include "fedrecon/config.hpp"
#include "fedrecon/data.hpp"
#include "fedrecon/detail/binio.hpp"
#include "fedrecon/errors.hpp"
#include "fedrecon/eval.hpp"
#include "fedrecon/fed.hpp"
#include "fedrecon/hash.hpp"

namespace fedrecon {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kDatasetStream = 0xDA7A;

// Existing output the user did not ask to replace.
class OutputExists : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Runtime failures that are not exceptions from the library (missing files and the like).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path client_dir(const fs::path& data, int id) { return data / ("client_" + std::to_string(id)); }
fs::path unseen_dir(const fs::path& data, int id) { return data / ("unseen_" + std::to_string(id)); }

std::string round_dir_name(int round) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round_%04d", round);
  return buf;
}

Json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw RuntimeFailure("missing file " + path.string());
  try {
    return Json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw RuntimeFailure(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Json list = Json::object();
  for (const auto& f : files) {
    list[fs::relative(f, dir).generic_string()] = Json{{"sha256", sha256_file(f)}, {"bytes", fs::file_size(f)}};
  }
  detail::write_text(dir / "manifest.json", Json{{"files", list}}.dump(2) + "\n");
}

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
  std::optional<std::string> output_dir;
  std::optional<std::string> strategy;
  std::optional<int> rounds;
  std::optional<double> tau;
  std::optional<double> lr;
  std::optional<int> workers;
};

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(source + " must be a non-negative integer, got \"" + text + "\"");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError(source + " is out of range: \"" + text + "\"");
  }
}

// defaults < config file < FEDRECON_SEED < flags; validated as a whole afterwards.
RunConfig resolve(const Overrides& o) {
  Json j = Json::object();
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ConfigError("config file " + o.config + " does not exist");
    try {
      j = Json::parse(detail::read_text(o.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(o.config + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(o.config + ": expected a JSON object");
  }
  if (const char* env = std::getenv("FEDRECON_SEED"); env && *env) j["seed"] = parse_seed(env, "FEDRECON_SEED");
  if (o.seed) j["seed"] = *o.seed;
  if (o.data_dir) j["data_dir"] = *o.data_dir;
  if (o.output_dir) j["output_dir"] = *o.output_dir;
  if (o.workers) j["workers"] = *o.workers;
  auto fed = [&]() -> Json& {
    if (!j.contains("federation")) j["federation"] = Json::object();
    return j["federation"];
  };
  if (o.strategy) fed()["strategy"] = *o.strategy;
  if (o.rounds) fed()["rounds"] = *o.rounds;
  if (o.tau) fed()["tau"] = *o.tau;
  if (o.lr) fed()["lr"] = *o.lr;
  return run_config_from_json(j);
}

CounterRng dataset_rng(std::uint64_t seed, int id) {
  return CounterRng(seed).derive(kDatasetStream).derive(static_cast<std::uint64_t>(id));
}

// ---------------------------------------------------------------- generate

int cmd_generate(const RunConfig& cfg, bool force, std::ostream& out) {
  const fs::path data = cfg.data_dir;
  std::vector<fs::path> targets;
  for (const auto& c : cfg.clients) targets.push_back(client_dir(data, c.id));
  if (cfg.unseen) targets.push_back(unseen_dir(data, cfg.unseen->id));
  targets.push_back(data / "datasets.json");
  for (const auto& t : targets) {
    if (fs::exists(t) && !force) {
      throw OutputExists(t.string() + " already exists (use --force to regenerate)");
    }
  }
  for (const auto& t : targets) fs::remove_all(t);
  fs::create_directories(data);

  Json index;
  index["seed"] = cfg.seed;
  index["mask"] = cfg.mask;
  Json clients = Json::array();
  auto make = [&](const ClientDatasetSpec& spec, const fs::path& dir) {
    auto rng = dataset_rng(cfg.seed, spec.id);
    const auto d = generate_phantom_dataset(spec, cfg.mask, rng);
    const auto hash = save_dataset(d, dir);
    out << "client " << spec.id << ": " << d.train.size() << "/" << d.val.size() << "/" << d.test.size()
        << " train/val/test, " << d.omega.sampled_count() << " of " << d.omega.cols << " lines, hash "
        << hash.substr(0, 16) << "  -> " << dir.string() << "\n";
    return Json{{"id", spec.id}, {"dir", dir.filename().string()}, {"dataset_hash", hash}};
  };
  for (const auto& c : cfg.clients) clients.push_back(make(c, client_dir(data, c.id)));
  index["clients"] = clients;
  index["unseen"] = cfg.unseen ? make(*cfg.unseen, unseen_dir(data, cfg.unseen->id)) : Json(nullptr);
  detail::write_text(data / "datasets.json", index.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------- shared data loading

struct LoadedData {
  std::vector<ClientDataset> clients;  // in config order
  std::optional<ClientDataset> unseen;
};

ClientDataset load_checked(const fs::path& dir, const ClientDatasetSpec& spec, const MaskSpec& mask) {
  if (!fs::exists(dir / "manifest.json")) {
    throw RuntimeFailure("dataset missing: " + dir.string() + " (run `fedrecon generate` first)");
  }
  auto d = load_dataset(dir);
  if (!(d.spec == spec) || !(d.mask_spec == mask)) {
    throw ConfigError("dataset " + dir.string() + " was generated from a different client or mask spec");
  }
  return d;
}

LoadedData load_data(const RunConfig& cfg, const fs::path& data, bool with_unseen) {
  const auto index = read_json(data / "datasets.json");
  const auto seed = index.at("seed").get<std::uint64_t>();
  if (seed != cfg.seed) {
    throw ConfigError("datasets in " + data.string() + " were generated with seed " + std::to_string(seed) +
                      " but the run uses seed " + std::to_string(cfg.seed));
  }
  LoadedData out;
  for (const auto& c : cfg.clients) out.clients.push_back(load_checked(client_dir(data, c.id), c, cfg.mask));
  if (with_unseen && cfg.unseen) out.unseen = load_checked(unseen_dir(data, cfg.unseen->id), *cfg.unseen, cfg.mask);
  return out;
}

// ---------------------------------------------------------------- evaluation

struct Modes {
  bool own = true;
  bool crossed = false;
  bool unseen = false;
  bool reference = false;
};

void score(MetricReport& rep, const std::string& method, const std::string& model, const std::string& scenario,
           Split split, int model_client, const ClientDataset& d, const ParamPairF* theta, const FederationConfig& f,
           bool reference = false) {
  const auto& samples = d.split(split);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ComplexImage x;
    if (reference) {
      x = s.truth;
    } else if (theta) {
      x = infer(*theta, s.kspace, d.omega, f.unroll, f.infer_mode);
    } else {
      x = adjoint(s.kspace, d.omega);
    }
    MetricRow r;
    r.method = method;
    r.model = model;
    r.scenario = scenario;
    r.split = to_string(split);
    r.model_client = model_client;
    r.data_client = d.spec.id;
    r.image = static_cast<int>(i);
    r.psnr = psnr(s.truth, x);
    r.ssim = ssim(s.truth, x);
    rep.rows.push_back(r);
  }
}

MetricReport evaluate_state(const RunConfig& cfg, const FederationState& st, const LoadedData& data, Split split,
                            const Modes& modes) {
  const auto& f = cfg.federation;
  const std::string method = to_string(f.strategy);
  MetricReport rep;
  auto personal = [&](int id) -> const ParamPairF& {
    for (const auto& c : st.clients) {
      if (c.id == id) return c.branches.params;
    }
    throw RuntimeFailure("checkpoint has no model for client " + std::to_string(id));
  };
  if (modes.own) {
    for (const auto& d : data.clients) {
      if (modes.reference) score(rep, "reference", "none", "own", split, d.spec.id, d, nullptr, f, true);
      score(rep, "zero_filled", "none", "own", split, d.spec.id, d, nullptr, f);
      score(rep, method, "global", "own", split, -1, d, &st.global, f);
      score(rep, method, "personalized", "own", split, d.spec.id, d, &personal(d.spec.id), f);
    }
  }
  if (modes.crossed) {
    for (const auto& d : data.clients) {
      for (const auto& m : data.clients) {
        if (m.spec.id == d.spec.id) continue;
        score(rep, method, "personalized", "crossed", split, m.spec.id, d, &personal(m.spec.id), f);
      }
    }
  }
  if (modes.unseen && data.unseen) {
    const auto& d = *data.unseen;
    score(rep, "zero_filled", "none", "unseen", split, d.spec.id, d, nullptr, f);
    score(rep, method, "global", "unseen", split, -1, d, &st.global, f);
    for (const auto& m : data.clients) {
      score(rep, method, "personalized", "unseen", split, m.spec.id, d, &personal(m.spec.id), f);
    }
  }
  return rep;
}

void write_report(const fs::path& dir, const MetricReport& rep, const Json& meta) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  detail::write_text(dir / "metrics.csv", rep.to_csv());
  detail::write_text(dir / "summary.csv", rep.summary_csv());
  detail::write_text(dir / "table.txt", rep.to_table());
  detail::write_text(dir / "report.json", meta.dump(2) + "\n");
}

fs::path final_checkpoint(const fs::path& run, const RunConfig& cfg) {
  const auto dir = run / "checkpoints" / round_dir_name(cfg.federation.rounds);
  if (!fs::exists(dir / "state.json")) {
    throw RuntimeFailure("missing checkpoint " + dir.string() + " (run not finished?)");
  }
  return dir;
}

// ---------------------------------------------------------------- train

const char* kRoundsHeader =
    "round,client_id,loss_total,loss_uc,loss_cc,v_k,discrepancy_norm,bytes_up,bytes_down,psnr_val,ssim_val\n";

std::string round_rows(const RoundRecord& r) {
  std::ostringstream os;
  for (const auto& c : r.clients) {
    os << r.round << ',' << c.client_id << ',' << num(c.loss_total) << ',' << num(c.loss_uc) << ','
       << num(c.loss_cc) << ',' << num(c.v) << ',' << num(c.discrepancy) << ',' << c.bytes_up << ','
       << c.bytes_down << ',' << num(c.psnr_val) << ',' << num(c.ssim_val) << '\n';
  }
  return os.str();
}

std::optional<fs::path> latest_checkpoint(const fs::path& run) {
  std::optional<fs::path> best;
  const auto dir = run / "checkpoints";
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "state.json") && (!best || e.path() > *best)) best = e.path();
  }
  return best;
}

void truncate_rounds(const fs::path& csv, int next_round) {
  std::string keep = kRoundsHeader;
  if (fs::exists(csv)) {
    std::istringstream is(detail::read_text(csv));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (std::stoi(line.substr(0, line.find(','))) < next_round) keep += line + "\n";
    }
  }
  detail::write_text(csv, keep);
}

int cmd_train(RunConfig cfg, bool force, bool resume, std::optional<int> stop_after, std::optional<int> workers,
              std::ostream& out, std::ostream& err) {
  const fs::path run = cfg.output_dir;
  if (resume) {
    if (!fs::exists(run / "config.json")) throw ConfigError("nothing to resume: " + run.string() + " has no config.json");
    cfg = load_run_config((run / "config.json").string());
    if (workers) cfg.workers = *workers;
  } else {
    if (fs::exists(run) && !fs::is_empty(run)) {
      if (!force) throw OutputExists("run directory " + run.string() + " is not empty (use --force to replace it)");
      if (!fs::exists(run / "config.json")) {
        throw ConfigError("refusing to clear " + run.string() + ": it does not look like a run directory");
      }
      fs::remove_all(run);
    }
    fs::create_directories(run);
    const auto echo = to_json(cfg);
    const std::string text = echo.dump(2) + "\n";
    if (to_json(run_config_from_json(Json::parse(text))) != echo) {
      throw ConfigError("resolved configuration does not survive a round trip");
    }
    detail::write_text(run / "config.json", text);
  }
  const auto& fcfg = cfg.federation;

  const auto data = load_data(cfg, cfg.data_dir, false);
  std::vector<KspaceDataset> views;
  for (const auto& d : data.clients) views.push_back(training_view(d, Split::train));

  FederationState state;
  if (resume) {
    const auto ck = latest_checkpoint(run);
    if (ck) {
      state = load_federation_state(*ck, fcfg);
      err << "resuming from " << ck->string() << " at round " << state.next_round << "\n";
    } else {
      state = initial_state(fcfg, views);
      err << "no checkpoint found; starting from round 1\n";
    }
    truncate_rounds(run / "rounds.csv", state.next_round);
  } else {
    state = initial_state(fcfg, views);
    detail::write_text(run / "rounds.csv", kRoundsHeader);
  }

  std::map<int, const ClientDataset*> by_id;
  for (const auto& d : data.clients) by_id[d.spec.id] = &d;

  FederationHooks hooks;
  hooks.workers = cfg.workers;
  hooks.metric_every = cfg.metric_every;
  hooks.stop_after = stop_after;
  hooks.validate = [&](int id, const ParamPairF& theta) {
    const auto& d = *by_id.at(id);
    double p = 0.0;
    double s = 0.0;
    for (const auto& smp : d.val) {
      const auto x = infer(theta, smp.kspace, d.omega, fcfg.unroll, fcfg.infer_mode);
      p += psnr(smp.truth, x);
      s += ssim(smp.truth, x);
    }
    const double n = static_cast<double>(d.val.size());
    return std::make_pair(p / n, s / n);
  };
  int done = 0;
  hooks.on_round = [&](const RoundRecord& r, const FederationState& st) {
    ++done;
    {
      std::ofstream csv(run / "rounds.csv", std::ios::app | std::ios::binary);
      csv << round_rows(r);
      if (!csv) throw RuntimeFailure("cannot append to " + (run / "rounds.csv").string());
    }
    const bool last = r.round == fcfg.rounds || (stop_after && done == *stop_after);
    if (r.round % cfg.checkpoint_every == 0 || last) {
      save_federation_state(run / "checkpoints" / round_dir_name(r.round), st, fcfg);
    }
    err << "round " << r.round << "/" << fcfg.rounds << " (" << format_metric(r.wall_seconds, 1) << " s)";
    for (const auto& c : r.clients) {
      err << "  c" << c.client_id << " L=" << format_metric(c.loss_total, 3) << " v=" << format_metric(c.v, 3);
      if (!std::isnan(c.psnr_val)) err << " psnr=" << format_metric(c.psnr_val, 2);
    }
    err << "\n";
  };

  try {
    state = run_federation(fcfg, views, std::move(state), hooks).state;
  } catch (const RoundAborted& e) {
    std::string text = kRoundsHeader;
    text += round_rows(e.partial());
    detail::write_text(run / "rounds_aborted.csv", text);
    write_manifest(run);
    throw;
  }

  if (state.next_round > fcfg.rounds) {
    const auto rep = evaluate_state(cfg, state, data, Split::test, Modes{});
    write_report(run / "eval", rep,
                 Json{{"split", "test"}, {"modes", Json::array({"own"})}, {"strategy", to_string(fcfg.strategy)},
                      {"rounds", fcfg.rounds}, {"seed", cfg.seed}});
    out << rep.to_table();
  } else {
    out << "stopped after round " << state.next_round - 1 << " of " << fcfg.rounds << "; resume with --resume\n";
  }
  write_manifest(run);
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const fs::path& run, const std::optional<std::string>& data_override, const std::string& split_name,
                 const std::string& mode, bool reference, std::ostream& out) {
  if (!fs::exists(run / "config.json")) throw RuntimeFailure(run.string() + " is not a run directory (no config.json)");
  const auto cfg = load_run_config((run / "config.json").string());
  const Split split = split_from_string(split_name);
  Modes modes;
  modes.reference = reference;
  if (mode == "own") {
  } else if (mode == "crossed") {
    modes.own = false;
    modes.crossed = true;
  } else if (mode == "unseen") {
    modes.own = false;
    modes.unseen = true;
  } else if (mode == "all") {
    modes.crossed = true;
    modes.unseen = true;
  } else {
    throw ConfigError("--mode must be own, crossed, unseen or all");
  }
  if (modes.unseen && !cfg.unseen) throw ConfigError("the run has no unseen client configured");

  const auto ck = final_checkpoint(run, cfg);
  const auto state = load_federation_state(ck, cfg.federation);
  const auto data = load_data(cfg, data_override ? fs::path(*data_override) : fs::path(cfg.data_dir), modes.unseen);
  const auto rep = evaluate_state(cfg, state, data, split, modes);

  Json mode_list = Json::array();
  if (modes.own) mode_list.push_back("own");
  if (modes.crossed) mode_list.push_back("crossed");
  if (modes.unseen) mode_list.push_back("unseen");
  write_report(run / "eval", rep,
               Json{{"split", split_name}, {"modes", mode_list}, {"strategy", to_string(cfg.federation.strategy)},
                    {"rounds", cfg.federation.rounds}, {"seed", cfg.seed}});
  write_manifest(run);
  out << rep.to_table();
  return kExitOk;
}

// ---------------------------------------------------------------- compare

int cmd_compare(const std::vector<std::string>& runs, const fs::path& out_dir, std::ostream& out) {
  if (runs.empty()) throw ConfigError("compare needs at least one run directory");
  struct Run {
    fs::path dir;
    RunConfig cfg;
    std::string label;
    std::string split;
    MetricReport report;
  };
  std::vector<Run> items;
  std::map<std::string, int> label_count;
  for (const auto& r : runs) {
    Run item;
    item.dir = r;
    if (!fs::exists(item.dir / "config.json")) throw RuntimeFailure(r + " is not a run directory (no config.json)");
    item.cfg = load_run_config((item.dir / "config.json").string());
    const auto meta = read_json(item.dir / "eval" / "report.json");
    item.split = meta.at("split").get<std::string>();
    item.report = MetricReport::from_csv(detail::read_text(item.dir / "eval" / "metrics.csv"));
    item.label = to_string(item.cfg.federation.strategy);
    ++label_count[item.label];
    items.push_back(std::move(item));
  }
  for (const auto& it : items) {
    if (it.split != items.front().split) {
      throw ConfigError("refusing to compare evaluations of different splits (" + items.front().split + " vs " +
                        it.split + ")");
    }
  }
  for (auto& it : items) {
    if (label_count[it.label] > 1) it.label += "@" + it.dir.filename().string();
  }

  // Deltas against the first run's matching summary rows.
  std::map<std::tuple<std::string, std::string, int>, MetricSummary> base;
  for (const auto& s : items.front().report.summarize()) base[{s.model, s.scenario, s.data_client}] = s;

  std::ostringstream cmp;
  cmp << "label,strategy,model,scenario,data_client,psnr,ssim,delta_psnr,delta_ssim\n";
  MetricReport table;
  bool baseline_added = false;
  for (const auto& it : items) {
    const auto strategy = to_string(it.cfg.federation.strategy);
    const std::string deployed = it.cfg.federation.strategy == Strategy::ssfedmri ? "personalized" : "global";
    for (const auto& s : it.report.summarize()) {
      if (s.method == "zero_filled" || s.method == "reference") continue;
      cmp << it.label << ',' << strategy << ',' << s.model << ',' << s.scenario << ',' << s.data_client << ','
          << format_metric(s.psnr, 4) << ',' << format_metric(s.ssim, 4) << ',';
      const auto b = base.find({s.model, s.scenario, s.data_client});
      if (b != base.end()) {
        cmp << format_metric(s.psnr - b->second.psnr, 4) << ',' << format_metric(s.ssim - b->second.ssim, 4);
      } else {
        cmp << ',';
      }
      cmp << '\n';
    }
    for (auto row : it.report.rows) {
      if (row.scenario != "own") continue;
      if (row.method == "zero_filled") {
        if (baseline_added) continue;
      } else if (row.model != deployed) {
        continue;
      } else {
        row.method = it.label;
      }
      table.rows.push_back(row);
    }
    baseline_added = true;
  }

  std::ostringstream curves;
  curves << "label,round,client_id,loss_total,loss_uc,loss_cc,v_k,discrepancy_norm\n";
  std::ostringstream cost;
  cost << "label,strategy,clients,params_per_message,rounds,parameters,bytes,messages\n";
  for (const auto& it : items) {
    std::istringstream is(detail::read_text(it.dir / "rounds.csv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) f.push_back(cell);
      if (f.size() < 7) throw RuntimeFailure("malformed rounds.csv in " + it.dir.string());
      curves << it.label << ',' << f[0] << ',' << f[1] << ',' << f[2] << ',' << f[3] << ',' << f[4] << ',' << f[5]
             << ',' << f[6] << '\n';
    }
    const std::uint64_t k = it.cfg.clients.size();
    const std::uint64_t w = 2 * it.cfg.federation.denoiser.param_count();
    const std::uint64_t r = static_cast<std::uint64_t>(it.cfg.federation.rounds);
    const auto c = communication_cost(k, w, r);
    cost << it.label << ',' << to_string(it.cfg.federation.strategy) << ',' << k << ',' << w << ',' << r << ','
         << c.parameters << ',' << c.bytes << ',' << c.messages << '\n';
  }

  fs::create_directories(out_dir);
  for (const char* f : {"comparison.csv", "table.txt", "curves.csv", "cost.csv", "manifest.json"}) fs::remove(out_dir / f);
  detail::write_text(out_dir / "comparison.csv", cmp.str());
  detail::write_text(out_dir / "table.txt", table.to_table());
  detail::write_text(out_dir / "curves.csv", curves.str());
  detail::write_text(out_dir / "cost.csv", cost.str());
  write_manifest(out_dir);
  out << table.to_table() << "\n" << cost.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised federated MRI reconstruction simulator"};
  app.require_subcommand(1);

  Overrides o;
  bool force = false;
  bool resume = false;
  std::optional<int> stop_after;
  std::string run_dir;
  std::string split = "test";
  std::string mode = "own";
  bool reference = false;
  std::vector<std::string> compare_runs;
  std::string compare_out = "comparison";

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "master seed (overrides FEDRECON_SEED and the config file)");
    sub->add_option("--data", o.data_dir, "dataset directory");
  };

  auto* gen = app.add_subcommand("generate", "synthesize the client datasets");
  common(gen);
  gen->add_flag("--force", force, "replace existing datasets");

  auto* train = app.add_subcommand("train", "run a federation and write a run directory");
  common(train);
  train->add_option("-o,--out", o.output_dir, "run directory");
  train->add_option("--strategy", o.strategy, "ssfedmri | fedavg_ss | fedprox_ss");
  train->add_option("--rounds", o.rounds, "communication rounds");
  train->add_option("--tau", o.tau, "proximal weight");
  train->add_option("--lr", o.lr, "learning rate");
  train->add_option("--workers", o.workers, "parallel client workers");
  train->add_flag("--force", force, "replace an existing run directory");
  train->add_flag("--resume", resume, "continue the run in --out from its latest checkpoint");
  train->add_option("--stop-after", stop_after, "stop after this many rounds (resume later)");

  auto* evaluate = app.add_subcommand("evaluate", "score a finished run");
  evaluate->add_option("run", run_dir, "run directory")->required();
  evaluate->add_option("--data", o.data_dir, "dataset directory (default: the run's)");
  evaluate->add_option("--split", split, "train | val | test");
  evaluate->add_option("--mode", mode, "own | crossed | unseen | all");
  evaluate->add_flag("--reference", reference, "also score the ground truth against itself");

  auto* compare = app.add_subcommand("compare", "join evaluated runs into one ablation report");
  compare->add_option("runs", compare_runs, "evaluated run directories")->required();
  compare->add_option("-o,--out", compare_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(resolve(o), force, out);
    if (train->parsed()) {
      if (stop_after && *stop_after < 1) throw ConfigError("--stop-after must be >= 1");
      if (resume) {
        if (!o.output_dir) throw ConfigError("--resume needs --out <run directory>");
        RunConfig placeholder;
        placeholder.output_dir = *o.output_dir;
        return cmd_train(placeholder, false, true, stop_after, o.workers, out, err);
      }
      return cmd_train(resolve(o), force, false, stop_after, std::nullopt, out, err);
    }
    if (evaluate->parsed()) return cmd_evaluate(run_dir, o.data_dir, split, mode, reference, out);
    if (compare->parsed()) return cmd_compare(compare_runs, compare_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace fedrecon
