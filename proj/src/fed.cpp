#include "fedrecon/fed.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedrecon/errors.hpp"

namespace fedrecon {
namespace {

constexpr std::uint64_t kServerInitStream = 0x5E4E;
constexpr std::uint64_t kClientStreams = 0xC11E;
constexpr std::uint64_t kShuffleStream = 0;

CounterRng client_stream(std::uint64_t seed, int client_id) {
  return CounterRng(seed).derive(kClientStreams).derive(static_cast<std::uint64_t>(client_id));
}

std::vector<std::size_t> shuffled(std::size_t n, CounterRng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void accumulate(StepRecord& into, const StepRecord& r) {
  into.loss_total += r.loss_total;
  into.loss_rec += r.loss_rec;
  into.loss_uc += r.loss_uc;
  into.loss_cc += r.loss_cc;
  into.prox += r.prox;
  into.telemetry.merge(r.telemetry);
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::ssfedmri: return "ssfedmri";
    case Strategy::fedavg_ss: return "fedavg_ss";
    case Strategy::fedprox_ss: return "fedprox_ss";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "ssfedmri") return Strategy::ssfedmri;
  if (s == "fedavg_ss") return Strategy::fedavg_ss;
  if (s == "fedprox_ss") return Strategy::fedprox_ss;
  throw ConfigError("unknown strategy '" + s + "' (expected ssfedmri, fedavg_ss or fedprox_ss)");
}

void FederationConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_epochs_first < 1 || local_epochs_rest < 1) throw ConfigError("local epochs must be >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta must be in (0, 1]");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a finite non-negative number");
  if (strategy == Strategy::fedavg_ss && tau != 0.0) throw ConfigError("fedavg_ss trains without the proximal term (tau must be 0)");
  if (strategy == Strategy::fedprox_ss && !(tau > 0.0)) throw ConfigError("fedprox_ss needs tau > 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite non-negative number");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(split_rho > 0.0 && split_rho <= 1.0)) throw ConfigError("split_rho must be in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (sigma_override && !(*sigma_override >= 0.0)) throw ConfigError("sigma override must be non-negative");
  denoiser.validate();
  unroll.validate();
}

LocalHyper FederationConfig::hyper() const {
  LocalHyper h;
  h.gamma = gamma;
  h.tau = tau;
  h.lr = lr;
  h.split_rho = split_rho;
  return h;
}

long long FederationConfig::epochs_before(int round) const {
  if (round <= 1) return 0;
  return local_epochs_first + static_cast<long long>(round - 2) * local_epochs_rest;
}

int FederationConfig::epochs_in(int round) const { return round == 1 ? local_epochs_first : local_epochs_rest; }

template <typename Real>
BasicParamVector<Real> aggregate(std::span<const BasicParamVector<Real>> params, std::span<const double> weights) {
  if (params.empty()) throw ProtocolError("aggregate: no parameter vectors");
  if (!weights.empty() && weights.size() != params.size()) throw ProtocolError("aggregate: one weight per client required");
  for (const auto& p : params) {
    if (p.config_hash() != params[0].config_hash() || p.size() != params[0].size()) {
      throw ProtocolError("aggregate: heterogeneous parameter configurations");
    }
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ProtocolError("aggregate: weights must be positive");
    wsum += w;
  }
  const std::size_t k = params.size();
  BasicParamVector<Real> out = params[0];
  std::vector<std::pair<Real, double>> column(k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) column[c] = {params[c].values[i], weights.empty() ? 1.0 : weights[c]};
    std::sort(column.begin(), column.end());
    const double lo = static_cast<double>(column[0].first);
    double acc = 0.0;
    for (const auto& [v, w] : column) acc += w * (static_cast<double>(v) - lo);
    out.values[i] = static_cast<Real>(lo + acc / (weights.empty() ? static_cast<double>(k) : wsum));
  }
  return out;
}

template <typename Real>
ParamPair<Real> aggregate(std::span<const ParamPair<Real>> params, std::span<const double> weights) {
  if (params.empty()) throw ProtocolError("aggregate: no parameter pairs");
  std::vector<BasicParamVector<Real>> a;
  std::vector<BasicParamVector<Real>> b;
  for (const auto& p : params) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  return {aggregate<Real>(a, weights), aggregate<Real>(b, weights)};
}

template <typename Real>
double calibrate_sigma(const ParamPair<Real>& theta_g, const ParamPair<Real>& theta_k, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("beta must be in (0, 1]");
  const double d = distance(theta_g, theta_k);
  if (!(d > 0.0)) throw DegenerateCalibration("local and global models coincide; sigma is undefined");
  return beta / d;
}

template <typename Real>
SoftUpdate<Real> soft_update(const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("sigma must be non-negative");
  require_compatible(theta_k, theta_g, "soft_update");
  SoftUpdate<Real> out;
  out.discrepancy = distance(theta_g, theta_k);
  out.v = 1.0 - std::min(1.0, sigma * out.discrepancy);
  out.theta = theta_k;
  const double keep = 1.0 - out.v;
  const auto mix = [&](std::vector<Real>& dst, const std::vector<Real>& local, const std::vector<Real>& global) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<Real>(keep * static_cast<double>(local[i]) + out.v * static_cast<double>(global[i]));
    }
  };
  mix(out.theta.a.values, theta_k.a.values, theta_g.a.values);
  mix(out.theta.b.values, theta_k.b.values, theta_g.b.values);
  return out;
}

CommunicationCost communication_cost(std::uint64_t clients, std::uint64_t params_per_message, std::uint64_t rounds) {
  CommunicationCost c;
  c.parameters = 2 * clients * params_per_message * rounds;
  c.bytes = 4 * c.parameters;
  c.messages = 2 * clients * rounds;
  return c;
}

RoundAborted::RoundAborted(int round, int client_id, const std::string& cause, RoundRecord partial)
    : std::runtime_error("round " + std::to_string(round) + " aborted: client " + std::to_string(client_id) +
                         " failed: " + cause),
      round_(round),
      client_id_(client_id),
      partial_(std::move(partial)) {}

const ParamPairF& deployed_params(Strategy strategy, const FederationState& state, std::size_t client_index) {
  if (strategy == Strategy::ssfedmri) return state.clients.at(client_index).branches.params;
  return state.global;
}

ParamPairF initial_global(const FederationConfig& cfg) {
  auto rng = CounterRng(cfg.seed).derive(kServerInitStream);
  return init_branches<float>(cfg.denoiser, rng).params;
}

FederationState initial_state(const FederationConfig& cfg, std::span<const KspaceDataset> clients) {
  FederationState s;
  s.global = initial_global(cfg);
  for (const auto& d : clients) {
    ClientState c;
    c.id = d.client_id;
    c.branches = BranchPair<float>(s.global);
    s.clients.push_back(std::move(c));
  }
  std::sort(s.clients.begin(), s.clients.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  return s;
}

EpochSummary train_epochs(BranchPair<float>& branches, const ParamPairF& theta_g, const KspaceDataset& data,
                          const FederationConfig& cfg, long long first_epoch, int epochs) {
  if (data.kspace.empty()) throw ConfigError("client " + std::to_string(data.client_id) + " has no training data");
  const auto hyper = cfg.hyper();
  const auto stream = client_stream(cfg.seed, data.client_id);
  const std::size_t n = data.kspace.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  EpochSummary summary;
  std::vector<ComplexImage> batch;
  for (int e = 0; e < epochs; ++e) {
    const auto epoch_rng = stream.derive(static_cast<std::uint64_t>(first_epoch + e));
    const auto order = shuffled(n, epoch_rng.derive(kShuffleStream));
    std::uint64_t step = 0;
    for (std::size_t begin = 0; begin < n; begin += bs, ++step) {
      batch.clear();
      for (std::size_t j = begin; j < std::min(n, begin + bs); ++j) batch.push_back(data.kspace[order[j]]);
      auto step_rng = epoch_rng.derive(1 + step);
      const auto rec = local_train_step<float>(branches, theta_g, data.omega, batch, hyper, cfg.unroll, step_rng);
      accumulate(summary.mean, rec);
      ++summary.steps;
    }
  }
  if (summary.steps > 0) {
    const double s = summary.steps;
    summary.mean.loss_total /= s;
    summary.mean.loss_rec /= s;
    summary.mean.loss_uc /= s;
    summary.mean.loss_cc /= s;
    summary.mean.prox /= s;
  }
  return summary;
}

BranchPair<float> train_local(const FederationConfig& cfg, const KspaceDataset& data, long long epochs) {
  cfg.validate();
  const auto init = initial_global(cfg);
  BranchPair<float> branches(init);
  if (epochs > 0) train_epochs(branches, init, data, cfg, 0, static_cast<int>(epochs));
  return branches;
}

FederationResult run_federation(const FederationConfig& cfg, std::span<const KspaceDataset> clients,
                                const FederationHooks& hooks) {
  return run_federation(cfg, clients, initial_state(cfg, clients), hooks);
}

FederationResult run_federation(const FederationConfig& cfg, std::span<const KspaceDataset> clients,
                                FederationState state, const FederationHooks& hooks) {
  cfg.validate();
  if (clients.empty()) throw ConfigError("federation needs at least one client");
  if (state.clients.size() != clients.size()) throw ProtocolError("state and datasets disagree on the number of clients");

  // Datasets are matched to client states by id, never by arrival order.
  std::vector<const KspaceDataset*> data(state.clients.size(), nullptr);
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    for (const auto& d : clients) {
      if (d.client_id == state.clients[i].id) {
        if (data[i]) throw ConfigError("duplicate client id " + std::to_string(d.client_id));
        data[i] = &d;
      }
    }
    if (!data[i]) throw ConfigError("no dataset for client " + std::to_string(state.clients[i].id));
  }
  std::vector<double> weights;
  if (cfg.weighted_aggregation) {
    for (const auto* d : data) weights.push_back(static_cast<double>(d->kspace.size()));
  }

  const std::uint64_t pair_bytes = 4 * static_cast<std::uint64_t>(state.global.size());
  const std::size_t k = state.clients.size();
  const int workers = std::clamp(hooks.workers, 1, static_cast<int>(k));

  FederationResult result;
  int done = 0;
  while (state.next_round <= cfg.rounds && (!hooks.stop_after || done < *hooks.stop_after)) {
    const int r = state.next_round;
    const auto t0 = std::chrono::steady_clock::now();
    const ParamPairF theta_g = state.global;  // snapshot received by every client

    std::vector<ClientState> next(state.clients);
    std::vector<ClientRoundRecord> recs(k);
    std::vector<std::exception_ptr> errors(k);
    std::vector<char> finished(k, 0);

    auto work = [&](std::size_t i) {
      try {
        ClientState& c = next[i];
        ClientRoundRecord& rec = recs[i];
        rec.client_id = c.id;
        if (hooks.before_client) hooks.before_client(r, c.id);
        if (r == 1 || cfg.strategy != Strategy::ssfedmri) {
          c.branches.params = theta_g;
          rec.v = 1.0;
        } else {
          const auto upd = soft_update(c.branches.params, theta_g, c.sigma.value_or(0.0));
          c.branches.params = upd.theta;
          rec.v = upd.v;
        }
        const auto summary =
            train_epochs(c.branches, theta_g, *data[i], cfg, cfg.epochs_before(r), cfg.epochs_in(r));
        rec.loss_total = summary.mean.loss_total;
        rec.loss_rec = summary.mean.loss_rec;
        rec.loss_uc = summary.mean.loss_uc;
        rec.loss_cc = summary.mean.loss_cc;
        rec.prox = summary.mean.prox;
        rec.telemetry = summary.mean.telemetry;
        rec.steps = summary.steps;
        rec.bytes_up = pair_bytes;
        rec.bytes_down = pair_bytes;
        c.last_loss = summary.mean.loss_total;
        finished[i] = 1;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };

    if (workers == 1) {
      for (std::size_t i = 0; i < k; ++i) work(i);
    } else {
      std::atomic<std::size_t> cursor{0};
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = cursor++; i < k; i = cursor++) work(i);
        });
      }
      for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < k; ++i) {
      if (!errors[i]) continue;
      RoundRecord partial;
      partial.round = r;
      for (std::size_t j = 0; j < k; ++j) {
        if (finished[j]) partial.clients.push_back(recs[j]);
      }
      std::string cause = "unknown error";
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        cause = e.what();
      } catch (...) {
      }
      throw RoundAborted(r, next[i].id, cause, std::move(partial));
    }

    std::vector<ParamPairF> uploads;
    for (const auto& c : next) uploads.push_back(c.branches.params);
    state.global = aggregate<float>(uploads, weights);
    state.clients = std::move(next);

    for (std::size_t i = 0; i < k; ++i) {
      auto& c = state.clients[i];
      recs[i].discrepancy = distance(state.global, c.branches.params);
      if (r == 1 && cfg.strategy == Strategy::ssfedmri) {
        if (cfg.sigma_override) {
          c.sigma = *cfg.sigma_override;
        } else {
          try {
            c.sigma = calibrate_sigma(state.global, c.branches.params, cfg.beta);
          } catch (const DegenerateCalibration&) {
            c.sigma = 0.0;
          }
        }
      }
    }

    state.next_round = r + 1;
    if (hooks.validate && (r % std::max(1, hooks.metric_every) == 0 || r == cfg.rounds)) {
      for (std::size_t i = 0; i < k; ++i) {
        const auto [p, s] = hooks.validate(state.clients[i].id, deployed_params(cfg.strategy, state, i));
        recs[i].psnr_val = p;
        recs[i].ssim_val = s;
      }
    }

    RoundRecord round;
    round.round = r;
    round.clients = std::move(recs);
    round.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_round) hooks.on_round(round, state);
    result.rounds.push_back(std::move(round));
    ++done;
  }
  result.state = std::move(state);
  return result;
}

template BasicParamVector<float> aggregate(std::span<const BasicParamVector<float>>, std::span<const double>);
template BasicParamVector<double> aggregate(std::span<const BasicParamVector<double>>, std::span<const double>);
template ParamPair<float> aggregate(std::span<const ParamPair<float>>, std::span<const double>);
template ParamPair<double> aggregate(std::span<const ParamPair<double>>, std::span<const double>);
template double calibrate_sigma(const ParamPair<float>&, const ParamPair<float>&, double);
template double calibrate_sigma(const ParamPair<double>&, const ParamPair<double>&, double);
template SoftUpdate<float> soft_update(const ParamPair<float>&, const ParamPair<float>&, double);
template SoftUpdate<double> soft_update(const ParamPair<double>&, const ParamPair<double>&, double);

}  // namespace fedrecon
