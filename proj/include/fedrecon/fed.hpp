#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrecon/data.hpp"
#include "fedrecon/model.hpp"
#include "fedrecon/selfsup.hpp"

namespace fedrecon {

enum class Strategy { ssfedmri, fedavg_ss, fedprox_ss };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct FederationConfig {
  int rounds = 30;
  int local_epochs_first = 4;
  int local_epochs_rest = 1;
  double beta = 0.8;
  Strategy strategy = Strategy::ssfedmri;
  double tau = 0.01;  // must be 0 for fedavg_ss and > 0 for fedprox_ss
  double gamma = 0.01;
  double lr = 1e-4;
  double split_rho = 0.6;
  int batch_size = 4;
  std::uint64_t seed = 0;
  bool weighted_aggregation = false;   // weight clients by training-set size
  std::optional<double> sigma_override;  // replaces the calibrated sigma_k of every client
  InferMode infer_mode = InferMode::mean;
  DenoiserConfig denoiser;
  UnrollConfig unroll;

  void validate() const;
  LocalHyper hyper() const;
  // Epochs trained by one client before round `round` (1-based) starts.
  long long epochs_before(int round) const;
  int epochs_in(int round) const;
};

using ParamPairF = ParamPair<float>;

// Elementwise mean, branch-wise. Each coordinate is min + sum(w_i (x_i - min)) / sum(w_i)
// over the values sorted ascending, accumulated in double: independent of client
// order and exact on identical inputs.
template <typename Real>
BasicParamVector<Real> aggregate(std::span<const BasicParamVector<Real>> params,
                                 std::span<const double> weights = {});
template <typename Real>
ParamPair<Real> aggregate(std::span<const ParamPair<Real>> params, std::span<const double> weights = {});

// beta / ||theta_g - theta_k||. Throws DegenerateCalibration when the distance is zero.
template <typename Real>
double calibrate_sigma(const ParamPair<Real>& theta_g, const ParamPair<Real>& theta_k, double beta);

template <typename Real>
struct SoftUpdate {
  ParamPair<Real> theta;
  double v = 0.0;
  double discrepancy = 0.0;
};

// v = 1 - min(1, sigma ||theta_g - theta_k||);  theta_hat = (1 - v) theta_k + v theta_g.
template <typename Real>
SoftUpdate<Real> soft_update(const ParamPair<Real>& theta_k, const ParamPair<Real>& theta_g, double sigma);

struct CommunicationCost {
  std::uint64_t parameters = 0;  // 2 K |w| T
  std::uint64_t bytes = 0;       // 4 bytes per parameter
  std::uint64_t messages = 0;    // one upload and one download per client per round
};

CommunicationCost communication_cost(std::uint64_t clients, std::uint64_t params_per_message, std::uint64_t rounds);

struct ClientState {
  int id = 0;
  BranchPair<float> branches;
  std::optional<double> sigma;
  double last_loss = 0.0;

  friend bool operator==(const ClientState&, const ClientState&) = default;
};

struct ClientRoundRecord {
  int client_id = 0;
  double loss_total = 0.0;  // means over the round's steps
  double loss_rec = 0.0;
  double loss_uc = 0.0;
  double loss_cc = 0.0;
  double prox = 0.0;
  double v = 1.0;            // weight on the global model when the round started
  double discrepancy = 0.0;  // ||theta_g - theta_k|| after this round's aggregation
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  double psnr_val = std::numeric_limits<double>::quiet_NaN();
  double ssim_val = std::numeric_limits<double>::quiet_NaN();
  int steps = 0;
  ReconTelemetry telemetry;
};

struct RoundRecord {
  int round = 0;
  std::vector<ClientRoundRecord> clients;  // ordered by client id
  double wall_seconds = 0.0;
};

struct FederationState {
  int next_round = 1;
  ParamPairF global;
  std::vector<ClientState> clients;  // ordered by client id

  friend bool operator==(const FederationState&, const FederationState&) = default;
};

// Thrown when a client fails during a round. Nothing from the round is aggregated
// or committed; `partial` holds the records of the clients that did finish.
class RoundAborted : public std::runtime_error {
 public:
  RoundAborted(int round, int client_id, const std::string& cause, RoundRecord partial);
  int round() const noexcept { return round_; }
  int client_id() const noexcept { return client_id_; }
  const RoundRecord& partial() const noexcept { return partial_; }

 private:
  int round_;
  int client_id_;
  RoundRecord partial_;
};

// Model a client deploys: its personalized pair under ssfedmri, the global pair otherwise.
const ParamPairF& deployed_params(Strategy strategy, const FederationState& state, std::size_t client_index);

struct FederationHooks {
  // Validation metrics for (client id, deployed pair) -> (psnr, ssim); called every
  // `metric_every` rounds and at the last round when set.
  std::function<std::pair<double, double>(int, const ParamPairF&)> validate;
  int metric_every = 5;
  // Called after every committed round.
  std::function<void(const RoundRecord&, const FederationState&)> on_round;
  int workers = 1;
  // Run at most this many rounds in this call (resume later from the returned state).
  std::optional<int> stop_after;
  // Test hook: called before each client's local training; may throw.
  std::function<void(int round, int client_id)> before_client;
};

// Server initialization shared by every client.
ParamPairF initial_global(const FederationConfig& cfg);

FederationState initial_state(const FederationConfig& cfg, std::span<const KspaceDataset> clients);

struct FederationResult {
  FederationState state;
  std::vector<RoundRecord> rounds;
};

FederationResult run_federation(const FederationConfig& cfg, std::span<const KspaceDataset> clients,
                                const FederationHooks& hooks = {});
FederationResult run_federation(const FederationConfig& cfg, std::span<const KspaceDataset> clients,
                                FederationState state, const FederationHooks& hooks = {});

struct EpochSummary {
  StepRecord mean;
  int steps = 0;
};

// `epochs` epochs of self-supervised training for one client. Epoch e (0-based,
// counted over the client's whole training history starting at `first_epoch`)
// draws its shuffling and mask splits from streams keyed by (seed, client id, e).
EpochSummary train_epochs(BranchPair<float>& branches, const ParamPairF& theta_g, const KspaceDataset& data,
                          const FederationConfig& cfg, long long first_epoch, int epochs);

// Standalone local self-supervised training from the server initialization.
BranchPair<float> train_local(const FederationConfig& cfg, const KspaceDataset& data, long long epochs);

}  // namespace fedrecon
