#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fedrecon/checkpoint.hpp"
#include "fedrecon/errors.hpp"
#include "fedrecon/fed.hpp"
#include "support.hpp"

using namespace fedrecon;

namespace {

using PairD = ParamPair<double>;

DenoiserConfig tiny_net() {
  DenoiserConfig c;
  c.layers = 3;
  c.filters = 4;
  return c;
}

PairD random_pair(const DenoiserConfig& c, CounterRng& rng, double scale = 1.0) {
  PairD p{ParamVectorD(c), ParamVectorD(c)};
  for (auto& v : p.a.values) v = scale * rng.normal();
  for (auto& v : p.b.values) v = scale * rng.normal();
  return p;
}

ParamPairF param_cast_pair(const PairD& p) { return {param_cast<float>(p.a), param_cast<float>(p.b)}; }

PairD scaled_diff(const PairD& x, const PairD& y, double s) {
  PairD d = x;
  for (std::size_t i = 0; i < d.a.size(); ++i) d.a.values[i] = s * (x.a.values[i] - y.a.values[i]);
  for (std::size_t i = 0; i < d.b.size(); ++i) d.b.values[i] = s * (x.b.values[i] - y.b.values[i]);
  return d;
}

FederationConfig small_config(Strategy s, int rounds = 3) {
  FederationConfig cfg;
  cfg.strategy = s;
  cfg.tau = s == Strategy::fedavg_ss ? 0.0 : 0.01;
  cfg.rounds = rounds;
  cfg.local_epochs_first = 2;
  cfg.local_epochs_rest = 1;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  cfg.seed = 17;
  cfg.denoiser = tiny_net();
  cfg.unroll.iterations = 2;
  return cfg;
}

std::vector<KspaceDataset> small_clients(int k, std::uint64_t seed = 5) {
  std::vector<KspaceDataset> out;
  auto presets = desk_client_presets();
  for (int i = 0; i < k; ++i) {
    auto spec = presets[static_cast<std::size_t>(i % 4)];
    spec.id = i;
    spec.size = 32;
    spec.n_train = 3 + i % 2;
    spec.n_val = 1;
    spec.n_test = 1;
    auto rng = CounterRng(seed).derive(static_cast<std::uint64_t>(i));
    out.push_back(training_view(generate_phantom_dataset(spec, MaskSpec{4.0, 0.125}, rng)));
  }
  return out;
}

std::vector<std::uint8_t> read_bytes(const std::string& name) {
  std::ifstream in(std::string(FEDRECON_FIXTURES) + "/" + name, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), {}};
}

void same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t r = 0; r < a.size(); ++r) {
    REQUIRE(a[r].clients.size() == b[r].clients.size());
    CHECK(a[r].round == b[r].round);
    for (std::size_t i = 0; i < a[r].clients.size(); ++i) {
      const auto& x = a[r].clients[i];
      const auto& y = b[r].clients[i];
      CHECK(x.client_id == y.client_id);
      CHECK(x.loss_total == y.loss_total);
      CHECK(x.loss_uc == y.loss_uc);
      CHECK(x.loss_cc == y.loss_cc);
      CHECK(x.v == y.v);
      CHECK(x.discrepancy == y.discrepancy);
      CHECK(x.bytes_up == y.bytes_up);
    }
  }
}

}  // namespace

TEST_CASE("aggregate matches a direct elementwise mean") {
  CounterRng rng(1);
  const auto c = tiny_net();
  std::vector<PairD> ps;
  for (int i = 0; i < 3; ++i) ps.push_back(random_pair(c, rng));
  const auto m = aggregate<double>(ps);
  for (std::size_t j = 0; j < m.a.size(); ++j) {
    const double ea = (ps[0].a.values[j] + ps[1].a.values[j] + ps[2].a.values[j]) / 3.0;
    const double eb = (ps[0].b.values[j] + ps[1].b.values[j] + ps[2].b.values[j]) / 3.0;
    CHECK(std::abs(m.a.values[j] - ea) <= 1e-12);
    CHECK(std::abs(m.b.values[j] - eb) <= 1e-12);
  }
}

TEST_CASE("aggregate is permutation invariant and idempotent") {
  CounterRng rng(2);
  const auto c = tiny_net();
  std::vector<ParamPairF> ps;
  for (int i = 0; i < 5; ++i) ps.push_back(param_cast_pair(random_pair(c, rng)));
  const auto base = aggregate<float>(ps);
  auto perm = ps;
  for (int t = 0; t < 20; ++t) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    CHECK(aggregate<float>(perm) == base);
  }
  const std::vector<ParamPairF> copies(4, base);
  CHECK(aggregate<float>(copies) == base);
  std::vector<PairD> one{random_pair(c, rng)};
  CHECK(aggregate<double>(one) == one[0]);
}

TEST_CASE("aggregate of theta and -theta is zero") {
  CounterRng rng(3);
  const auto p = random_pair(tiny_net(), rng);
  auto q = p;
  for (auto& v : q.a.values) v = -v;
  for (auto& v : q.b.values) v = -v;
  const std::vector<PairD> ps{p, q};
  const auto m = aggregate<double>(ps);
  for (double v : m.a.values) CHECK(v == 0.0);
  for (double v : m.b.values) CHECK(v == 0.0);
}

TEST_CASE("weighted aggregation") {
  CounterRng rng(4);
  const auto c = tiny_net();
  std::vector<PairD> ps{random_pair(c, rng), random_pair(c, rng)};
  const std::vector<double> w{3.0, 1.0};
  const auto m = aggregate<double>(ps, w);
  for (std::size_t j = 0; j < m.a.size(); ++j) {
    CHECK(m.a.values[j] == doctest::Approx(0.75 * ps[0].a.values[j] + 0.25 * ps[1].a.values[j]).epsilon(1e-12));
  }
  const std::vector<double> bad{1.0};
  CHECK_THROWS(aggregate<double>(ps, bad));
}

TEST_CASE("aggregate rejects empty or heterogeneous inputs") {
  CounterRng rng(5);
  std::vector<PairD> none;
  CHECK_THROWS_AS(aggregate<double>(none), ProtocolError);
  auto other = tiny_net();
  other.filters = 5;
  std::vector<PairD> mixed{random_pair(tiny_net(), rng), random_pair(other, rng)};
  CHECK_THROWS_AS(aggregate<double>(mixed), ProtocolError);
}

TEST_CASE("sigma calibration") {
  CounterRng rng(6);
  const auto c = tiny_net();
  const auto g = random_pair(c, rng);
  auto d = random_pair(c, rng);
  const double n = distance(d, scaled_diff(d, d, 0.0));
  auto k = g;
  // theta_k = theta_g + 0.8 * d / |d|, so |delta| = 0.8
  for (std::size_t i = 0; i < k.a.size(); ++i) k.a.values[i] += 0.8 * d.a.values[i] / n;
  for (std::size_t i = 0; i < k.b.size(); ++i) k.b.values[i] += 0.8 * d.b.values[i] / n;
  CHECK(calibrate_sigma(g, k, 0.8) == doctest::Approx(1.0).epsilon(1e-12));
  auto k2 = g;
  for (std::size_t i = 0; i < k2.a.size(); ++i) k2.a.values[i] += 1.6 * d.a.values[i] / n;
  for (std::size_t i = 0; i < k2.b.size(); ++i) k2.b.values[i] += 1.6 * d.b.values[i] / n;
  CHECK(calibrate_sigma(g, k2, 0.8) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(calibrate_sigma(g, g, 0.8), DegenerateCalibration);
  const double s = calibrate_sigma(g, k2, 0.8);
  CHECK(soft_update(k2, g, s).v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("soft update algebra") {
  CounterRng rng(7);
  const auto c = tiny_net();
  SUBCASE("sigma = 0 reproduces plain averaging bitwise") {
    const auto k = param_cast_pair(random_pair(c, rng));
    const auto g = param_cast_pair(random_pair(c, rng));
    const auto u = soft_update(k, g, 0.0);
    CHECK(u.v == 1.0);
    CHECK(u.theta == g);
  }
  SUBCASE("discrepancy beyond 1 / sigma keeps the local model") {
    const auto k = random_pair(c, rng);
    const auto g = random_pair(c, rng);
    const double d = distance(k, g);
    for (double s : {1.0 / d, 2.0 / d, 100.0}) {
      const auto u = soft_update(k, g, s);
      CHECK(u.v == 0.0);
      CHECK(u.theta == k);
    }
  }
  SUBCASE("equal models") {
    const auto k = random_pair(c, rng);
    const auto u = soft_update(k, k, 3.0);
    CHECK(u.v == 1.0);
    CHECK(u.theta == k);
  }
  SUBCASE("interpolation identity on random vectors") {
    for (int t = 0; t < 100; ++t) {
      const auto k = random_pair(c, rng);
      const auto g = random_pair(c, rng);
      const double d = distance(k, g);
      const double sigma = rng.uniform(0.0, 1.2) / d;
      const auto u = soft_update(k, g, sigma);
      CHECK(u.v >= 0.0);
      CHECK(u.v <= 1.0);
      CHECK(u.discrepancy == doctest::Approx(d).epsilon(1e-14));
      CHECK(std::abs(distance(u.theta, g) - (1.0 - u.v) * d) <= 1e-12 * std::max(1.0, d));
      CHECK(std::abs(distance(u.theta, k) - u.v * d) <= 1e-12 * std::max(1.0, d));
    }
  }
  SUBCASE("v is non-increasing in the discrepancy for fixed sigma") {
    const auto g = random_pair(c, rng);
    const auto dir = random_pair(c, rng);
    double prev = 2.0;
    for (double scale = 0.0; scale < 3.0; scale += 0.1) {
      auto k = g;
      for (std::size_t i = 0; i < k.a.size(); ++i) k.a.values[i] += scale * dir.a.values[i];
      for (std::size_t i = 0; i < k.b.size(); ++i) k.b.values[i] += scale * dir.b.values[i];
      const double v = soft_update(k, g, 0.05).v;
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("communication cost arithmetic") {
  const auto c = communication_cost(4, 230000, 200);
  CHECK(c.parameters == 368000000ULL);
  CHECK(c.bytes == 4ULL * 368000000ULL);
  CHECK(c.messages == 1600);
  CHECK(communication_cost(4, 230000, 0).parameters == 0);
  // Per-round cost relative to the larger models
  const double vs_mrcm = static_cast<double>(communication_cost(4, 230000, 1).parameters) /
                         static_cast<double>(communication_cost(4, 7760000, 1).parameters);
  const double vs_fedmri_server = static_cast<double>(communication_cost(4, 230000, 1).parameters) /
                                  static_cast<double>(communication_cost(4, 4710000, 1).parameters);
  CHECK(std::round(vs_mrcm * 10000) / 100 == doctest::Approx(2.96));
  CHECK(std::round(vs_fedmri_server * 10000) / 100 == doctest::Approx(4.88));
  const std::uint64_t pair = 2 * DenoiserConfig{}.param_count();
  CHECK(communication_cost(4, pair, 30).parameters == 2ULL * 4 * 15108 * 30);
}

TEST_CASE("config validation per strategy") {
  auto cfg = small_config(Strategy::fedavg_ss);
  cfg.tau = 0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Strategy::fedprox_ss);
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Strategy::ssfedmri);
  cfg.tau = 0.0;
  CHECK_NOTHROW(cfg.validate());
  CHECK(strategy_from_string(to_string(Strategy::fedprox_ss)) == Strategy::fedprox_ss);
  CHECK_THROWS_AS(strategy_from_string("fedavg"), ConfigError);
}

TEST_CASE("epoch schedule") {
  auto cfg = small_config(Strategy::ssfedmri);
  cfg.local_epochs_first = 4;
  cfg.local_epochs_rest = 2;
  CHECK(cfg.epochs_in(1) == 4);
  CHECK(cfg.epochs_in(2) == 2);
  CHECK(cfg.epochs_before(1) == 0);
  CHECK(cfg.epochs_before(2) == 4);
  CHECK(cfg.epochs_before(5) == 10);
}

TEST_CASE("one-client plain averaging equals standalone local training bitwise") {
  const auto clients = small_clients(1);
  for (int rounds : {1, 3}) {
    const auto cfg = small_config(Strategy::fedavg_ss, rounds);
    const auto fed = run_federation(cfg, clients);
    const auto local = train_local(cfg, clients[0], cfg.epochs_before(rounds + 1));
    CHECK(fed.state.global == local.params);
    CHECK(fed.state.clients[0].branches == local);
  }
}

TEST_CASE("ssfedmri with sigma forced to 0 and tau 0 follows plain averaging step for step") {
  const auto clients = small_clients(3);
  auto avg = small_config(Strategy::fedavg_ss);
  auto soft = small_config(Strategy::ssfedmri);
  soft.tau = 0.0;
  soft.sigma_override = 0.0;
  const auto a = run_federation(avg, clients);
  const auto b = run_federation(soft, clients);
  CHECK(a.state.global == b.state.global);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.state.clients[i].branches == b.state.clients[i].branches);
  for (std::size_t r = 0; r < a.rounds.size(); ++r) {
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.rounds[r].clients[i].loss_total == b.rounds[r].clients[i].loss_total);
  }
}

TEST_CASE("federation is deterministic and independent of worker count") {
  const auto clients = small_clients(3);
  const auto cfg = small_config(Strategy::ssfedmri);
  FederationHooks one;
  FederationHooks three;
  three.workers = 3;
  const auto a = run_federation(cfg, clients, one);
  const auto b = run_federation(cfg, clients, one);
  const auto c = run_federation(cfg, clients, three);
  CHECK(a.state == b.state);
  CHECK(a.state == c.state);
  same_records(a.rounds, c.rounds);
}

TEST_CASE("ssfedmri round records") {
  const auto clients = small_clients(2);
  const auto cfg = small_config(Strategy::ssfedmri, 3);
  const auto res = run_federation(cfg, clients);
  REQUIRE(res.rounds.size() == 3);
  for (const auto& c : res.rounds[0].clients) CHECK(c.v == 1.0);
  // Round 2 starts from exactly the calibration discrepancy: v = 1 - beta.
  for (const auto& c : res.rounds[1].clients) CHECK(c.v == doctest::Approx(0.2).epsilon(1e-5));
  for (const auto& st : res.state.clients) REQUIRE(st.sigma.has_value());
  std::uint64_t bytes = 0;
  for (const auto& r : res.rounds) {
    for (const auto& c : r.clients) {
      bytes += c.bytes_up + c.bytes_down;
      CHECK(c.v >= 0.0);
      CHECK(c.v <= 1.0);
      CHECK(c.steps > 0);
    }
  }
  CHECK(bytes == communication_cost(2, 2 * cfg.denoiser.param_count(), 3).bytes);
}

TEST_CASE("plain averaging and proximal variants keep every client on the global model") {
  const auto clients = small_clients(2);
  for (auto s : {Strategy::fedavg_ss, Strategy::fedprox_ss}) {
    const auto res = run_federation(small_config(s, 2), clients);
    for (const auto& r : res.rounds) {
      for (const auto& c : r.clients) CHECK(c.v == 1.0);
    }
    CHECK(&deployed_params(s, res.state, 1) == &res.state.global);
  }
  const auto res = run_federation(small_config(Strategy::ssfedmri, 2), clients);
  CHECK(&deployed_params(Strategy::ssfedmri, res.state, 1) == &res.state.clients[1].branches.params);
}

TEST_CASE("resuming from a stopped run reproduces the uninterrupted run") {
  const auto clients = small_clients(2);
  const auto cfg = small_config(Strategy::ssfedmri, 4);
  const auto full = run_federation(cfg, clients);
  FederationHooks h;
  h.stop_after = 2;
  const auto first = run_federation(cfg, clients, h);
  CHECK(first.rounds.size() == 2);
  CHECK(first.state.next_round == 3);

  testing::TempDir dir("fedstate");
  save_federation_state(dir.path(), first.state, cfg);
  const auto loaded = load_federation_state(dir.path(), cfg);
  CHECK(loaded == first.state);
  const auto rest = run_federation(cfg, clients, loaded);
  CHECK(rest.state == full.state);
  auto all = first.rounds;
  all.insert(all.end(), rest.rounds.begin(), rest.rounds.end());
  same_records(all, full.rounds);
}

TEST_CASE("a failing client aborts the round without committing it") {
  const auto clients = small_clients(3);
  const auto cfg = small_config(Strategy::ssfedmri, 3);
  FederationHooks h;
  std::vector<int> committed;
  h.on_round = [&](const RoundRecord& r, const FederationState&) { committed.push_back(r.round); };
  h.before_client = [](int round, int id) {
    if (round == 2 && id == 2) throw std::runtime_error("disk full");
  };
  try {
    run_federation(cfg, clients, h);
    FAIL("expected RoundAborted");
  } catch (const RoundAborted& e) {
    CHECK(e.round() == 2);
    CHECK(e.client_id() == 2);
    CHECK(std::string(e.what()).find("disk full") != std::string::npos);
    REQUIRE(e.partial().clients.size() == 2);
    CHECK(e.partial().clients[0].client_id == 0);
    CHECK(e.partial().clients[1].client_id == 1);
  }
  CHECK(committed == std::vector<int>{1});
}

TEST_CASE("validation hook cadence") {
  const auto clients = small_clients(2);
  const auto cfg = small_config(Strategy::ssfedmri, 5);
  FederationHooks h;
  h.metric_every = 2;
  std::vector<int> seen;
  h.validate = [](int id, const ParamPairF&) { return std::make_pair(10.0 + id, 0.5); };
  h.on_round = [&](const RoundRecord& r, const FederationState&) {
    if (!std::isnan(r.clients[0].psnr_val)) seen.push_back(r.round);
  };
  const auto res = run_federation(cfg, clients, h);
  CHECK(seen == std::vector<int>{2, 4, 5});
  CHECK(res.rounds[1].clients[1].psnr_val == 11.0);
}

TEST_CASE("SSFM fixture decodes and re-encodes byte-exactly") {
  const auto bytes = read_bytes("valid.ssfm");
  const auto ck = decode_ssfm(bytes);
  CHECK(ck.meta.denoiser.layers == 2);
  CHECK(ck.meta.denoiser.filters == 1);
  CHECK(ck.meta.denoiser.kernel == 1);
  CHECK(ck.meta.round == 3);
  CHECK(ck.meta.branch == "b");
  CHECK(ck.meta.unroll.iterations == 5);
  REQUIRE(ck.params.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(ck.params.values[i] == 0.25f * static_cast<float>(i) - 1.0f);
  CHECK(encode_ssfm(ck.params, ck.meta) == bytes);
}

TEST_CASE("SSFM round-trip of random parameters, including non-finite values") {
  CounterRng rng(8);
  ParamVector p(DenoiserConfig{});
  for (auto& v : p.values) v = static_cast<float>(rng.normal());
  p.values[3] = -0.0f;
  p.values[4] = std::numeric_limits<float>::denorm_min();
  const CheckpointMeta meta{DenoiserConfig{}, UnrollConfig{}, 12, "rms_a"};
  const auto bytes = encode_ssfm(p, meta);
  CHECK(bytes.size() == 12 + (bytes.size() - 12 - 4 * p.size()) + 4 * p.size());
  const auto back = decode_ssfm(bytes);
  CHECK(back.meta == meta);
  CHECK(std::memcmp(back.params.values.data(), p.values.data(), 4 * p.size()) == 0);
  CHECK(encode_ssfm(back.params, back.meta) == bytes);

  testing::TempDir dir("ssfm");
  save_checkpoint(dir / "x.ssfm", p, meta);
  CHECK(load_checkpoint(dir / "x.ssfm").params == p);
  CHECK_THROWS_AS(encode_ssfm(ParamVector(tiny_net()), meta), ShapeError);
}

TEST_CASE("corrupted SSFM fixtures") {
  const auto expect = [](const char* name, std::size_t offset, const char* fragment) {
    CAPTURE(name);
    try {
      decode_ssfm(read_bytes(name));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == offset);
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  const std::size_t header = read_bytes("valid.ssfm").size() - 7 * 4;
  expect("bad_magic.ssfm", 0, "magic");
  expect("bad_version.ssfm", 4, "version 2");
  expect("truncated.ssfm", header, "expected 28 bytes");
  expect("trailing.ssfm", header, "found 32");
  expect("bad_json.ssfm", 12, "malformed JSON");
  expect("unknown_key.ssfm", 12, "extra");
  expect("short_header.ssfm", 8, "header length");

  testing::TempDir dir("badssfm");
  const auto bytes = read_bytes("bad_magic.ssfm");
  std::ofstream(dir / "bad.ssfm", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  try {
    load_checkpoint(dir / "bad.ssfm");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad.ssfm") != std::string::npos);
  }
}

TEST_CASE("loading a pair checks the denoiser configuration and branch") {
  testing::TempDir dir("pair");
  auto cfg = small_config(Strategy::ssfedmri);
  const auto g = initial_global(cfg);
  save_pair(dir.path(), "global", g, cfg, 1);
  CHECK(load_pair(dir.path(), "global", cfg) == g);
  auto other = cfg;
  other.denoiser.filters = 6;
  CHECK_THROWS_AS(load_pair(dir.path(), "global", other), ConfigError);
  std::filesystem::copy_file(dir / "global_a.ssfm", dir / "swap_b.ssfm");
  std::filesystem::copy_file(dir / "global_a.ssfm", dir / "swap_a.ssfm");
  CHECK_THROWS_AS(load_pair(dir.path(), "swap", cfg), ConfigError);
}
