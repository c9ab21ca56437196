#include "fedrecon/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "fedrecon/detail/binio.hpp"
#include "fedrecon/hash.hpp"
#include "fedrecon/json_io.hpp"

namespace fedrecon {
namespace {

struct Ellipse {
  double intensity;
  double a;  // half-axis along x
  double b;  // half-axis along y
  double x0;
  double y0;
  double phi_deg;
};

// Modified Shepp-Logan (Toft) parameters.
constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

// The first two ellipses of every family form the head (skull + brain); the
// rest are internal structures affected by the contrast knob.
constexpr std::size_t kHeadEllipses = 2;

std::vector<Ellipse> shepp_logan_ellipses(CounterRng& rng) {
  const double scale = rng.uniform(0.95, 1.08);
  std::vector<Ellipse> out;
  for (std::size_t i = 0; i < kSheppLogan.size(); ++i) {
    Ellipse e = kSheppLogan[i];
    e.a *= scale;
    e.b *= scale;
    e.x0 *= scale;
    e.y0 *= scale;
    if (i >= kHeadEllipses) {
      e.x0 += rng.uniform(-0.03, 0.03);
      e.y0 += rng.uniform(-0.03, 0.03);
      e.a *= rng.uniform(0.85, 1.15);
      e.b *= rng.uniform(0.85, 1.15);
      e.intensity *= rng.uniform(0.8, 1.2);
    }
    out.push_back(e);
  }
  return out;
}

std::vector<Ellipse> random_ellipses(CounterRng& rng) {
  const double a = rng.uniform(0.66, 0.78);
  const double b = rng.uniform(0.84, 0.97);
  std::vector<Ellipse> out{{1.0, a, b, 0.0, 0.0, 0.0}, {-0.75, a - 0.05, b - 0.06, 0.0, -0.01, 0.0}};
  const int n = 6 + static_cast<int>(rng.below(5));
  for (int i = 0; i < n; ++i) {
    const double r = 0.55 * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Ellipse e{};
    e.x0 = r * a * std::cos(t);
    e.y0 = r * b * std::sin(t);
    e.a = rng.uniform(0.04, 0.22);
    e.b = rng.uniform(0.04, 0.22);
    e.phi_deg = rng.uniform(0.0, 180.0);
    e.intensity = rng.uniform(-0.2, 0.4);
    out.push_back(e);
  }
  return out;
}

bool inside(const Ellipse& e, double u, double v) {
  const double phi = e.phi_deg * std::numbers::pi / 180.0;
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const double dx = u - e.x0;
  const double dy = v - e.y0;
  const double xr = dx * c + dy * s;
  const double yr = -dx * s + dy * c;
  return (xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b) <= 1.0;
}

const char* domain_name(Domain d) { return d == Domain::image ? "image" : "kspace"; }

std::string sample_name(std::size_t i, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu_%s.cimg", i, kind);
  return buf;
}

}  // namespace

std::string to_string(PhantomFamily f) { return f == PhantomFamily::shepp_logan ? "shepp_logan" : "random_ellipses"; }

PhantomFamily phantom_family_from_string(const std::string& s) {
  if (s == "shepp_logan") return PhantomFamily::shepp_logan;
  if (s == "random_ellipses") return PhantomFamily::random_ellipses;
  throw ConfigError("unknown phantom_family \"" + s + "\"");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split \"" + s + "\"");
}

void ClientDatasetSpec::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("client dataset counts must be >= 1");
  if (size < 32) throw ConfigError("client image size must be >= 32");
  if (!(bias_field_strength >= 0.0) || !(rotation_range >= 0.0) || !(noise_sd >= 0.0)) {
    throw ConfigError("bias_field_strength, rotation_range and noise_sd must be non-negative");
  }
  if (!std::isfinite(contrast_scale)) throw ConfigError("contrast_scale must be finite");
}

const std::vector<Sample>& ClientDataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

KspaceDataset training_view(const ClientDataset& d, Split split) {
  KspaceDataset v;
  v.client_id = d.spec.id;
  v.omega = d.omega;
  for (const auto& s : d.split(split)) v.kspace.push_back(s.kspace);
  return v;
}

std::vector<ClientDatasetSpec> desk_client_presets() {
  std::vector<ClientDatasetSpec> out(4);
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)].id = i;
  out[1].contrast_scale = 0.5;
  out[1].bias_field_strength = 0.3;
  out[1].rotation_range = 10.0;
  out[1].noise_sd = 0.002;
  out[2].phantom_family = PhantomFamily::random_ellipses;
  out[2].contrast_scale = -0.3;
  out[2].bias_field_strength = 0.2;
  out[2].rotation_range = 20.0;
  out[3].phantom_family = PhantomFamily::random_ellipses;
  out[3].contrast_scale = 0.8;
  out[3].bias_field_strength = 0.5;
  out[3].rotation_range = 45.0;
  out[3].noise_sd = 0.005;
  return out;
}

ClientDatasetSpec unseen_client_preset() {
  ClientDatasetSpec s;
  s.id = 4;
  s.contrast_scale = -0.5;
  s.bias_field_strength = 0.4;
  s.rotation_range = 90.0;
  s.noise_sd = 0.003;
  return s;
}

ComplexImage generate_phantom(const ClientDatasetSpec& spec, CounterRng& rng) {
  spec.validate();
  auto ellipses = spec.phantom_family == PhantomFamily::shepp_logan ? shepp_logan_ellipses(rng) : random_ellipses(rng);
  for (std::size_t i = kHeadEllipses; i < ellipses.size(); ++i) ellipses[i].intensity *= 1.0 + spec.contrast_scale;

  const double angle = rng.uniform(-spec.rotation_range, spec.rotation_range) * std::numbers::pi / 180.0;
  std::array<double, 3> bias{};
  for (auto& c : bias) c = rng.uniform(-1.0, 1.0);
  std::array<double, 4> phase{};
  for (auto& p : phase) p = rng.uniform(-1.0, 1.0);

  const auto n = static_cast<std::size_t>(spec.size);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  std::vector<double> mag(n * n);
  double peak = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      // 2x2 supersampling per pixel softens the ellipse edges.
      double acc = 0.0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double x = (2.0 * (static_cast<double>(c) + 0.25 + 0.5 * sx)) / static_cast<double>(n) - 1.0;
          const double y = 1.0 - (2.0 * (static_cast<double>(r) + 0.25 + 0.5 * sy)) / static_cast<double>(n);
          const double u = ca * x + sa * y;
          const double v = -sa * x + ca * y;
          double val = 0.0;
          for (const auto& e : ellipses) {
            if (inside(e, u, v)) val += e.intensity;
          }
          acc += std::max(val, 0.0);
        }
      }
      const double x = (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(n) - 1.0;
      const double y = 1.0 - (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(n);
      const double field = std::exp(spec.bias_field_strength * (bias[0] * x + bias[1] * y + bias[2] * x * y));
      const double m = 0.25 * acc * field;
      mag[r * n + c] = m;
      peak = std::max(peak, m);
    }
  }

  ComplexImage img(n, n);
  const double inv_peak = peak > 0.0 ? 1.0 / peak : 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(n) - 1.0;
      const double y = 1.0 - (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(n);
      const double phi =
          std::numbers::pi * (phase[0] + 0.3 * phase[1] * x + 0.3 * phase[2] * y + 0.2 * phase[3] * x * y);
      const double m = std::min(1.0, mag[r * n + c] * inv_peak);
      img(r, c) = std::complex<float>(static_cast<float>(m * std::cos(phi)), static_cast<float>(m * std::sin(phi)));
    }
  }
  return img;
}

ClientDataset generate_phantom_dataset(const ClientDatasetSpec& spec, const MaskSpec& mask, CounterRng& rng) {
  spec.validate();
  ClientDataset d;
  d.spec = spec;
  d.mask_spec = mask;
  const auto n = static_cast<std::size_t>(spec.size);
  CounterRng mask_rng = rng.derive(0xA5);
  d.omega = generate_mask(n, n, mask.acceleration, mask.center_fraction, mask_rng);

  const auto fill = [&](std::vector<Sample>& out, int count, std::uint64_t stream) {
    const CounterRng split_rng = rng.derive(stream);
    for (int i = 0; i < count; ++i) {
      CounterRng sample_rng = split_rng.derive(static_cast<std::uint64_t>(i));
      CounterRng image_rng = sample_rng.derive(0);
      CounterRng noise_rng = sample_rng.derive(1);
      Sample s;
      s.truth = generate_phantom(spec, image_rng);
      s.kspace = forward_encode(s.truth, d.omega, spec.noise_sd, noise_rng);
      out.push_back(std::move(s));
    }
  };
  fill(d.train, spec.n_train, 1);
  fill(d.val, spec.n_val, 2);
  fill(d.test, spec.n_test, 3);
  return d;
}

std::vector<std::uint8_t> encode_cimg(const ComplexImage& x, Domain domain) {
  const Json meta{{"rows", x.rows()}, {"cols", x.cols()}, {"domain", domain_name(domain)}};
  const std::string text = meta.dump();
  detail::ByteWriter w;
  w.put_bytes("CIMG");
  w.put_u32(kCimgVersion);
  w.put_u32(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const auto& v : x) {
    w.put_f32(v.real());
    w.put_f32(v.imag());
  }
  return std::move(w.bytes());
}

LoadedImage decode_cimg(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "CIMG");
  r.expect_magic("CIMG");
  const std::size_t version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kCimgVersion) {
    throw ParseError("CIMG: unsupported version " + std::to_string(version), version_at);
  }
  const auto len = r.u32("header length");
  const std::size_t json_at = r.offset();
  const auto text = r.text(len, "JSON header");
  Json meta;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string domain;
  try {
    meta = Json::parse(text);
    rows = meta.at("rows").get<std::size_t>();
    cols = meta.at("cols").get<std::size_t>();
    domain = meta.at("domain").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("CIMG: malformed JSON header: ") + e.what(), json_at);
  }
  if (rows == 0 || cols == 0) throw ParseError("CIMG: rows and cols must be positive", json_at);
  if (domain != "image" && domain != "kspace") throw ParseError("CIMG: unknown domain \"" + domain + "\"", json_at);

  const std::size_t expected = rows * cols * 8;
  if (r.remaining() != expected) {
    throw ParseError("CIMG: payload size mismatch, expected " + std::to_string(expected) + " bytes (rows*cols*8), found " +
                         std::to_string(r.remaining()),
                     r.offset());
  }
  LoadedImage out;
  out.domain = domain == "image" ? Domain::image : Domain::kspace;
  out.image = ComplexImage(rows, cols);
  for (auto& v : out.image) {
    const float re = r.f32();
    const float im = r.f32();
    v = {re, im};
  }
  return out;
}

void save_image(const std::filesystem::path& path, const ComplexImage& x, Domain domain) {
  detail::write_file(path, encode_cimg(x, domain));
}

LoadedImage load_image(const std::filesystem::path& path) { return decode_cimg(detail::read_file(path)); }

std::string save_dataset(const ClientDataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::map<std::string, std::string> files;
  Json splits = Json::object();
  for (Split s : {Split::train, Split::val, Split::test}) {
    Json entries = Json::array();
    const auto& samples = d.split(s);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::string truth = to_string(s) + "/" + sample_name(i, "truth");
      const std::string kspace = to_string(s) + "/" + sample_name(i, "kspace");
      save_image(dir / truth, samples[i].truth, Domain::image);
      save_image(dir / kspace, samples[i].kspace, Domain::kspace);
      files[truth] = sha256_file(dir / truth);
      files[kspace] = sha256_file(dir / kspace);
      entries.push_back(Json{{"truth", truth}, {"kspace", kspace}});
    }
    splits[to_string(s)] = std::move(entries);
  }

  Json manifest;
  manifest["format"] = "fedrecon-dataset";
  manifest["version"] = 1;
  manifest["spec"] = d.spec;
  manifest["mask_spec"] = d.mask_spec;
  manifest["mask"] = d.omega;
  manifest["splits"] = splits;
  Json file_hashes = Json::object();
  std::string digest_input = manifest["spec"].dump() + manifest["mask"].dump();
  for (const auto& [path, hash] : files) {
    file_hashes[path] = hash;
    digest_input += path + ":" + hash + "\n";
  }
  manifest["files"] = file_hashes;
  const std::string hash = sha256_hex(digest_input);
  manifest["dataset_hash"] = hash;
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return hash;
}

ClientDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
  }
  Json manifest;
  try {
    manifest = Json::parse(detail::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
  }
  ClientDataset d;
  d.spec = manifest.at("spec").get<ClientDatasetSpec>();
  d.mask_spec = manifest.at("mask_spec").get<MaskSpec>();
  d.omega = manifest.at("mask").get<SamplingMask>();
  const auto& files = manifest.at("files");
  const auto load_checked = [&](const std::string& rel, Domain expect) {
    const auto path = dir / rel;
    const auto bytes = detail::read_file(path);
    if (files.contains(rel) && files.at(rel).get<std::string>() != sha256_hex(bytes)) {
      throw std::runtime_error("content hash mismatch for " + path.string());
    }
    auto loaded = decode_cimg(bytes);
    if (loaded.domain != expect) throw std::runtime_error("unexpected domain in " + path.string());
    if (loaded.image.rows() != d.omega.rows || loaded.image.cols() != d.omega.cols) {
      throw ShapeError("image " + path.string() + " does not match the dataset mask");
    }
    return std::move(loaded.image);
  };
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto& out = s == Split::train ? d.train : (s == Split::val ? d.val : d.test);
    for (const auto& e : manifest.at("splits").at(to_string(s))) {
      Sample smp;
      smp.truth = load_checked(e.at("truth").get<std::string>(), Domain::image);
      smp.kspace = load_checked(e.at("kspace").get<std::string>(), Domain::kspace);
      out.push_back(std::move(smp));
    }
  }
  return d;
}

std::string dataset_hash(const std::filesystem::path& dir) {
  const auto manifest = Json::parse(detail::read_text(dir / "manifest.json"));
  return manifest.at("dataset_hash").get<std::string>();
}

}  // namespace fedrecon
