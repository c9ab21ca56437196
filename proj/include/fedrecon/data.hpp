#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedrecon/complex_image.hpp"
#include "fedrecon/forward.hpp"
#include "fedrecon/rng.hpp"

namespace fedrecon {

enum class PhantomFamily { shepp_logan, random_ellipses };

std::string to_string(PhantomFamily f);
PhantomFamily phantom_family_from_string(const std::string& s);

// One synthetic client. The heterogeneity knobs are all "off" at zero.
struct ClientDatasetSpec {
  int id = 0;
  int n_train = 20;
  int n_val = 4;
  int n_test = 8;
  int size = 64;
  double contrast_scale = 0.0;       // internal structures scaled by (1 + c); c < -1 inverts contrast
  double bias_field_strength = 0.0;  // amplitude of the smooth log-linear multiplicative field
  double rotation_range = 0.0;       // degrees; uniform in [-range, range]
  double noise_sd = 0.0;             // k-space noise on sampled entries
  PhantomFamily phantom_family = PhantomFamily::shepp_logan;

  void validate() const;
  friend bool operator==(const ClientDatasetSpec&, const ClientDatasetSpec&) = default;
};

// Four heterogeneous desk clients (ids 0..3) and a held-out distribution (id 4).
std::vector<ClientDatasetSpec> desk_client_presets();
ClientDatasetSpec unseen_client_preset();

struct MaskSpec {
  double acceleration = 4.0;
  double center_fraction = 0.08;
  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

// Ground truth is kept for evaluation only; trainers receive a KspaceDataset.
struct Sample {
  ComplexImage truth;
  ComplexImage kspace;
};

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ClientDataset {
  ClientDatasetSpec spec;
  MaskSpec mask_spec;
  SamplingMask omega;  // fixed per client
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  const std::vector<Sample>& split(Split s) const;
};

// Trainer-facing view: acquired k-space and mask, no image-domain reference.
struct KspaceDataset {
  int client_id = 0;
  SamplingMask omega;
  std::vector<ComplexImage> kspace;
};

KspaceDataset training_view(const ClientDataset& d, Split split = Split::train);

// One ellipse phantom with magnitude normalized to max 1 and a smooth phase map.
ComplexImage generate_phantom(const ClientDatasetSpec& spec, CounterRng& rng);

ClientDataset generate_phantom_dataset(const ClientDatasetSpec& spec, const MaskSpec& mask, CounterRng& rng);

// CIMG container: "CIMG" | u32 version | u32 json length | {"rows","cols","domain"} | interleaved re/im f32 LE.
enum class Domain { image, kspace };

struct LoadedImage {
  ComplexImage image;
  Domain domain = Domain::image;
};

inline constexpr std::uint32_t kCimgVersion = 1;

std::vector<std::uint8_t> encode_cimg(const ComplexImage& x, Domain domain);
LoadedImage decode_cimg(std::span<const std::uint8_t> bytes);
void save_image(const std::filesystem::path& path, const ComplexImage& x, Domain domain);
LoadedImage load_image(const std::filesystem::path& path);

// Dataset directory: manifest.json plus CIMG files per split. Returns the dataset hash.
std::string save_dataset(const ClientDataset& d, const std::filesystem::path& dir);
ClientDataset load_dataset(const std::filesystem::path& dir);
// Hash recorded in an existing manifest.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace fedrecon
