#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedrecon/complex_image.hpp"

namespace fedrecon {

// Magnitude image scaled by `scale`.
template <typename Real>
std::vector<double> magnitude(const BasicComplexImage<Real>& x, double scale = 1.0);

// PSNR in dB with peak 1 on magnitudes, both images scaled by 1 / max|reference|.
// Identical inputs return +infinity.
template <typename Real>
double psnr(const BasicComplexImage<Real>& reference, const BasicComplexImage<Real>& recon);

double psnr_from_mse(double mse, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean local SSIM over all window positions fully inside the image, Gaussian-weighted.
double ssim(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
            const SsimOptions& opt = {});

// SSIM of magnitude images scaled as for psnr().
template <typename Real>
double ssim(const BasicComplexImage<Real>& reference, const BasicComplexImage<Real>& recon,
            const SsimOptions& opt = {});

struct MetricRow {
  std::string method;    // ssfedmri / fedavg_ss / fedprox_ss / zero_filled / reference
  std::string model;     // global / personalized / none
  std::string scenario;  // own / crossed / unseen
  std::string split;
  int model_client = 0;  // whose model produced the reconstruction
  int data_client = 0;   // whose data was reconstructed
  int image = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricSummary {
  std::string method;
  std::string model;
  std::string scenario;
  std::string split;
  int data_client = 0;
  int count = 0;
  double psnr = 0.0;  // arithmetic mean; +inf if any per-image value is +inf
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  // Per (method, model, scenario, split, data_client) means, in first-seen order.
  std::vector<MetricSummary> summarize() const;

  std::string to_csv() const;
  static MetricReport from_csv(const std::string& text);
  std::string summary_csv() const;
  // Aligned table: one row per (method, model), one PSNR/SSIM column pair per client plus the average.
  std::string to_table() const;
};

std::string format_metric(double v, int precision);

}  // namespace fedrecon
