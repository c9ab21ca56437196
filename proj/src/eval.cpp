#include "fedrecon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace fedrecon {
namespace {

double reference_scale(const std::vector<double>& ref_mag) {
  const double peak = ref_mag.empty() ? 0.0 : *std::max_element(ref_mag.begin(), ref_mag.end());
  return peak > 0.0 ? 1.0 / peak : 1.0;
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// 'Valid' separable filtering: output is (rows - n + 1) x (cols - n + 1).
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                                 const std::vector<double>& w) {
  const std::size_t n = w.size();
  const std::size_t orows = rows - n + 1;
  const std::size_t ocols = cols - n + 1;
  std::vector<double> tmp(rows * ocols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += w[k] * img[r * cols + c + k];
      tmp[r * ocols + c] = s;
    }
  }
  std::vector<double> out(orows * ocols);
  for (std::size_t r = 0; r < orows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += w[k] * tmp[(r + k) * ocols + c];
      out[r * ocols + c] = s;
    }
  }
  return out;
}

double parse_metric(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string format_metric(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

template <typename Real>
std::vector<double> magnitude(const BasicComplexImage<Real>& x, double scale) {
  std::vector<double> m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = std::abs(std::complex<double>(x[i])) * scale;
  return m;
}

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename Real>
double psnr(const BasicComplexImage<Real>& reference, const BasicComplexImage<Real>& recon) {
  require_same_shape(reference, recon, "psnr");
  const double scale = reference_scale(magnitude(reference));
  const auto ref = magnitude(reference, scale);
  const auto rec = magnitude(recon, scale);
  double mse = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref[i] - rec[i];
    mse += d * d;
  }
  mse /= static_cast<double>(ref.size());
  return psnr_from_mse(mse, 1.0);
}

double ssim(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
            const SsimOptions& opt) {
  if (a.size() != rows * cols || b.size() != rows * cols) throw ShapeError("ssim: image sizes differ");
  if (opt.window < 1 || rows < static_cast<std::size_t>(opt.window) || cols < static_cast<std::size_t>(opt.window)) {
    throw ConfigError("ssim: image " + std::to_string(rows) + "x" + std::to_string(cols) + " is smaller than the " +
                      std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  }
  const auto w = gaussian_window(opt.window, opt.sigma);
  const std::vector<double> x(a.begin(), a.end());
  const std::vector<double> y(b.begin(), b.end());
  std::vector<double> xx(x.size());
  std::vector<double> yy(x.size());
  std::vector<double> xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, rows, cols, w);
  const auto my = filter_valid(y, rows, cols, w);
  const auto sxx = filter_valid(xx, rows, cols, w);
  const auto syy = filter_valid(yy, rows, cols, w);
  const auto sxy = filter_valid(xy, rows, cols, w);
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

template <typename Real>
double ssim(const BasicComplexImage<Real>& reference, const BasicComplexImage<Real>& recon, const SsimOptions& opt) {
  require_same_shape(reference, recon, "ssim");
  const double scale = reference_scale(magnitude(reference));
  const auto a = magnitude(reference, scale);
  const auto b = magnitude(recon, scale);
  if (a == b && reference.rows() >= static_cast<std::size_t>(opt.window) &&
      reference.cols() >= static_cast<std::size_t>(opt.window)) {
    return 1.0;
  }
  return ssim(a, b, reference.rows(), reference.cols(), opt);
}

std::vector<MetricSummary> MetricReport::summarize() const {
  using Key = std::tuple<std::string, std::string, std::string, std::string, int>;
  std::vector<Key> order;
  std::map<Key, MetricSummary> acc;
  for (const auto& r : rows) {
    const Key k{r.method, r.model, r.scenario, r.split, r.data_client};
    auto it = acc.find(k);
    if (it == acc.end()) {
      order.push_back(k);
      it = acc.emplace(k, MetricSummary{r.method, r.model, r.scenario, r.split, r.data_client, 0, 0.0, 0.0}).first;
    }
    it->second.count += 1;
    it->second.psnr += r.psnr;
    it->second.ssim += r.ssim;
  }
  std::vector<MetricSummary> out;
  for (const auto& k : order) {
    auto s = acc.at(k);
    s.psnr /= s.count;
    s.ssim /= s.count;
    out.push_back(s);
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "method,model,scenario,split,model_client,data_client,image,psnr,ssim\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.model << ',' << r.scenario << ',' << r.split << ',' << r.model_client << ','
       << r.data_client << ',' << r.image << ',' << format_metric(r.psnr, 6) << ',' << format_metric(r.ssim, 6)
       << '\n';
  }
  return os.str();
}

MetricReport MetricReport::from_csv(const std::string& text) {
  MetricReport rep;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw std::runtime_error("metrics CSV: expected 9 fields, got " + std::to_string(f.size()));
    MetricRow r;
    r.method = f[0];
    r.model = f[1];
    r.scenario = f[2];
    r.split = f[3];
    r.model_client = std::stoi(f[4]);
    r.data_client = std::stoi(f[5]);
    r.image = std::stoi(f[6]);
    r.psnr = parse_metric(f[7]);
    r.ssim = parse_metric(f[8]);
    rep.rows.push_back(r);
  }
  return rep;
}

std::string MetricReport::summary_csv() const {
  std::ostringstream os;
  os << "method,model,scenario,split,data_client,count,psnr,ssim\n";
  for (const auto& s : summarize()) {
    os << s.method << ',' << s.model << ',' << s.scenario << ',' << s.split << ',' << s.data_client << ','
       << s.count << ',' << format_metric(s.psnr, 4) << ',' << format_metric(s.ssim, 4) << '\n';
  }
  return os.str();
}

std::string MetricReport::to_table() const {
  const auto summaries = summarize();
  std::set<int> client_set;
  std::vector<std::pair<std::string, std::string>> methods;
  for (const auto& s : summaries) {
    client_set.insert(s.data_client);
    const auto key = std::make_pair(s.method + " (" + s.model + ")", s.scenario);
    if (std::find(methods.begin(), methods.end(), key) == methods.end()) methods.push_back(key);
  }
  const std::vector<int> clients(client_set.begin(), client_set.end());

  constexpr int kLabel = 28;
  constexpr int kScenario = 9;
  constexpr int kCell = 9;
  std::ostringstream os;
  os << std::left << std::setw(kLabel) << "Method" << std::setw(kScenario) << "Scenario";
  for (int c : clients) os << "| " << std::setw(2 * kCell) << ("Client " + std::to_string(c));
  os << "| " << std::setw(2 * kCell) << "Average" << '\n';
  os << std::setw(kLabel) << "" << std::setw(kScenario) << "";
  for (std::size_t i = 0; i <= clients.size(); ++i) os << "| " << std::setw(kCell) << "PSNR" << std::setw(kCell) << "SSIM";
  os << '\n';
  os << std::string(kLabel + kScenario + (clients.size() + 1) * (2 * kCell + 2), '-') << '\n';

  for (const auto& [label, scenario] : methods) {
    os << std::setw(kLabel) << label << std::setw(kScenario) << scenario;
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    int n = 0;
    for (int c : clients) {
      const auto it = std::find_if(summaries.begin(), summaries.end(), [&](const MetricSummary& s) {
        return s.method + " (" + s.model + ")" == label && s.scenario == scenario && s.data_client == c;
      });
      if (it == summaries.end()) {
        os << "| " << std::setw(kCell) << "-" << std::setw(kCell) << "-";
        continue;
      }
      os << "| " << std::setw(kCell) << format_metric(it->psnr, 4) << std::setw(kCell) << format_metric(it->ssim, 4);
      psnr_sum += it->psnr;
      ssim_sum += it->ssim;
      ++n;
    }
    if (n > 0) {
      os << "| " << std::setw(kCell) << format_metric(psnr_sum / n, 4) << std::setw(kCell)
         << format_metric(ssim_sum / n, 4);
    }
    os << '\n';
  }
  return os.str();
}

template std::vector<double> magnitude(const BasicComplexImage<float>&, double);
template std::vector<double> magnitude(const BasicComplexImage<double>&, double);
template double psnr(const BasicComplexImage<float>&, const BasicComplexImage<float>&);
template double psnr(const BasicComplexImage<double>&, const BasicComplexImage<double>&);
template double ssim(const BasicComplexImage<float>&, const BasicComplexImage<float>&, const SsimOptions&);
template double ssim(const BasicComplexImage<double>&, const BasicComplexImage<double>&, const SsimOptions&);

}  // namespace fedrecon
