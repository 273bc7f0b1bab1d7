#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/frequency.hpp"
#include "haspn/image.hpp"

namespace haspn {

inline double mse(const Image& a, const Image& b) {
  require_same_dims(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

enum class PeakMode { fixed, literal };

// 10 log10(peak^2 / MSE). Identical images give +infinity. In literal mode
// the peak is max(sr), as the formula is usually written for reconstructions.
inline double psnr(const Image& sr, const Image& hr, double peak = 1.0, PeakMode mode = PeakMode::fixed) {
  require_same_dims(sr, hr, "psnr");
  if (mode == PeakMode::literal) {
    peak = -std::numeric_limits<double>::infinity();
    for (double v : sr.data) peak = std::max(peak, v);
  }
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  const double e = mse(sr, hr);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

enum class SsimMode { global, windowed };

struct SSIMParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
  int window = 11;
  double sigma = 1.5;

  double c1() const { return (k1 * range) * (k1 * range); }
  double c2() const { return (k2 * range) * (k2 * range); }
  double c3() const { return c2() / 2.0; }
};

// Combined form with C3 = C2/2:
// ((2 mu_x mu_y + C1)(2 s_xy + C2)) / ((mu_x^2 + mu_y^2 + C1)(s_x^2 + s_y^2 + C2))
inline double ssim_from_stats(double mx, double my, double vx, double vy, double cxy, const SSIMParams& p) {
  const double c1 = p.c1();
  const double c2 = p.c2();
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

// Whole-image statistics (population variances).
inline double ssim_global(const Image& a, const Image& b, const SSIMParams& p = {}) {
  require_same_dims(a, b, "ssim");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data[i];
    mb += b.data[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data[i] - ma;
    const double db = b.data[i] - mb;
    va += da * da;
    vb += db * db;
    cab += da * db;
  }
  return ssim_from_stats(ma, mb, va / n, vb / n, cab / n, p);
}

// Mean SSIM over every fully contained Gaussian window.
inline double ssim_windowed(const Image& a, const Image& b, const SSIMParams& p = {}) {
  require_same_dims(a, b, "ssim");
  if (a.height < p.window || a.width < p.window) {
    throw DimensionError("ssim: windowed mode needs images of at least " + std::to_string(p.window) + "x" +
                         std::to_string(p.window));
  }
  const Kernel2D k = gaussian_kernel(p.window, p.sigma);
  const int oh = a.height - p.window + 1;
  const int ow = a.width - p.window + 1;

  // Separable valid-mode filtering of the five moment images.
  auto filter = [&](auto pixel) {
    Image rows(a.height, ow);
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int d = 0; d < p.window; ++d) acc += k.taps[static_cast<std::size_t>(d)] * pixel(y, x + d);
        rows.at(y, x) = acc;
      }
    }
    Image out(oh, ow);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int d = 0; d < p.window; ++d) acc += k.taps[static_cast<std::size_t>(d)] * rows.at(y + d, x);
        out.at(y, x) = acc;
      }
    }
    return out;
  };
  const Image mu_a = filter([&](int y, int x) { return a.at(y, x); });
  const Image mu_b = filter([&](int y, int x) { return b.at(y, x); });
  const Image aa = filter([&](int y, int x) { return a.at(y, x) * a.at(y, x); });
  const Image bb = filter([&](int y, int x) { return b.at(y, x) * b.at(y, x); });
  const Image ab = filter([&](int y, int x) { return a.at(y, x) * b.at(y, x); });

  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data[i];
    const double mb = mu_b.data[i];
    acc += ssim_from_stats(ma, mb, aa.data[i] - ma * ma, bb.data[i] - mb * mb, ab.data[i] - ma * mb, p);
  }
  return acc / static_cast<double>(mu_a.size());
}

inline double ssim(const Image& a, const Image& b, const SSIMParams& p = {}, SsimMode mode = SsimMode::windowed) {
  return mode == SsimMode::global ? ssim_global(a, b, p) : ssim_windowed(a, b, p);
}

// (row, intensity) down one column.
inline std::vector<std::pair<int, double>> aline_profile(const Image& image, int column) {
  if (column < 0 || column >= image.width) {
    throw IndexError("aline_profile: column " + std::to_string(column) + " outside [0, " +
                     std::to_string(image.width) + ")");
  }
  std::vector<std::pair<int, double>> out;
  out.reserve(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) out.emplace_back(y, image.at(y, column));
  return out;
}

// Text that reads back to the same double.
inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_profile_csv(const std::filesystem::path& path, const std::vector<std::pair<int, double>>& profile) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "row,intensity\n";
  for (const auto& [row, v] : profile) f << row << ',' << format_real(v) << '\n';
}

}  // namespace haspn
