#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/image.hpp"
#include "haspn/ops.hpp"

namespace haspn {

// Square, normalized, separable filter kernel. `weights` is size x size,
// row-major; `taps` is the 1-D factor it was built from.
struct Kernel2D {
  int size = 0;
  std::vector<double> taps;
  std::vector<double> weights;

  int radius() const { return size / 2; }

  // Weight at offset (dy, dx) from the centre.
  double weight(int dy, int dx) const {
    return weights[static_cast<std::size_t>(dy + radius()) * size + (dx + radius())];
  }
};

inline Kernel2D gaussian_kernel(int size, double sigma) {
  if (size < 3 || size % 2 == 0) throw ConfigError("gaussian_kernel: size must be odd and >= 3");
  if (!(sigma > 0.0)) throw ConfigError("gaussian_kernel: sigma must be positive");
  Kernel2D k;
  k.size = size;
  k.taps.resize(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k.taps[static_cast<std::size_t>(i + r)] = v;
    total += v;
  }
  for (double& v : k.taps) v /= total;
  k.weights.resize(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      k.weights[static_cast<std::size_t>(y) * size + x] = k.taps[static_cast<std::size_t>(y)] * k.taps[static_cast<std::size_t>(x)];
    }
  }
  return k;
}

// Mirror index without repeating the border sample (…, 2, 1 | 0, 1, 2, …).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Correlation with a separable kernel and reflect borders; row pass then
// column pass.
inline Image gaussian_blur(const Image& image, const Kernel2D& kernel) {
  if (image.height < kernel.size || image.width < kernel.size) {
    throw DimensionError("gaussian_blur: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " smaller than kernel " + std::to_string(kernel.size));
  }
  const int r = kernel.radius();
  const int h = image.height;
  const int w = image.width;
  Image rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += kernel.taps[static_cast<std::size_t>(d + r)] * image.at(y, reflect_index(x + d, w));
      rows.at(y, x) = acc;
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += kernel.taps[static_cast<std::size_t>(d + r)] * rows.at(reflect_index(y + d, h), x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

struct Decomposition {
  Image blurred;
  Image residual;
};

inline constexpr int kDecomposeKernelSize = 5;
inline constexpr double kDecomposeSigma = 1.5;

inline const Kernel2D& decompose_kernel() {
  static const Kernel2D kernel = gaussian_kernel(kDecomposeKernelSize, kDecomposeSigma);
  return kernel;
}

// image = blurred + residual, residual = image - blur(image).
inline Decomposition decompose(const Image& image) {
  Decomposition d;
  d.blurred = gaussian_blur(image, decompose_kernel());
  d.residual = Image(image.height, image.width);
  for (std::size_t i = 0; i < image.size(); ++i) d.residual.data[i] = image.data[i] - d.blurred.data[i];
  return d;
}

// Classical unsharp masking, S = O + k R. Unclamped.
inline Image usm_sharpen(const Image& image, double k = 1.0) {
  if (!(k >= 0.0)) throw ConfigError("usm_sharpen: k must be non-negative");
  const Decomposition d = decompose(image);
  Image out(image.height, image.width);
  for (std::size_t i = 0; i < image.size(); ++i) out.data[i] = image.data[i] + k * d.residual.data[i];
  return out;
}

// Five-point Laplacian with replicate borders; the same operator the
// gradient loss differentiates through.
inline Image laplacian(const Image& image) {
  const auto t = nn::laplacian(nn::Var<double>::constant(to_tensor<double>(image)));
  return to_image(t.value());
}

}  // namespace haspn
