#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/tensor.hpp"

namespace haspn {

// Single-channel raster, row-major height x width. Natural images hold
// intensities in [0, 1]; high-frequency residuals are signed.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w) {
    if (h < 1 || w < 1) {
      throw DimensionError("image dimensions must be >= 1, got " + std::to_string(h) + "x" + std::to_string(w));
    }
    data.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
  }

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return data.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": image dimensions differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

// Stacks equally sized images into an (N, 1, H, W) tensor.
template <class T>
Tensor4<T> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const Image& first = *images.front();
  Tensor4<T> t(Shape4{static_cast<int>(images.size()), 1, first.height, first.width});
  std::size_t k = 0;
  for (const Image* img : images) {
    require_same_dims(first, *img, "to_tensor");
    for (double v : img->data) t[k++] = static_cast<T>(v);
  }
  return t;
}

template <class T>
Tensor4<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::vector<const Image*>{&image});
}

template <class T>
Image to_image(const Tensor4<T>& t, int n = 0, int c = 0) {
  Image img(t.h(), t.w());
  const T* p = t.plane(n, c);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<double>(p[i]);
  return img;
}

inline Image clamp01(Image img) {
  for (double& v : img.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return img;
}

}  // namespace haspn
