#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "haspn/autograd.hpp"
#include "haspn/error.hpp"
#include "haspn/tensor.hpp"

// Differentiable tensor operations. Every op returns a Var whose backward
// closure accumulates into the inputs that require a gradient.
namespace haspn::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
bool wants_grad(const Node<T>& n, std::size_t i) {
  return i < n.inputs.size() && n.inputs[i] && n.inputs[i]->requires_grad;
}

struct ConvGeometry {
  int cin = 0, h = 0, w = 0;
  int k = 0, stride = 1, dilation = 1, pad = 0;
  int ho = 0, wo = 0;

  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
};

// Unfolds output rows [oy0, oy1) of one sample (cin x h x w) into a
// (cin*k*k) x ((oy1-oy0)*wo) matrix with zero padding.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col, int oy0, int oy1) {
  const std::size_t cols = static_cast<std::size_t>(oy1 - oy0) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * cols;
        const int off_y = ky * g.dilation - g.pad;
        const int off_x = kx * g.dilation - g.pad;
        for (int oy = oy0; oy < oy1; ++oy) {
          T* out = row + static_cast<std::size_t>(oy - oy0) * g.wo;
          const int iy = oy * g.stride + off_y;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            // valid ox satisfy 0 <= ox + off_x < w
            const int lo = std::clamp(-off_x, 0, g.wo);
            const int hi = std::clamp(g.w - off_x, lo, g.wo);
            std::fill(out, out + lo, T(0));
            if (hi > lo) std::memcpy(out + lo, src + lo + off_x, sizeof(T) * static_cast<std::size_t>(hi - lo));
            std::fill(out + hi, out + g.wo, T(0));
          } else {
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride + off_x;
              out[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the sample.
template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t cols = static_cast<std::size_t>(g.cols());
  for (int ci = 0; ci < g.cin; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * cols;
        const int off_y = ky * g.dilation - g.pad;
        const int off_x = kx * g.dilation - g.pad;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + off_y;
          if (iy < 0 || iy >= g.h) continue;
          const T* in = row + static_cast<std::size_t>(oy) * g.wo;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            const int lo = std::clamp(-off_x, 0, g.wo);
            const int hi = std::clamp(g.w - off_x, lo, g.wo);
            for (int ox = lo; ox < hi; ++ox) dst[ox + off_x] += in[ox];
          } else {
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride + off_x;
              if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  im2col(x, g, col, 0, g.ho);
}

// Output rows per im2col tile, sized so a tile stays cache-resident.
inline int tile_rows(const ConvGeometry& g) {
  constexpr std::size_t kTileElements = 1 << 16;
  const std::size_t per_row = static_cast<std::size_t>(g.rows()) * g.wo;
  return static_cast<int>(std::clamp<std::size_t>(kTileElements / std::max<std::size_t>(per_row, 1), 1, g.ho));
}

// Per-thread im2col workspaces, grown on demand and reused across calls.
template <class T>
T* scratch(int slot, std::size_t count) {
  thread_local std::vector<T, haspn::detail::default_init_allocator<T>> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < count) b.resize(count);
  return b.data();
}

inline int pooled_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

struct Interp {
  int i0 = 0, i1 = 0;
  double l0 = 1.0, l1 = 0.0;
};

// Half-pixel (align_corners = false) sample positions, clamped at the edges.
inline std::vector<Interp> bilinear_axis(int in, int out) {
  std::vector<Interp> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - i0;
    taps[static_cast<std::size_t>(o)] = Interp{i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace detail

// Cross-correlation with zero padding dilation*(k-1)/2. `weight` is
// (out, in, k, k); `bias` is (1, out, 1, 1) or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1, int dilation = 1) {
  const Shape4 xs = x.shape();
  const Shape4 ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  }
  if (ws.h != ws.w || ws.h % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (stride < 1 || dilation < 1) throw ConfigError("conv2d: stride and dilation must be >= 1");
  if (bias.defined() && !(bias.shape() == Shape4{1, ws.n, 1, 1})) throw ShapeError("conv2d: bias shape mismatch");

  detail::ConvGeometry g;
  g.cin = xs.c;
  g.h = xs.h;
  g.w = xs.w;
  g.k = ws.h;
  g.stride = stride;
  g.dilation = dilation;
  g.pad = dilation * (ws.h - 1) / 2;
  g.ho = (g.h + 2 * g.pad - dilation * (g.k - 1) - 1) / stride + 1;
  g.wo = (g.w + 2 * g.pad - dilation * (g.k - 1) - 1) / stride + 1;
  const int cout = ws.n;
  const bool direct = g.k == 1 && stride == 1;

  using Mat = detail::RowMat<T>;
  using Strided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using ConstStrided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  auto out = Tensor4<T>::uninitialized(Shape4{xs.n, cout, g.ho, g.wo});
  Eigen::Map<const Mat> wmat(weight.value().storage().data(), cout, g.rows());
  const int rows_per_tile = detail::tile_rows(g);
  T* col = direct ? nullptr : detail::scratch<T>(0, static_cast<std::size_t>(g.rows()) * rows_per_tile * g.wo);
  for (int n = 0; n < xs.n; ++n) {
    if (direct) {
      Eigen::Map<const Mat> xmat(x.value().plane(n, 0), g.rows(), g.cols());
      Eigen::Map<Mat>(out.plane(n, 0), cout, g.cols()).noalias() = wmat * xmat;
    } else {
      for (int y0 = 0; y0 < g.ho; y0 += rows_per_tile) {
        const int y1 = std::min(y0 + rows_per_tile, g.ho);
        const int cols = (y1 - y0) * g.wo;
        detail::im2col(x.value().plane(n, 0), g, col, y0, y1);
        Strided ytile(out.plane(n, 0) + static_cast<std::size_t>(y0) * g.wo, cout, cols, Eigen::OuterStride<>(g.cols()));
        ytile.noalias() = wmat * Eigen::Map<const Mat>(col, g.rows(), cols);
      }
    }
    if (bias.defined()) {
      Eigen::Map<Mat> ymat(out.plane(n, 0), cout, g.cols());
      for (int co = 0; co < cout; ++co) ymat.row(co).array() += bias.value()[static_cast<std::size_t>(co)];
    }
  }

  return record<T>(std::move(out), {x, weight, bias}, [g, cout, direct](Node<T>& self) {
    const Tensor4<T>& xv = self.inputs[0]->value;
    const Tensor4<T>& wv = self.inputs[1]->value;
    const Tensor4<T>& dy = self.grad;
    const bool gx = detail::wants_grad(self, 0);
    const bool gw = detail::wants_grad(self, 1);
    const bool gb = detail::wants_grad(self, 2);
    Eigen::Map<const Mat> wmat(wv.storage().data(), cout, g.rows());

    if (gb) {
      Tensor4<T>& db = self.inputs[2]->grad_buffer();
      for (int n = 0; n < xv.n(); ++n) {
        Eigen::Map<const Mat> dymat(dy.plane(n, 0), cout, g.cols());
        for (int co = 0; co < cout; ++co) db[static_cast<std::size_t>(co)] += dymat.row(co).sum();
      }
    }

    if (direct) {
      const bool fresh = gx && self.inputs[0]->grad.empty();
      if (fresh) self.inputs[0]->grad = Tensor4<T>::uninitialized(xv.shape());
      for (int n = 0; n < xv.n(); ++n) {
        Eigen::Map<const Mat> dymat(dy.plane(n, 0), cout, g.cols());
        Eigen::Map<const Mat> xmat(xv.plane(n, 0), g.rows(), g.cols());
        if (gw) {
          Eigen::Map<Mat>(self.inputs[1]->grad_buffer().storage().data(), cout, g.rows()).noalias() +=
              dymat * xmat.transpose();
        }
        if (gx) {
          Eigen::Map<Mat> dxmat(self.inputs[0]->grad.plane(n, 0), g.rows(), g.cols());
          if (fresh) {
            dxmat.noalias() = wmat.transpose() * dymat;
          } else {
            dxmat.noalias() += wmat.transpose() * dymat;
          }
        }
      }
      return;
    }

    const int rows_per_tile = detail::tile_rows(g);
    if (gw) {
      T* col = detail::scratch<T>(0, static_cast<std::size_t>(g.rows()) * rows_per_tile * g.wo);
      Eigen::Map<Mat> dw(self.inputs[1]->grad_buffer().storage().data(), cout, g.rows());
      for (int n = 0; n < xv.n(); ++n) {
        for (int y0 = 0; y0 < g.ho; y0 += rows_per_tile) {
          const int y1 = std::min(y0 + rows_per_tile, g.ho);
          const int cols = (y1 - y0) * g.wo;
          detail::im2col(xv.plane(n, 0), g, col, y0, y1);
          ConstStrided dytile(dy.plane(n, 0) + static_cast<std::size_t>(y0) * g.wo, cout, cols,
                              Eigen::OuterStride<>(g.cols()));
          dw.noalias() += dytile * Eigen::Map<const Mat>(col, g.rows(), cols).transpose();
        }
      }
    }
    if (!gx) return;

    if (g.stride == 1) {
      // dx is the correlation of dy with the flipped, transposed kernel.
      detail::ConvGeometry gt = g;
      gt.cin = cout;
      const int kk = g.k * g.k;
      Mat wflip(g.cin, static_cast<Eigen::Index>(cout) * kk);
      for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < g.cin; ++ci) {
          for (int t = 0; t < kk; ++t) wflip(ci, co * kk + (kk - 1 - t)) = wmat(co, ci * kk + t);
        }
      }
      const int tile = detail::tile_rows(gt);
      T* dycol = detail::scratch<T>(1, static_cast<std::size_t>(gt.rows()) * tile * g.wo);
      const bool fresh = self.inputs[0]->grad.empty();
      if (fresh) self.inputs[0]->grad = Tensor4<T>::uninitialized(xv.shape());
      Tensor4<T>& dx = self.inputs[0]->grad;
      for (int n = 0; n < xv.n(); ++n) {
        for (int y0 = 0; y0 < g.ho; y0 += tile) {
          const int y1 = std::min(y0 + tile, g.ho);
          const int cols = (y1 - y0) * g.wo;
          detail::im2col(dy.plane(n, 0), gt, dycol, y0, y1);
          Strided dxtile(dx.plane(n, 0) + static_cast<std::size_t>(y0) * g.w, g.cin, cols, Eigen::OuterStride<>(g.h * g.w));
          if (fresh) {
            dxtile.noalias() = wflip * Eigen::Map<const Mat>(dycol, gt.rows(), cols);
          } else {
            dxtile.noalias() += wflip * Eigen::Map<const Mat>(dycol, gt.rows(), cols);
          }
        }
      }
      return;
    }

    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    T* dcol = detail::scratch<T>(1, static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < xv.n(); ++n) {
      Eigen::Map<const Mat> dymat(dy.plane(n, 0), cout, g.cols());
      Eigen::Map<Mat> dcmat(dcol, g.rows(), g.cols());
      dcmat.noalias() = wmat.transpose() * dymat;
      detail::col2im_add(dcol, g, dx.plane(n, 0));
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor4<T> out = x.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  if (auto* log = BranchLog::active()) {
    for (T v : x.value().storage()) log->push_back(v > T(0));
  }
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& dy = self.grad;
    self.inputs[0]->accumulate([&](std::size_t i) { return xv[i] > T(0) ? dy[i] : T(0); });
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor4<T> out = x.value();
  for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& y = self.value;
    const auto& dy = self.grad;
    self.inputs[0]->accumulate([&](std::size_t i) { return dy[i] * y[i] * (T(1) - y[i]); });
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor4<T> out = a.value();
  const auto& bv = b.value().storage();
  auto& o = out.storage();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& dy = self.grad;
    for (std::size_t k = 0; k < 2; ++k) {
      if (detail::wants_grad(self, k)) self.inputs[k]->accumulate([&](std::size_t i) { return dy[i]; });
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor4<T> out = a.value();
  const auto& bv = b.value().storage();
  auto& o = out.storage();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& dy = self.grad;
    if (detail::wants_grad(self, 0)) self.inputs[0]->accumulate([&](std::size_t i) { return dy[i]; });
    if (detail::wants_grad(self, 1)) self.inputs[1]->accumulate([&](std::size_t i) { return -dy[i]; });
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor4<T> out = a.value();
  const auto& bv = b.value().storage();
  auto& o = out.storage();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& dy = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) self.inputs[0]->accumulate([&](std::size_t i) { return dy[i] * bv[i]; });
    if (detail::wants_grad(self, 1)) self.inputs[1]->accumulate([&](std::size_t i) { return dy[i] * av[i]; });
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor4<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return record<T>(std::move(out), {x}, [factor](Node<T>& self) {
    const auto& dy = self.grad;
    self.inputs[0]->accumulate([&](std::size_t i) { return factor * dy[i]; });
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  Tensor4<T> out = x.value();
  for (auto& v : out.storage()) v += offset;
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& dy = self.grad;
    self.inputs[0]->accumulate([&](std::size_t i) { return dy[i]; });
  });
}

// x (N,C,H,W) scaled per channel by a (N,C,1,1).
template <class T>
Var<T> mul_channels(const Var<T>& x, const Var<T>& a) {
  const Shape4 s = x.shape();
  if (!(a.shape() == Shape4{s.n, s.c, 1, 1})) throw ShapeError("mul_channels: gate must be (N,C,1,1)");
  Tensor4<T> out = x.value();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T g = a.value()(n, c, 0, 0);
      T* p = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) p[i] *= g;
    }
  }
  return record<T>(std::move(out), {x, a}, [plane](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& av = self.inputs[1]->value;
    const auto& dy = self.grad;
    const bool gx = detail::wants_grad(self, 0);
    const bool ga = detail::wants_grad(self, 1);
    for (int n = 0; n < xv.n(); ++n) {
      for (int c = 0; c < xv.c(); ++c) {
        const T* g = dy.plane(n, c);
        if (gx) {
          T* d = self.inputs[0]->grad_buffer().plane(n, c);
          const T gate = av(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] * gate;
        }
        if (ga) {
          const T* xp = xv.plane(n, c);
          T acc = T(0);
          for (std::size_t i = 0; i < plane; ++i) acc += g[i] * xp[i];
          self.inputs[1]->grad_buffer()(n, c, 0, 0) += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape4 first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape4 s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + to_string(first) + " vs " + to_string(s));
    }
    channels += s.c;
  }
  auto out = Tensor4<T>::uninitialized(Shape4{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const auto& p : parts) {
      const int c = p.shape().c;
      std::copy_n(p.value().plane(n, 0), plane * static_cast<std::size_t>(c), out.plane(n, offset));
      offset += c;
    }
  }
  return record<T>(std::move(out), parts, [plane](Node<T>& self) {
    for (int n = 0; n < self.value.n(); ++n) {
      int offset = 0;
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        const int c = self.inputs[k]->value.c();
        if (detail::wants_grad(self, k)) {
          T* d = self.inputs[k]->grad_buffer().plane(n, 0);
          const T* g = self.grad.plane(n, offset);
          const std::size_t len = plane * static_cast<std::size_t>(c);
          for (std::size_t i = 0; i < len; ++i) d[i] += g[i];
        }
        offset += c;
      }
    }
  });
}

// Max pooling; padded cells never win.
template <class T>
Var<T> max_pool(const Var<T>& x, int kernel, int stride, int pad) {
  const Shape4 s = x.shape();
  const int ho = detail::pooled_extent(s.h, kernel, stride, pad);
  const int wo = detail::pooled_extent(s.w, kernel, stride, pad);
  if (ho < 1 || wo < 1) throw DimensionError("max_pool: input " + to_string(s) + " too small for kernel");
  auto out = Tensor4<T>::uninitialized(Shape4{s.n, s.c, ho, wo});
  auto argmax = std::make_shared<std::vector<int>>(out.size(), -1);
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++k) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= s.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= s.w) continue;
              const T v = p[iy * s.w + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = iy * s.w + ix;
              }
            }
          }
          out[k] = best;
          (*argmax)[k] = best_idx;
          if (auto* log = BranchLog::active()) log->push_back(best_idx);
        }
      }
    }
  }
  return record<T>(std::move(out), {x}, [argmax, ho, wo](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    const std::size_t per = static_cast<std::size_t>(ho) * wo;
    std::size_t k = 0;
    for (int n = 0; n < dx.n(); ++n) {
      for (int c = 0; c < dx.c(); ++c) {
        T* d = dx.plane(n, c);
        for (std::size_t i = 0; i < per; ++i, ++k) {
          const int idx = (*argmax)[k];
          if (idx >= 0) d[idx] += self.grad[k];
        }
      }
    }
  });
}

// Non-overlapping average pooling (stride = kernel, no padding).
template <class T>
Var<T> avg_pool(const Var<T>& x, int kernel) {
  const Shape4 s = x.shape();
  const int ho = s.h / kernel;
  const int wo = s.w / kernel;
  if (ho < 1 || wo < 1) throw DimensionError("avg_pool: input " + to_string(s) + " too small for kernel");
  auto out = Tensor4<T>::uninitialized(Shape4{s.n, s.c, ho, wo});
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = T(0);
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) acc += p[(oy * kernel + ky) * s.w + ox * kernel + kx];
          }
          o[oy * wo + ox] = acc * inv;
        }
      }
    }
  }
  return record<T>(std::move(out), {x}, [kernel, ho, wo, inv](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    const int w = dx.w();
    for (int n = 0; n < dx.n(); ++n) {
      for (int c = 0; c < dx.c(); ++c) {
        T* d = dx.plane(n, c);
        const T* g = self.grad.plane(n, c);
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const T v = g[oy * wo + ox] * inv;
            for (int ky = 0; ky < kernel; ++ky) {
              for (int kx = 0; kx < kernel; ++kx) d[(oy * kernel + ky) * w + ox * kernel + kx] += v;
            }
          }
        }
      }
    }
  });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape4 s = x.shape();
  Tensor4<T> out(Shape4{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out(n, c, 0, 0) = acc / static_cast<T>(plane);
    }
  }
  return record<T>(std::move(out), {x}, [plane](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < dx.n(); ++n) {
      for (int c = 0; c < dx.c(); ++c) {
        const T g = self.grad(n, c, 0, 0) / static_cast<T>(plane);
        T* d = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += g;
      }
    }
  });
}

// Bilinear resampling to (out_h, out_w) with half-pixel centres
// (align_corners = false).
template <class T>
Var<T> bilinear_resize(const Var<T>& x, int out_h, int out_w) {
  const Shape4 s = x.shape();
  if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_resize: output must be non-empty");
  auto ty = std::make_shared<std::vector<detail::Interp>>(detail::bilinear_axis(s.h, out_h));
  auto tx = std::make_shared<std::vector<detail::Interp>>(detail::bilinear_axis(s.w, out_w));
  auto out = Tensor4<T>::uninitialized(Shape4{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const auto& iy = (*ty)[static_cast<std::size_t>(y)];
        const T* r0 = p + static_cast<std::size_t>(iy.i0) * s.w;
        const T* r1 = p + static_cast<std::size_t>(iy.i1) * s.w;
        for (int xo = 0; xo < out_w; ++xo) {
          const auto& ix = (*tx)[static_cast<std::size_t>(xo)];
          const T top = static_cast<T>(ix.l0) * r0[ix.i0] + static_cast<T>(ix.l1) * r0[ix.i1];
          const T bottom = static_cast<T>(ix.l0) * r1[ix.i0] + static_cast<T>(ix.l1) * r1[ix.i1];
          o[static_cast<std::size_t>(y) * out_w + xo] = static_cast<T>(iy.l0) * top + static_cast<T>(iy.l1) * bottom;
        }
      }
    }
  }
  return record<T>(std::move(out), {x}, [ty, tx, out_h, out_w](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    const int w = dx.w();
    for (int n = 0; n < dx.n(); ++n) {
      for (int c = 0; c < dx.c(); ++c) {
        T* d = dx.plane(n, c);
        const T* g = self.grad.plane(n, c);
        for (int y = 0; y < out_h; ++y) {
          const auto& iy = (*ty)[static_cast<std::size_t>(y)];
          T* r0 = d + static_cast<std::size_t>(iy.i0) * w;
          T* r1 = d + static_cast<std::size_t>(iy.i1) * w;
          for (int xo = 0; xo < out_w; ++xo) {
            const auto& ix = (*tx)[static_cast<std::size_t>(xo)];
            const T v = g[static_cast<std::size_t>(y) * out_w + xo];
            const T top = static_cast<T>(iy.l0) * v;
            const T bottom = static_cast<T>(iy.l1) * v;
            r0[ix.i0] += static_cast<T>(ix.l0) * top;
            r0[ix.i1] += static_cast<T>(ix.l1) * top;
            r1[ix.i0] += static_cast<T>(ix.l0) * bottom;
            r1[ix.i1] += static_cast<T>(ix.l1) * bottom;
          }
        }
      }
    }
  });
}

// (N,1,H,W) -> (N,C,H,W) by copying the single channel.
template <class T>
Var<T> repeat_channels(const Var<T>& x, int channels) {
  const Shape4 s = x.shape();
  if (s.c != 1) throw ShapeError("repeat_channels: input must have one channel");
  if (channels == 1) return x;
  auto out = Tensor4<T>::uninitialized(Shape4{s.n, channels, s.h, s.w});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < channels; ++c) std::copy_n(x.value().plane(n, 0), plane, out.plane(n, c));
  }
  return record<T>(std::move(out), {x}, [plane, channels](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < dx.n(); ++n) {
      T* d = dx.plane(n, 0);
      for (int c = 0; c < channels; ++c) {
        const T* g = self.grad.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[i];
      }
    }
  });
}

// Five-point Laplacian with replicate borders, applied per plane.
template <class T>
Var<T> laplacian(const Var<T>& x) {
  const Shape4 s = x.shape();
  if (s.h < 3 || s.w < 3) throw DimensionError("laplacian: planes must be at least 3x3");
  const int h = s.h;
  const int w = s.w;
  auto out = Tensor4<T>::uninitialized(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < h; ++y) {
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
        for (int xx = 0; xx < w; ++xx) {
          const int xm = std::max(xx - 1, 0), xp = std::min(xx + 1, w - 1);
          o[y * w + xx] = p[y * w + xp] + p[y * w + xm] + p[yp * w + xx] + p[ym * w + xx] - T(4) * p[y * w + xx];
        }
      }
    }
  }
  return record<T>(std::move(out), {x}, [h, w](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < dx.n(); ++n) {
      for (int c = 0; c < dx.c(); ++c) {
        T* d = dx.plane(n, c);
        const T* g = self.grad.plane(n, c);
        for (int y = 0; y < h; ++y) {
          const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
          for (int xx = 0; xx < w; ++xx) {
            const int xm = std::max(xx - 1, 0), xp = std::min(xx + 1, w - 1);
            const T v = g[y * w + xx];
            d[y * w + xp] += v;
            d[y * w + xm] += v;
            d[yp * w + xx] += v;
            d[ym * w + xx] += v;
            d[y * w + xx] -= T(4) * v;
          }
        }
      }
    }
  });
}

// Scalar reductions return a (1,1,1,1) tensor. Sums accumulate in double, or
// in T when T is wider.
template <class T>
using Accumulator = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <class T>
Var<T> sum(const Var<T>& x) {
  Accumulator<T> acc = 0.0;
  for (T v : x.value().storage()) acc += static_cast<Accumulator<T>>(v);
  Tensor4<T> out(Shape4{1, 1, 1, 1}, static_cast<T>(acc));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (auto& d : self.inputs[0]->grad_buffer().storage()) d += g;
  });
}

// Sum of |x|; the subgradient at 0 is taken as 0.
template <class T>
Var<T> abs_sum(const Var<T>& x) {
  Accumulator<T> acc = 0.0;
  for (T v : x.value().storage()) acc += std::abs(static_cast<Accumulator<T>>(v));
  if (auto* log = BranchLog::active()) {
    for (T v : x.value().storage()) log->push_back((v > T(0)) - (v < T(0)));
  }
  Tensor4<T> out(Shape4{1, 1, 1, 1}, static_cast<T>(acc));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    const auto& xv = self.inputs[0]->value.storage();
    auto& d = self.inputs[0]->grad_buffer().storage();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > T(0)) {
        d[i] += g;
      } else if (xv[i] < T(0)) {
        d[i] -= g;
      }
    }
  });
}

template <class T>
Var<T> square_sum(const Var<T>& x) {
  Accumulator<T> acc = 0.0;
  for (T v : x.value().storage()) acc += static_cast<Accumulator<T>>(v) * static_cast<Accumulator<T>>(v);
  Tensor4<T> out(Shape4{1, 1, 1, 1}, static_cast<T>(acc));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    const auto& xv = self.inputs[0]->value.storage();
    auto& d = self.inputs[0]->grad_buffer().storage();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += T(2) * g * xv[i];
  });
}

template <class T>
T scalar(const Var<T>& x) {
  return x.value()[0];
}

}  // namespace haspn::nn
