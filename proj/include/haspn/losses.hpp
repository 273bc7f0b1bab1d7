#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "haspn/archive.hpp"
#include "haspn/autograd.hpp"
#include "haspn/error.hpp"
#include "haspn/ops.hpp"
#include "haspn/rng.hpp"
#include "haspn/tensor.hpp"

namespace haspn {

// A fixed feature map built from conv / ReLU / pooling stages.
template <class T>
class FeatureExtractor {
 public:
  enum class Kind { conv, relu, avg_pool, max_pool };

  struct Layer {
    Kind kind = Kind::relu;
    Tensor4<T> weight;
    Tensor4<T> bias;
  };

  FeatureExtractor() = default;
  FeatureExtractor(std::string id, int in_channels, bool unit_domain, std::vector<Layer> layers)
      : id_(std::move(id)), in_channels_(in_channels), unit_domain_(unit_domain), layers_(std::move(layers)) {}

  const std::string& id() const { return id_; }
  int in_channels() const { return in_channels_; }
  // True when the extractor expects intensities in [0, 1].
  bool unit_domain() const { return unit_domain_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // (N,1,H,W) -> features. Single-channel input is replicated to in_channels().
  nn::Var<T> operator()(const nn::Var<T>& x) const {
    if (x.shape().c != 1) throw ShapeError("feature extractor: input must be single-channel");
    nn::Var<T> h = in_channels_ == 1 ? x : nn::repeat_channels(x, in_channels_);
    for (const auto& layer : layers_) {
      const Shape4 s = h.shape();
      switch (layer.kind) {
        case Kind::conv:
          h = nn::conv2d(h, nn::Var<T>::constant(layer.weight), nn::Var<T>::constant(layer.bias));
          break;
        case Kind::relu:
          h = nn::relu(h);
          break;
        case Kind::avg_pool:
        case Kind::max_pool:
          if (s.h < 2 || s.w < 2) {
            throw ConfigError("feature extractor " + id_ + ": input too small for its pooling stages");
          }
          h = layer.kind == Kind::avg_pool ? nn::avg_pool(h, 2) : nn::max_pool(h, 2, 2, 0);
          break;
      }
    }
    return h;
  }

  template <class U>
  FeatureExtractor<U> cast() const {
    std::vector<typename FeatureExtractor<U>::Layer> out;
    for (const auto& l : layers_) {
      out.push_back({static_cast<typename FeatureExtractor<U>::Kind>(l.kind), l.weight.template cast<U>(),
                     l.bias.template cast<U>()});
    }
    return FeatureExtractor<U>(id_, in_channels_, unit_domain_, std::move(out));
  }

 private:
  std::string id_;
  int in_channels_ = 1;
  bool unit_domain_ = true;
  std::vector<Layer> layers_;
};

namespace detail {

template <class T>
typename FeatureExtractor<T>::Layer random_conv(Rng& rng, int cin, int cout) {
  typename FeatureExtractor<T>::Layer l;
  l.kind = FeatureExtractor<T>::Kind::conv;
  l.weight = Tensor4<T>(Shape4{cout, cin, 3, 3});
  l.bias = Tensor4<T>(Shape4{1, cout, 1, 1});
  const double bound = std::sqrt(6.0 / (cin * 9));
  for (auto& v : l.weight.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return l;
}

}  // namespace detail

inline constexpr std::uint64_t kDefaultExtractorSeed = 19;

// conv 1->16, ReLU, avgpool; conv 16->16, ReLU, avgpool; conv 16->32, ReLU;
// conv 32->32, ReLU. Weights ~ U(+-sqrt(6/fan_in)), biases zero.
template <class T>
FeatureExtractor<T> random_extractor(std::uint64_t seed = kDefaultExtractorSeed) {
  using FE = FeatureExtractor<T>;
  Rng rng(mix_seed(seed, 0x70657263657074ULL));
  std::vector<typename FE::Layer> layers;
  const typename FE::Layer relu{FE::Kind::relu, {}, {}};
  const typename FE::Layer pool{FE::Kind::avg_pool, {}, {}};
  layers.push_back(detail::random_conv<T>(rng, 1, 16));
  layers.push_back(relu);
  layers.push_back(pool);
  layers.push_back(detail::random_conv<T>(rng, 16, 16));
  layers.push_back(relu);
  layers.push_back(pool);
  layers.push_back(detail::random_conv<T>(rng, 16, 32));
  layers.push_back(relu);
  layers.push_back(detail::random_conv<T>(rng, 32, 32));
  layers.push_back(relu);
  return FE("random:" + std::to_string(seed), 1, true, std::move(layers));
}

// The identity feature map: perceptual distance collapses to squared L2.
template <class T>
FeatureExtractor<T> identity_extractor() {
  return FeatureExtractor<T>("identity", 1, false, {});
}

// VGG19 feature stack up to and including the fourth max-pool, read from a
// parameter archive holding "features.<i>.weight" / "features.<i>.bias" in
// torchvision numbering. Inputs are replicated to three channels and
// normalized with the ImageNet channel statistics.
template <class T>
FeatureExtractor<T> load_vgg19_extractor(const std::filesystem::path& path) {
  using FE = FeatureExtractor<T>;
  const Archive archive = read_archive(path);
  std::vector<typename FE::Layer> layers;

  typename FE::Layer norm;
  norm.kind = FE::Kind::conv;
  norm.weight = Tensor4<T>(Shape4{3, 3, 3, 3});
  norm.bias = Tensor4<T>(Shape4{1, 3, 1, 1});
  const double mean[3] = {0.485, 0.456, 0.406};
  const double stdev[3] = {0.229, 0.224, 0.225};
  for (int c = 0; c < 3; ++c) {
    norm.weight(c, c, 1, 1) = static_cast<T>(1.0 / stdev[c]);
    norm.bias[static_cast<std::size_t>(c)] = static_cast<T>(-mean[c] / stdev[c]);
  }
  layers.push_back(std::move(norm));

  const int convs_per_stage[4] = {2, 2, 4, 4};
  int index = 0;
  int cin = 3;
  for (int stage = 0; stage < 4; ++stage) {
    for (int i = 0; i < convs_per_stage[stage]; ++i) {
      const std::string base = "features." + std::to_string(index);
      const ArchiveArray* w = archive.find(base + ".weight");
      const ArchiveArray* b = archive.find(base + ".bias");
      if (!w || !b) throw ConfigError("vgg19 weights: missing " + base + " in " + path.string());
      typename FE::Layer conv;
      conv.kind = FE::Kind::conv;
      conv.weight = from_archive_array<T>(*w);
      conv.bias = from_archive_array<T>(*b);
      const Shape4 ws = conv.weight.shape();
      if (ws.c != cin || ws.h != 3 || ws.w != 3 || conv.bias.size() != static_cast<std::size_t>(ws.n)) {
        throw ConfigError("vgg19 weights: unexpected shape for " + base);
      }
      cin = ws.n;
      layers.push_back(std::move(conv));
      layers.push_back(typename FE::Layer{FE::Kind::relu, {}, {}});
      index += 2;
    }
    layers.push_back(typename FE::Layer{FE::Kind::max_pool, {}, {}});
    index += 1;
  }
  return FE("vgg19:" + path.string(), 3, true, std::move(layers));
}

struct LossWeights {
  double pix = 1.0;
  double per = 1.0;
  double gra = 1.0;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossOptions {
  LossWeights weights;
  // Divide by the pixel count as well as the batch size.
  bool per_pixel_mean = false;
};

namespace detail {

template <class T>
nn::Var<T> normalize(const nn::Var<T>& total, const Shape4& s, bool per_pixel_mean) {
  const double denom = per_pixel_mean ? static_cast<double>(s.numel()) : static_cast<double>(s.n);
  return nn::scale(total, static_cast<T>(1.0 / denom));
}

}  // namespace detail

// (1/N) sum_i ||sr_i - hr_i||_1
template <class T>
nn::Var<T> pixel_loss(const nn::Var<T>& sr, const nn::Var<T>& hr, bool per_pixel_mean = false) {
  require_same_shape(sr.shape(), hr.shape(), "pixel_loss");
  return detail::normalize(nn::abs_sum(nn::sub(sr, hr)), sr.shape(), per_pixel_mean);
}

// (1/N) sum_i ||phi(sr_i) - phi(hr_i)||_2^2. Signed inputs are shifted by
// +0.5 for extractors that expect [0, 1].
template <class T>
nn::Var<T> perceptual_loss(const nn::Var<T>& sr, const nn::Var<T>& hr, const FeatureExtractor<T>& phi,
                           bool signed_input = false, bool per_pixel_mean = false) {
  require_same_shape(sr.shape(), hr.shape(), "perceptual_loss");
  const bool shift = signed_input && phi.unit_domain();
  auto a = shift ? nn::add_scalar(sr, T(0.5)) : sr;
  auto b = shift ? nn::add_scalar(hr, T(0.5)) : hr;
  auto fa = phi(a);
  auto fb = phi(b);
  const Shape4 fs = fa.shape();
  auto total = nn::square_sum(nn::sub(fa, fb));
  const double denom = per_pixel_mean ? static_cast<double>(fs.numel()) : static_cast<double>(fs.n);
  return nn::scale(total, static_cast<T>(1.0 / denom));
}

// (1/N) sum_i ||lap(sr_i) - lap(hr_i)||_1
template <class T>
nn::Var<T> gradient_loss(const nn::Var<T>& sr, const nn::Var<T>& hr, bool per_pixel_mean = false) {
  require_same_shape(sr.shape(), hr.shape(), "gradient_loss");
  return detail::normalize(nn::abs_sum(nn::sub(nn::laplacian(sr), nn::laplacian(hr))), sr.shape(), per_pixel_mean);
}

struct BranchTerms {
  double pix = 0.0;
  double per = 0.0;
  double gra = 0.0;
  double total = 0.0;
};

template <class T>
struct BranchLoss {
  nn::Var<T> value;
  BranchTerms terms;
};

template <class T>
BranchLoss<T> branch_loss(const nn::Var<T>& out, const nn::Var<T>& target, const FeatureExtractor<T>& phi,
                          const LossOptions& opt = {}, bool signed_input = false) {
  require_same_shape(out.shape(), target.shape(), "branch_loss");
  const LossWeights& w = opt.weights;
  BranchLoss<T> r;
  std::vector<nn::Var<T>> parts;
  if (w.pix != 0.0) {
    auto v = pixel_loss(out, target, opt.per_pixel_mean);
    r.terms.pix = static_cast<double>(nn::scalar(v));
    parts.push_back(nn::scale(v, static_cast<T>(w.pix)));
  }
  if (w.per != 0.0) {
    auto v = perceptual_loss(out, target, phi, signed_input, opt.per_pixel_mean);
    r.terms.per = static_cast<double>(nn::scalar(v));
    parts.push_back(nn::scale(v, static_cast<T>(w.per)));
  }
  if (w.gra != 0.0) {
    auto v = gradient_loss(out, target, opt.per_pixel_mean);
    r.terms.gra = static_cast<double>(nn::scalar(v));
    parts.push_back(nn::scale(v, static_cast<T>(w.gra)));
  }
  if (parts.empty()) {
    r.value = nn::Var<T>::constant(Tensor4<T>(Shape4{1, 1, 1, 1}));
  } else {
    r.value = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) r.value = nn::add(r.value, parts[i]);
  }
  r.terms.total = w.pix * r.terms.pix + w.per * r.terms.per + w.gra * r.terms.gra;
  return r;
}

// alpha: coarse vs hr; beta: hf vs hr_hf; gamma: fused vs hr.
struct LossTerms {
  BranchTerms alpha;
  BranchTerms beta;
  BranchTerms gamma;
  double total = 0.0;

  friend bool operator==(const LossTerms& a, const LossTerms& b) {
    auto same = [](const BranchTerms& x, const BranchTerms& y) {
      return x.pix == y.pix && x.per == y.per && x.gra == y.gra && x.total == y.total;
    };
    return same(a.alpha, b.alpha) && same(a.beta, b.beta) && same(a.gamma, b.gamma) && a.total == b.total;
  }
};

template <class T>
struct TotalLoss {
  nn::Var<T> value;
  LossTerms terms;
};

template <class T>
TotalLoss<T> total_loss(const nn::Var<T>& coarse, const nn::Var<T>& hf, const nn::Var<T>& fused, const nn::Var<T>& hr,
                        const nn::Var<T>& hr_hf, const FeatureExtractor<T>& phi, const LossOptions& opt = {}) {
  auto a = branch_loss(coarse, hr, phi, opt, false);
  auto b = branch_loss(hf, hr_hf, phi, opt, true);
  auto g = branch_loss(fused, hr, phi, opt, false);
  TotalLoss<T> r;
  r.value = nn::add(nn::add(a.value, b.value), g.value);
  r.terms.alpha = a.terms;
  r.terms.beta = b.terms;
  r.terms.gamma = g.terms;
  r.terms.total = a.terms.total + b.terms.total + g.terms.total;
  return r;
}

}  // namespace haspn
