#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "haspn/autograd.hpp"
#include "haspn/error.hpp"
#include "haspn/ops.hpp"
#include "haspn/rng.hpp"
#include "haspn/tensor.hpp"

namespace haspn {

struct ModelConfig {
  int g = 20;  // HARBs per branch
  int m = 5;   // SARBs per HARB
  int c = 64;  // feature channels
  int scale = 4;
  int esa_reduction = 4;
  std::vector<int> adcca_dilations{1, 3, 5};
  int adcca_reduction = 4;

  int esa_channels() const { return c / esa_reduction; }
  int adcca_bottleneck() const { return std::max(c / adcca_reduction, 4); }

  void validate() const {
    if (g < 1) throw ConfigError("model: g must be >= 1");
    if (m < 1) throw ConfigError("model: m must be >= 1");
    if (esa_reduction < 1) throw ConfigError("model: esa_reduction must be >= 1");
    if (adcca_reduction < 1) throw ConfigError("model: adcca_reduction must be >= 1");
    if (c < esa_reduction) throw ConfigError("model: c must be >= esa_reduction");
    if (scale != 2 && scale != 4 && scale != 8) throw ConfigError("model: scale must be 2, 4 or 8");
    if (adcca_dilations.empty()) throw ConfigError("model: adcca_dilations must not be empty");
    std::set<int> seen;
    for (int d : adcca_dilations) {
      if (d < 1) throw ConfigError("model: adcca dilations must be >= 1");
      if (!seen.insert(d).second) throw ConfigError("model: adcca dilations must be distinct");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named trainable arrays in definition order.
template <class T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor4<T> value;
  };

  void add(std::string name, Tensor4<T> value) {
    if (index_.count(name)) throw StateError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor4<T>& at(const std::string& name) const { return entries_[lookup(name)].value; }
  Tensor4<T>& at(const std::string& name) { return entries_[lookup(name)].value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& e : entries_) out.add(e.name, Tensor4<T>(e.value.shape()));
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ParamSpec {
  std::string name;
  Shape4 shape;
  int fan_in = 0;
  bool bias = false;
};

namespace detail {

inline void add_conv(std::vector<ParamSpec>& out, const std::string& name, int cin, int cout, int k) {
  out.push_back(ParamSpec{name + ".weight", Shape4{cout, cin, k, k}, cin * k * k, false});
  out.push_back(ParamSpec{name + ".bias", Shape4{1, cout, 1, 1}, cin * k * k, true});
}

inline void add_esa(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  const int r = cfg.esa_channels();
  add_conv(out, p + "reduce", cfg.c, r, 1);
  add_conv(out, p + "down", r, r, 3);
  add_conv(out, p + "conv", r, r, 3);
  add_conv(out, p + "expand", r, cfg.c, 1);
}

inline void add_sarb(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  add_conv(out, p + "conv1", cfg.c, cfg.c, 3);
  add_conv(out, p + "conv2", cfg.c, cfg.c, 3);
  add_esa(out, p + "esa.", cfg);
}

inline void add_ffm(std::vector<ParamSpec>& out, const std::string& p, int parts, int c) {
  add_conv(out, p + "fuse", parts * c, c, 1);
  add_conv(out, p + "conv", c, c, 3);
}

inline void add_adcca(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  const int b = cfg.adcca_bottleneck();
  for (std::size_t i = 0; i < cfg.adcca_dilations.size(); ++i) {
    const std::string path = p + "path" + std::to_string(i) + ".";
    add_conv(out, path + "conv1", cfg.c, b, 3);
    add_conv(out, path + "conv2", b, cfg.c, 3);
  }
  add_ffm(out, p + "ffm.", static_cast<int>(cfg.adcca_dilations.size()), cfg.c);
}

inline void add_branch(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  add_conv(out, p + "head", 1, cfg.c, 3);
  for (int g = 0; g < cfg.g; ++g) {
    const std::string harb = p + "harb" + std::to_string(g) + ".";
    for (int m = 0; m < cfg.m; ++m) add_sarb(out, harb + "sarb" + std::to_string(m) + ".", cfg);
    add_adcca(out, harb + "adcca.", cfg);
  }
  add_conv(out, p + "body_tail", cfg.c, cfg.c, 3);
  add_conv(out, p + "recon.conv1", cfg.c, cfg.c, 3);
  add_sarb(out, p + "recon.sarb.", cfg);
  add_conv(out, p + "recon.conv2", cfg.c, 1, 3);
}

}  // namespace detail

// Every trainable array the configuration induces, in a stable order.
// "branch0" reads the LR image, "branch1" its high-frequency residual.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  detail::add_branch(out, "branch0.", cfg);
  detail::add_branch(out, "branch1.", cfg);
  detail::add_conv(out, "fusion.conv1", 2, cfg.c, 3);
  detail::add_conv(out, "fusion.conv2", cfg.c, cfg.c, 3);
  detail::add_conv(out, "fusion.conv3", cfg.c, 1, 3);
  return out;
}

// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)); biases zero.
template <class T>
ParameterSet<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet<T> ps;
  Rng rng(mix_seed(seed, 0x696e69746d6f64ULL));
  for (const auto& spec : parameter_layout(cfg)) {
    Tensor4<T> t(spec.shape);
    if (!spec.bias) {
      const double bound = std::sqrt(1.0 / spec.fan_in);
      for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    ps.add(spec.name, std::move(t));
  }
  return ps;
}

namespace nn {

// Parameters lifted into the graph, either as trainable leaves or constants.
template <class T>
class BoundParameters {
 public:
  BoundParameters(const ParameterSet<T>& ps, bool trainable) {
    for (const auto& e : ps.entries()) {
      vars_.emplace(e.name, trainable ? Var<T>::leaf(e.value) : Var<T>::constant(e.value));
      order_.push_back(e.name);
    }
  }

  const Var<T>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw StateError("unknown parameter " + name);
    return it->second;
  }

  // Gradients in parameter order; zero where nothing flowed.
  ParameterSet<T> gradients() const {
    ParameterSet<T> out;
    for (const auto& name : order_) {
      const Var<T>& v = vars_.at(name);
      out.add(name, v.grad().empty() ? Tensor4<T>(v.shape()) : v.grad());
    }
    return out;
  }

 private:
  std::unordered_map<std::string, Var<T>> vars_;
  std::vector<std::string> order_;
};

// A prefix into a BoundParameters ("branch0.harb2.").
template <class T>
class ParamScope {
 public:
  ParamScope(const BoundParameters<T>& bound, std::string prefix = {}) : bound_(&bound), prefix_(std::move(prefix)) {}

  const Var<T>& operator[](const std::string& name) const { return (*bound_)[prefix_ + name]; }
  ParamScope scope(const std::string& child) const { return ParamScope(*bound_, prefix_ + child + "."); }

 private:
  const BoundParameters<T>* bound_;
  std::string prefix_;
};

template <class T>
Var<T> conv(const ParamScope<T>& p, const std::string& layer, const Var<T>& x, int stride = 1, int dilation = 1) {
  return conv2d(x, p[layer + ".weight"], p[layer + ".bias"], stride, dilation);
}

}  // namespace nn

// Enhanced spatial attention with a single 3x3 conv in place of a conv group.
template <class T>
nn::Var<T> esa_forward(const nn::ParamScope<T>& p, const nn::Var<T>& x) {
  const Shape4 s = x.shape();
  if (s.h < 8 || s.w < 8) throw DimensionError("esa: spatial dims must be >= 8, got " + to_string(s));
  auto r = nn::conv(p, "reduce", x);
  auto d = nn::conv(p, "down", r, 2);
  auto m = nn::max_pool(d, 7, 3, 3);
  auto f = nn::conv(p, "conv", m);
  auto up = nn::bilinear_resize(f, s.h, s.w);
  auto score = nn::sigmoid(nn::conv(p, "expand", up));
  return nn::mul(x, score);
}

// Feature fusion: concat, 1x1 fuse to C, 3x3 conv.
template <class T>
nn::Var<T> ffm_forward(const nn::ParamScope<T>& p, const std::vector<nn::Var<T>>& parts) {
  auto cat = nn::concat_channels(parts);
  return nn::conv(p, "conv", nn::conv(p, "fuse", cat));
}

// Adaptive dilated-convolution channel attention.
template <class T>
nn::Var<T> adcca_forward(const ModelConfig& cfg, const nn::ParamScope<T>& p, const nn::Var<T>& x) {
  const Shape4 s = x.shape();
  if (s.h < 4 || s.w < 4) throw DimensionError("adcca: spatial dims must be >= 4, got " + to_string(s));
  auto squeezed = nn::max_pool(x, 2, 2, 0);
  std::vector<nn::Var<T>> paths;
  for (std::size_t i = 0; i < cfg.adcca_dilations.size(); ++i) {
    const int d = cfg.adcca_dilations[i];
    const auto scope = p.scope("path" + std::to_string(i));
    auto t = nn::relu(nn::conv(scope, "conv1", squeezed, 1, d));
    paths.push_back(nn::conv(scope, "conv2", t, 1, d));
  }
  auto merged = ffm_forward(p.scope("ffm"), paths);
  auto gate = nn::sigmoid(nn::global_avg_pool(merged));
  return nn::mul_channels(x, gate);
}

// conv-ReLU-conv-ESA with identity skip.
template <class T>
nn::Var<T> sarb_forward(const nn::ParamScope<T>& p, const nn::Var<T>& x) {
  auto t = nn::conv(p, "conv2", nn::relu(nn::conv(p, "conv1", x)));
  return nn::add(esa_forward(p.scope("esa"), t), x);
}

// u = x + shallow; M SARBs; ADCCA; + u.
template <class T>
nn::Var<T> harb_forward(const ModelConfig& cfg, const nn::ParamScope<T>& p, const nn::Var<T>& x,
                        const nn::Var<T>& shallow) {
  require_same_shape(x.shape(), shallow.shape(), "harb");
  auto u = nn::add(x, shallow);
  auto v = u;
  for (int m = 0; m < cfg.m; ++m) v = sarb_forward(p.scope("sarb" + std::to_string(m)), v);
  return nn::add(adcca_forward(cfg, p.scope("adcca"), v), u);
}

// (N,1,H,w) -> (N,1,H,w*scale).
template <class T>
nn::Var<T> branch_forward(const ModelConfig& cfg, const nn::ParamScope<T>& p, const nn::Var<T>& input) {
  const Shape4 s = input.shape();
  if (s.c != 1) throw ShapeError("branch: input must be single-channel, got " + to_string(s));
  auto shallow = nn::conv(p, "head", input);
  auto deep = shallow;
  for (int g = 0; g < cfg.g; ++g) deep = harb_forward(cfg, p.scope("harb" + std::to_string(g)), deep, shallow);
  deep = nn::add(nn::conv(p, "body_tail", deep), shallow);
  auto up = nn::bilinear_resize(deep, s.h, s.w * cfg.scale);
  auto r = nn::conv(p, "recon.conv1", up);
  r = sarb_forward(p.scope("recon.sarb"), r);
  return nn::conv(p, "recon.conv2", r);
}

template <class T>
struct HaspnOutputs {
  nn::Var<T> coarse;
  nn::Var<T> hf;
  nn::Var<T> fused;
};

template <class T>
HaspnOutputs<T> haspn_forward(const ModelConfig& cfg, const nn::BoundParameters<T>& params, const nn::Var<T>& lr,
                              const nn::Var<T>& lr_hf) {
  require_same_shape(lr.shape(), lr_hf.shape(), "haspn_forward");
  const nn::ParamScope<T> root(params);
  HaspnOutputs<T> out;
  out.coarse = branch_forward(cfg, root.scope("branch0"), lr);
  out.hf = branch_forward(cfg, root.scope("branch1"), lr_hf);
  const auto f = root.scope("fusion");
  auto t = nn::conv(f, "conv1", nn::concat_channels(std::vector<nn::Var<T>>{out.coarse, out.hf}));
  t = nn::conv(f, "conv2", t, 1, 2);
  out.fused = nn::conv(f, "conv3", t);
  return out;
}

// Inference on plain tensors.
template <class T>
HaspnOutputs<T> haspn_forward(const ModelConfig& cfg, const ParameterSet<T>& params, const Tensor4<T>& lr,
                              const Tensor4<T>& lr_hf) {
  const nn::BoundParameters<T> bound(params, false);
  return haspn_forward(cfg, bound, nn::Var<T>::constant(lr), nn::Var<T>::constant(lr_hf));
}

}  // namespace haspn
