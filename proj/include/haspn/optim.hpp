#pragma once

#include <cmath>
#include <cstdint>

#include "haspn/error.hpp"
#include "haspn/model.hpp"

namespace haspn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moments shaped like the parameters, plus the step count.
template <class T>
struct AdamState {
  ParameterSet<T> m;
  ParameterSet<T> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterSet<T>& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update in place. No weight decay, no clipping.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const ParameterSet<T>& grads, double rate,
               const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw StateError("adam_step: parameter, gradient and moment sets differ in size");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.entries()[k];
    const auto& g = grads.entries()[k];
    auto& m = state.m.entries()[k];
    auto& v = state.v.entries()[k];
    if (g.name != p.name || m.name != p.name || v.name != p.name) {
      throw StateError("adam_step: name mismatch at " + p.name + " (gradient " + g.name + ")");
    }
    if (!(g.value.shape() == p.value.shape())) throw StateError("adam_step: shape mismatch at " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T gi = g.value[i];
      m.value[i] = b1 * m.value[i] + (T(1) - b1) * gi;
      v.value[i] = b2 * v.value[i] + (T(1) - b2) * gi * gi;
      const double mhat = static_cast<double>(m.value[i]) / c1;
      const double vhat = static_cast<double>(v.value[i]) / c2;
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

}  // namespace haspn
