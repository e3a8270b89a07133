#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "isplit/tensor.hpp"

namespace isplit {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Per-parameter first/second moments plus step count. Lazily sized to the
/// parameter list on the first step.
template <typename S>
struct AdamState {
  std::vector<TensorT<S>> m;
  std::vector<TensorT<S>> v;
  long step = 0;
};

template <typename S>
void adam_step(const std::vector<TensorT<S>*>& params, const std::vector<const TensorT<S>*>& grads,
               AdamState<S>& state, double lr, double beta1 = kAdamBeta1,
               double beta2 = kAdamBeta2, double eps = kAdamEps) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = TensorT<S>::zeros(params[i]->shape);
      state.v[i] = TensorT<S>::zeros(params[i]->shape);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<S>& p = *params[i];
    const TensorT<S>& g = *grads[i];
    if (!p.same_shape(g))
      throw ShapeError("adam_step: gradient shape " + TensorT<S>::shape_string(g.shape) +
                       " does not match parameter shape " + TensorT<S>::shape_string(p.shape));
    TensorT<S>& m = state.m[i];
    TensorT<S>& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = static_cast<double>(g.data[j]);
      const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * gj * gj;
      m.data[j] = static_cast<S>(mj);
      v.data[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p.data[j] = static_cast<S>(static_cast<double>(p.data[j]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <typename S>
void sgd_step(const std::vector<TensorT<S>*>& params, const std::vector<const TensorT<S>*>& grads,
              double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<S>& p = *params[i];
    const TensorT<S>& g = *grads[i];
    if (!p.same_shape(g)) throw ShapeError("sgd_step: gradient/parameter shape mismatch");
    for (std::size_t j = 0; j < p.data.size(); ++j)
      p.data[j] = static_cast<S>(static_cast<double>(p.data[j]) - lr * static_cast<double>(g.data[j]));
  }
}

}  // namespace isplit
