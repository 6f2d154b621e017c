#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sstbench/common.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

// Adam accumulator state. Moment shapes mirror parameter shapes; the step
// counter advances exactly once per adam_step call.
struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t step = 0;
  std::vector<Tensor> m;  // first moment, one per parameter
  std::vector<Tensor> v;  // second moment

  static AdamState make(const std::vector<Tensor>& params, float lr = 1e-3f) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    }
    return s;
  }
};

// Standard Adam update with bias correction. A coordinate whose gradient has
// been zero for the whole history keeps both moments at zero and is left
// unchanged.
inline void adam_step(std::vector<Tensor>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  state.step += 1;
  float b1t = 1.0f - std::pow(state.beta1, static_cast<float>(state.step));
  float b2t = 1.0f - std::pow(state.beta2, static_cast<float>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params[p];
    const Tensor& g = *grads[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    if (g.shape() != theta.shape())
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) +
                       " != parameter shape " + shape_str(theta.shape()));
    float lr = state.lr, b1 = state.beta1, b2 = state.beta2, eps = state.eps;
    parallel_for(theta.size(), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        float gi = g[i];
        m[i] = b1 * m[i] + (1.0f - b1) * gi;
        v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
        float mhat = m[i] / b1t;
        float vhat = v[i] / b2t;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }, 1 << 15);
  }
}

// Plain SGD, no momentum.
inline void sgd_step(std::vector<Tensor>& params, const std::vector<const Tensor*>& grads,
                     float lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: count mismatch");
  for (size_t p = 0; p < params.size(); ++p) {
    if (grads[p]->shape() != params[p].shape()) throw ShapeError("sgd_step: shape mismatch");
    axpy(-lr, grads[p]->data(), params[p].data(), params[p].size());
  }
}

}  // namespace sstbench
