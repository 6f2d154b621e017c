#pragma once

#include "sstbench/common.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

struct ThermometerParams {
  int k = 10;

  void validate() const {
    if (k < 2) throw ValidationError("thermometer needs k >= 2 levels");
  }
};

// k-level unary code: bit j (1-based) is 1 iff p >= j/k. Codes are
// concatenated in pixel order, so a [N, m] batch becomes [N, m*k].
inline Tensor thermometer_encode(const Tensor& batch, const ThermometerParams& params) {
  params.validate();
  if (batch.rank() != 2) throw ShapeError("thermometer_encode expects [N, m]");
  int64_t n = batch.dim(0);
  int m = batch.dim(1);
  int k = params.k;
  Tensor out({static_cast<int>(n), m * k});
  for (int64_t i = 0; i < n; ++i) {
    const float* px = batch.data() + i * m;
    float* code = out.data() + i * static_cast<int64_t>(m) * k;
    for (int p = 0; p < m; ++p) {
      if (px[p] < 0.0f || px[p] > 1.0f)
        throw ValidationError("thermometer_encode: pixel outside [0,1]");
      for (int j = 1; j <= k; ++j)
        code[p * k + (j - 1)] = px[p] >= static_cast<float>(j) / static_cast<float>(k) ? 1.0f : 0.0f;
    }
  }
  return out;
}

// Recovers p within 1/k by counting ones.
inline Tensor thermometer_decode(const Tensor& encoded, const ThermometerParams& params) {
  params.validate();
  if (encoded.rank() != 2 || encoded.dim(1) % params.k != 0)
    throw ShapeError("thermometer_decode: width not a multiple of k");
  int64_t n = encoded.dim(0);
  int m = encoded.dim(1) / params.k;
  Tensor out({static_cast<int>(n), m});
  for (int64_t i = 0; i < n; ++i)
    for (int p = 0; p < m; ++p) {
      int ones = 0;
      for (int j = 0; j < params.k; ++j)
        if (encoded[i * m * params.k + p * params.k + j] >= 0.5f) ++ones;
      out[i * m + p] = static_cast<float>(ones) / static_cast<float>(params.k);
    }
  return out;
}

}  // namespace sstbench
