#pragma once

#include <cmath>
#include <vector>

#include "sstbench/model.hpp"
#include "sstbench/rng.hpp"

namespace sstbench {

// Random feature nullification: every query multiplies the input by a fresh
// binary mask. Training mode draws the per-row nullification count from
// N(mu, sigma^2); test mode fixes the rate at mu.
struct RfnParams {
  float mu = 0.5f;
  float sigma = 0.05f;
  enum class Mode { kTraining, kTest } mode = Mode::kTest;

  void validate() const {
    if (mu <= 0.0f || mu >= 1.0f) throw ValidationError("RFN mu must be in (0,1)");
    if (sigma < 0.0f) throw ValidationError("RFN sigma must be >= 0");
  }
};

// Binary mask [rows, m]; row i carries exactly n_i zeros at positions drawn
// uniformly without replacement. Gaussian rate samples are clamped to [0,1]
// before rounding.
inline Tensor sample_rfn_mask(int64_t rows, int m, const RfnParams& params, Rng& rng) {
  params.validate();
  Tensor mask({static_cast<int>(rows), m});
  mask.fill(1.0f);
  int test_zeros = static_cast<int>(std::lround(static_cast<double>(m) * params.mu));
  std::vector<int> scratch;
  for (int64_t r = 0; r < rows; ++r) {
    int zeros;
    if (params.mode == RfnParams::Mode::kTraining) {
      float rate = rng.normal(params.mu, params.sigma);
      rate = std::min(1.0f, std::max(0.0f, rate));
      zeros = static_cast<int>(std::lround(static_cast<double>(m) * rate));
      zeros = std::min(m, std::max(0, zeros));
    } else {
      zeros = test_zeros;
    }
    if (zeros == 0) continue;
    auto idx = rng.sample_without_replacement(m, zeros, &scratch);
    float* row = mask.data() + r * m;
    for (int i : idx) row[i] = 0.0f;
  }
  return mask;
}

// Logits of the wrapped classifier on mask (.) batch.
inline Tensor rfn_forward(const Model& model, const Tensor& batch, const RfnParams& params,
                          Rng& rng) {
  int m = static_cast<int>(model.input_dim());
  if (batch.size() % m != 0) throw ShapeError("rfn_forward: batch width mismatch");
  int64_t rows = batch.size() / m;
  Tensor mask = sample_rfn_mask(rows, m, params, rng);
  Tensor nulled(batch.shape());
  for (int64_t i = 0; i < batch.size(); ++i) nulled[i] = batch[i] * mask[i];
  return model.logits(nulled);
}

}  // namespace sstbench
