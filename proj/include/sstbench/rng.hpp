#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sstbench/common.hpp"

namespace sstbench {

// Deterministic random stream. mt19937_64 has a standard-mandated output
// sequence and all value mappings below are hand-rolled, so a given
// (seed, stream) pair produces identical bytes on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Derives an independent child stream, e.g. per replica or per sample.
  Rng stream(const std::string& name) const {
    return Rng(fnv1a64(name, seed_mix_));
  }
  Rng stream(uint64_t index) const {
    uint64_t h = fnv1a64(&index, sizeof(index), seed_mix_);
    return Rng(h);
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (fresh pair each call, cached spare).
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    float u1 = 0.0f;
    while (u1 <= 1e-12f) u1 = uniform();
    float u2 = uniform();
    float r = std::sqrt(-2.0f * std::log(u1));
    float theta = 6.2831853071795864769f * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  float normal(float mean, float stddev) { return mean + stddev * normal(); }

  // Fisher-Yates permutation of [0, n).
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      uint64_t j = below(static_cast<uint64_t>(i) + 1);
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  // k distinct draws from [0, n) by partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k, std::vector<int>* scratch = nullptr) {
    std::vector<int> local;
    std::vector<int>& pool = scratch ? *scratch : local;
    pool.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    std::vector<int> out(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      uint64_t j = i + below(static_cast<uint64_t>(n - i));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      out[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_mix_ = engine_();  // consumed immediately so streams differ from parent
  float spare_ = 0.0f;
  bool have_spare_ = false;
};

}  // namespace sstbench
