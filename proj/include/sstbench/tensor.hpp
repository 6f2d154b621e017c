#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sstbench/common.hpp"

namespace sstbench {

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major float32 array. Invariant: data.size() == product(shape).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0f) {}

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (static_cast<int64_t>(data_.size()) != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0f); }

  // Reinterpret without copying; new shape must cover the same element count.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    return Tensor(std::move(shape), data_);
  }

  // Row i of a [N, m] tensor as a new [m] tensor.
  Tensor row(int64_t i) const {
    if (rank() < 1) throw ShapeError("row() on scalar tensor");
    int64_t m = size() / shape_[0];
    Shape s(shape_.begin() + 1, shape_.end());
    if (s.empty()) s = {1};
    std::vector<float> d(data_.begin() + i * m, data_.begin() + (i + 1) * m);
    return Tensor(std::move(s), std::move(d));
  }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void check_shape() const { checked_size(shape_); }

  static size_t checked_size(const Shape& s) {
    for (int d : s)
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    return static_cast<size_t>(shape_size(s));
  }

  Shape shape_;
  std::vector<float> data_;
};

// ---- small elementwise/vector helpers used across modules ----

inline float dot(const float* a, const float* b, int64_t n) {
  float s = 0.0f;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(float alpha, const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) s += static_cast<double>(t[i]) * t[i];
  return std::sqrt(s);
}

inline double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, static_cast<double>(std::fabs(t[i])));
  return m;
}

inline int argmax(const float* v, int64_t n) {
  int best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

// ---- GEMM kernels ----
// Row-major throughout. Element accumulation order is fixed regardless of
// thread count, so results are bit-reproducible.

// C[M,N] = (acc ? C : 0) + A[M,K] * B[K,N]
inline void gemm_nn(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N,
                    bool acc = false) {
  parallel_for(
      M,
      [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          float* c = C + i * N;
          if (!acc) std::fill(c, c + N, 0.0f);
          const float* a = A + i * K;
          for (int64_t k = 0; k < K; ++k) {
            float av = a[k];
            if (av == 0.0f) continue;
            const float* b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
          }
        }
      },
      std::max<int64_t>(1, 65536 / std::max<int64_t>(1, K * N)));
}

// C[M,N] = (acc ? C : 0) + A[M,K] * B[N,K]^T  (rows of B are the K-vectors)
inline void gemm_nt(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N,
                    bool acc = false) {
  parallel_for(
      M,
      [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          const float* a = A + i * K;
          float* c = C + i * N;
          for (int64_t j = 0; j < N; ++j) {
            float s = dot(a, B + j * K, K);
            c[j] = acc ? c[j] + s : s;
          }
        }
      },
      std::max<int64_t>(1, 65536 / std::max<int64_t>(1, K * N)));
}

// C[K,N] = (acc ? C : 0) + A[M,K]^T * B[M,N]
inline void gemm_tn(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N,
                    bool acc = false) {
  parallel_for(
      K,
      [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          float* c = C + i * N;
          if (!acc) std::fill(c, c + N, 0.0f);
          for (int64_t m = 0; m < M; ++m) {
            float av = A[m * K + i];
            if (av == 0.0f) continue;
            const float* b = B + m * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
          }
        }
      },
      std::max<int64_t>(1, 65536 / std::max<int64_t>(1, M * N)));
}

}  // namespace sstbench
