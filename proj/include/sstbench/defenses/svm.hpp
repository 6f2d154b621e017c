#pragma once

#include <cmath>
#include <cstring>
#include <deque>
#include <unordered_map>
#include <vector>

#include "sstbench/common.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

// Binary RBF-kernel SVM. Stored as support vectors + signed dual
// coefficients (alpha_i * y_i); decision(x) >= 0 means the positive class.
struct RbfSvm {
  Tensor support_vectors;      // [S, d]
  std::vector<float> coeffs;   // alpha_i * y_i
  float bias = 0.0f;
  float gamma = 1.0f;
  float box_c = 1.0f;  // training box constraint, kept for introspection

  int dim() const { return support_vectors.empty() ? 0 : support_vectors.dim(1); }
  int count() const { return support_vectors.empty() ? 0 : support_vectors.dim(0); }

  double decision(const float* x) const {
    int d = dim();
    double s = bias;
    for (int i = 0; i < count(); ++i) {
      const float* sv = support_vectors.data() + static_cast<int64_t>(i) * d;
      float dist2 = 0.0f;
      for (int j = 0; j < d; ++j) {
        float diff = sv[j] - x[j];
        dist2 += diff * diff;
      }
      s += static_cast<double>(coeffs[static_cast<size_t>(i)]) * std::exp(-gamma * dist2);
    }
    return s;
  }

  // 1 for the positive class, 0 otherwise.
  int predict(const float* x) const { return decision(x) >= 0.0 ? 1 : 0; }
};

struct SvmFitReport {
  int passes = 0;
  double kkt_residual = 0.0;
  double train_accuracy = 0.0;
  int support_count = 0;
};

namespace svmdetail {

// Sequential minimal optimization (Platt) with an error cache and a FIFO
// kernel-row cache. Deterministic: all heuristics scan from fixed offsets.
class SmoTrainer {
 public:
  SmoTrainer(const Tensor& x, const std::vector<int>& labels01, float c, float gamma, float tol,
             int max_passes)
      : x_(x), n_(static_cast<int>(x.dim(0))), d_(x.dim(1)), c_(c), gamma_(gamma), tol_(tol),
        max_passes_(max_passes) {
    y_.resize(static_cast<size_t>(n_));
    bool pos = false, neg = false;
    for (int i = 0; i < n_; ++i) {
      if (labels01[static_cast<size_t>(i)] != 0 && labels01[static_cast<size_t>(i)] != 1)
        throw ValidationError("svm labels must be 0/1");
      y_[static_cast<size_t>(i)] = labels01[static_cast<size_t>(i)] == 1 ? 1.0f : -1.0f;
      (labels01[static_cast<size_t>(i)] == 1 ? pos : neg) = true;
    }
    if (!pos || !neg) throw ValidationError("svm training needs both classes present");
    alpha_.assign(static_cast<size_t>(n_), 0.0f);
    err_.resize(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) err_[static_cast<size_t>(i)] = -y_[static_cast<size_t>(i)];
    norms_.resize(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      const float* xi = row(i);
      norms_[static_cast<size_t>(i)] = dot(xi, xi, d_);
    }
  }

  SvmFitReport train() {
    SvmFitReport rep;
    int num_changed = 0;
    bool examine_all = true;
    int passes = 0;
    while (num_changed > 0 || examine_all) {
      if (++passes > max_passes_)
        throw ConvergenceError("svm SMO did not satisfy KKT within " +
                                   std::to_string(max_passes_) + " passes",
                               kkt_residual());
      num_changed = 0;
      if (examine_all) {
        for (int i = 0; i < n_; ++i) num_changed += examine(i);
      } else {
        for (int i = 0; i < n_; ++i)
          if (alpha_[static_cast<size_t>(i)] > 0.0f && alpha_[static_cast<size_t>(i)] < c_)
            num_changed += examine(i);
      }
      if (examine_all)
        examine_all = false;
      else if (num_changed == 0)
        examine_all = true;
    }
    rep.passes = passes;
    rep.kkt_residual = kkt_residual();
    return rep;
  }

  RbfSvm extract() const {
    std::vector<int> sv;
    for (int i = 0; i < n_; ++i)
      if (alpha_[static_cast<size_t>(i)] > 0.0f) sv.push_back(i);
    RbfSvm svm;
    svm.gamma = gamma_;
    svm.box_c = c_;
    svm.bias = -b_;  // internal convention: f(x) = sum - b
    if (sv.empty()) return svm;
    svm.support_vectors = Tensor({static_cast<int>(sv.size()), d_});
    svm.coeffs.resize(sv.size());
    for (size_t s = 0; s < sv.size(); ++s) {
      std::memcpy(svm.support_vectors.data() + static_cast<int64_t>(s) * d_, row(sv[s]),
                  static_cast<size_t>(d_) * 4);
      svm.coeffs[s] = alpha_[static_cast<size_t>(sv[s])] * y_[static_cast<size_t>(sv[s])];
    }
    return svm;
  }

  double kkt_residual() const {
    double worst = 0.0;
    for (int i = 0; i < n_; ++i) {
      float a = alpha_[static_cast<size_t>(i)];
      double r = static_cast<double>(err_[static_cast<size_t>(i)]) * y_[static_cast<size_t>(i)];
      double v = 0.0;
      if (a < c_) v = std::max(v, -r);  // should have r >= 0 (up to tol)
      if (a > 0.0f) v = std::max(v, r);
      worst = std::max(worst, v);
    }
    return worst;
  }

 private:
  const float* row(int i) const { return x_.data() + static_cast<int64_t>(i) * d_; }

  const std::vector<float>& kernel_row(int i) {
    auto it = cache_.find(i);
    if (it != cache_.end()) return it->second;
    if (cache_order_.size() >= kCacheCap) {
      cache_.erase(cache_order_.front());
      cache_order_.pop_front();
    }
    std::vector<float> k(static_cast<size_t>(n_));
    const float* xi = row(i);
    float ni = norms_[static_cast<size_t>(i)];
    parallel_for(n_, [&](int64_t lo, int64_t hi) {
      for (int64_t j = lo; j < hi; ++j) {
        float dist2 = ni + norms_[static_cast<size_t>(j)] - 2.0f * dot(xi, row(static_cast<int>(j)), d_);
        k[static_cast<size_t>(j)] = std::exp(-gamma_ * std::max(0.0f, dist2));
      }
    }, 256);
    cache_order_.push_back(i);
    return cache_.emplace(i, std::move(k)).first->second;
  }

  int examine(int i2) {
    float y2 = y_[static_cast<size_t>(i2)];
    float a2 = alpha_[static_cast<size_t>(i2)];
    float e2 = err_[static_cast<size_t>(i2)];
    float r2 = e2 * y2;
    if ((r2 < -tol_ && a2 < c_) || (r2 > tol_ && a2 > 0.0f)) {
      // heuristic 1: maximize |E1 - E2| over non-bound points
      int best = -1;
      float best_gap = 0.0f;
      for (int i = 0; i < n_; ++i) {
        if (alpha_[static_cast<size_t>(i)] <= 0.0f || alpha_[static_cast<size_t>(i)] >= c_) continue;
        float gap = std::fabs(err_[static_cast<size_t>(i)] - e2);
        if (gap > best_gap) {
          best_gap = gap;
          best = i;
        }
      }
      if (best >= 0 && take_step(best, i2)) return 1;
      // heuristic 2: non-bound points from a rotating offset
      for (int k = 0; k < n_; ++k) {
        int i1 = (k + offset_) % n_;
        if (alpha_[static_cast<size_t>(i1)] > 0.0f && alpha_[static_cast<size_t>(i1)] < c_)
          if (take_step(i1, i2)) return 1;
      }
      // heuristic 3: everything
      for (int k = 0; k < n_; ++k) {
        int i1 = (k + offset_) % n_;
        if (take_step(i1, i2)) return 1;
      }
    }
    return 0;
  }

  bool take_step(int i1, int i2) {
    if (i1 == i2) return false;
    float a1 = alpha_[static_cast<size_t>(i1)], a2 = alpha_[static_cast<size_t>(i2)];
    float y1 = y_[static_cast<size_t>(i1)], y2 = y_[static_cast<size_t>(i2)];
    float e1 = err_[static_cast<size_t>(i1)], e2 = err_[static_cast<size_t>(i2)];
    float s = y1 * y2;
    float lo, hi;
    if (s < 0.0f) {
      lo = std::max(0.0f, a2 - a1);
      hi = std::min(c_, c_ + a2 - a1);
    } else {
      lo = std::max(0.0f, a2 + a1 - c_);
      hi = std::min(c_, a2 + a1);
    }
    if (lo >= hi) return false;
    const auto& k1 = kernel_row(i1);
    const auto& k2 = kernel_row(i2);
    float k11 = k1[static_cast<size_t>(i1)], k12 = k1[static_cast<size_t>(i2)],
          k22 = k2[static_cast<size_t>(i2)];
    float eta = k11 + k22 - 2.0f * k12;
    float a2_new;
    if (eta > 1e-12f) {
      a2_new = a2 + y2 * (e1 - e2) / eta;
      a2_new = std::min(hi, std::max(lo, a2_new));
    } else {
      // objective at the segment ends (duplicate rows give eta == 0)
      float f1 = y1 * e1 - a1 * k11 - s * a2 * k12;
      float f2 = y2 * e2 - s * a1 * k12 - a2 * k22;
      float l1 = a1 + s * (a2 - lo);
      float h1 = a1 + s * (a2 - hi);
      float obj_lo = l1 * f1 + lo * f2 + 0.5f * l1 * l1 * k11 + 0.5f * lo * lo * k22 + s * lo * l1 * k12;
      float obj_hi = h1 * f1 + hi * f2 + 0.5f * h1 * h1 * k11 + 0.5f * hi * hi * k22 + s * hi * h1 * k12;
      if (obj_lo < obj_hi - 1e-7f)
        a2_new = lo;
      else if (obj_lo > obj_hi + 1e-7f)
        a2_new = hi;
      else
        return false;
    }
    if (std::fabs(a2_new - a2) < 1e-7f * (a2_new + a2 + 1e-7f)) return false;
    float a1_new = a1 + s * (a2 - a2_new);
    if (a1_new < 0.0f) a1_new = 0.0f;
    if (a1_new > c_) a1_new = c_;

    // internal convention: f(x) = sum(alpha y K) - b_, E = f - y
    float d1 = y1 * (a1_new - a1);
    float d2 = y2 * (a2_new - a2);
    float bnew;
    float b1v = b_ + e1 + d1 * k11 + d2 * k12;
    float b2v = b_ + e2 + d1 * k12 + d2 * k22;
    if (a1_new > 0.0f && a1_new < c_)
      bnew = b1v;
    else if (a2_new > 0.0f && a2_new < c_)
      bnew = b2v;
    else
      bnew = 0.5f * (b1v + b2v);
    float db = bnew - b_;
    b_ = bnew;

    alpha_[static_cast<size_t>(i1)] = a1_new;
    alpha_[static_cast<size_t>(i2)] = a2_new;
    for (int i = 0; i < n_; ++i)
      err_[static_cast<size_t>(i)] +=
          d1 * k1[static_cast<size_t>(i)] + d2 * k2[static_cast<size_t>(i)] - db;
    offset_ = (offset_ + 1) % n_;
    return true;
  }

  static constexpr size_t kCacheCap = 384;

  const Tensor& x_;
  int n_, d_;
  float c_, gamma_, tol_;
  int max_passes_;
  std::vector<float> y_, alpha_, err_, norms_;
  float b_ = 0.0f;
  int offset_ = 0;
  std::unordered_map<int, std::vector<float>> cache_;
  std::deque<int> cache_order_;
};

}  // namespace svmdetail

// Trains a binary RBF SVM by SMO. Labels are 0/1 (1 = positive class).
// gamma <= 0 selects the 1/d default. Throws ConvergenceError (carrying the
// KKT residual) if the pass cap is hit first.
inline RbfSvm train_rbf_svm(const Tensor& features, const std::vector<int>& labels, float c,
                            float gamma, float tol, SvmFitReport* report = nullptr,
                            int max_passes = 400) {
  if (features.rank() != 2) throw ShapeError("svm features must be [n, d]");
  if (features.dim(0) != static_cast<int>(labels.size()))
    throw ValidationError("svm feature/label count mismatch");
  if (c <= 0.0f) throw ValidationError("svm C must be positive");
  float g = gamma > 0.0f ? gamma : 1.0f / static_cast<float>(features.dim(1));
  svmdetail::SmoTrainer trainer(features, labels, c, g, tol, max_passes);
  SvmFitReport rep = trainer.train();
  RbfSvm svm = trainer.extract();
  int correct = 0;
  for (int i = 0; i < features.dim(0); ++i)
    if (svm.predict(features.data() + static_cast<int64_t>(i) * features.dim(1)) ==
        labels[static_cast<size_t>(i)])
      ++correct;
  rep.train_accuracy = static_cast<double>(correct) / features.dim(0);
  rep.support_count = svm.count();
  if (report) *report = rep;
  return svm;
}

// ---- checkpoint payload ----

inline std::vector<uint8_t> svm_to_bytes(const RbfSvm& svm) {
  std::vector<uint8_t> out;
  auto put_f = [&](float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(u >> (8 * i)));
  };
  auto put_u = [&](uint32_t u) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(u >> (8 * i)));
  };
  put_u(static_cast<uint32_t>(svm.count()));
  put_u(static_cast<uint32_t>(svm.dim()));
  put_f(svm.bias);
  put_f(svm.gamma);
  put_f(svm.box_c);
  for (int64_t i = 0; i < svm.support_vectors.size(); ++i) put_f(svm.support_vectors[i]);
  for (float cof : svm.coeffs) put_f(cof);
  return out;
}

inline RbfSvm svm_from_bytes(const std::vector<uint8_t>& bytes) {
  size_t off = 0;
  auto get_u = [&]() {
    if (off + 4 > bytes.size()) throw FormatError("corrupt svm payload");
    uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= uint32_t(bytes[off + static_cast<size_t>(i)]) << (8 * i);
    off += 4;
    return u;
  };
  auto get_f = [&]() {
    uint32_t u = get_u();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  };
  RbfSvm svm;
  uint32_t s = get_u();
  uint32_t d = get_u();
  svm.bias = get_f();
  svm.gamma = get_f();
  svm.box_c = get_f();
  if (s > 0) {
    svm.support_vectors = Tensor({static_cast<int>(s), static_cast<int>(d)});
    for (int64_t i = 0; i < svm.support_vectors.size(); ++i) svm.support_vectors[i] = get_f();
    svm.coeffs.resize(s);
    for (uint32_t i = 0; i < s; ++i) svm.coeffs[i] = get_f();
  }
  return svm;
}

}  // namespace sstbench
