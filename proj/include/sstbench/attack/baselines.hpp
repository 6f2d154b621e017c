#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "sstbench/attack/cw.hpp"
#include "sstbench/data.hpp"
#include "sstbench/model.hpp"
#include "sstbench/optim.hpp"
#include "sstbench/oracle.hpp"
#include "sstbench/train.hpp"

namespace sstbench {

struct JacobianAugmentConfig {
  int seed_count = 150;
  int rounds = 6;           // substitute training epochs (augmentation rounds)
  float lambda = 0.1f;
  TrainRecipe round_recipe;  // training schedule per round
  uint64_t seed = 1;

  void validate() const {
    if (seed_count < 1) throw ValidationError("jacobian baseline needs seeds");
    if (rounds < 1) throw ValidationError("jacobian baseline needs rounds >= 1");
    if (lambda <= 0.0f) throw ValidationError("jacobian lambda must be positive");
  }
};

// One Jacobian-based augmentation step: every point contributes
// x_new = clip01(x + lambda * sgn(J_F(x)[O(x)])), with J from the substitute
// and O(x) the oracle's label. The new points get oracle labels; the
// dataset doubles exactly.
inline Dataset jacobian_augmentation_round(const Dataset& current, const Model& substitute,
                                           LabelOracle& oracle, float lambda) {
  int64_t n = current.count();
  int m = current.pixel_count();
  int k = substitute.num_classes();
  Dataset out;
  out.width = current.width;
  out.height = current.height;
  out.channels = current.channels;
  out.name = current.name;
  out.images = Tensor({static_cast<int>(2 * n), m});
  std::copy(current.images.data(), current.images.data() + n * m, out.images.data());
  out.labels = current.labels;

  for (int64_t i = 0; i < n; ++i) {
    Tensor row({1, m}, std::vector<float>(current.images.data() + i * m,
                                          current.images.data() + (i + 1) * m));
    ModelPass pass(substitute, row);
    Tensor dz({1, k});
    dz[current.labels[static_cast<size_t>(i)]] = 1.0f;  // Jacobian row of the oracle label
    Tensor g = pass.input_gradient(dz);
    float* dst = out.images.data() + (n + i) * m;
    for (int p = 0; p < m; ++p) {
      float step = g[p] > 0.0f ? lambda : (g[p] < 0.0f ? -lambda : 0.0f);
      dst[p] = clip01(row[p] + step);
    }
  }
  Tensor fresh({static_cast<int>(n), m},
               std::vector<float>(out.images.data() + n * m, out.images.data() + 2 * n * m));
  std::vector<int> fresh_labels = oracle.labels(fresh, Phase::kSubstituteTraining);
  out.labels.insert(out.labels.end(), fresh_labels.begin(), fresh_labels.end());
  return out;
}

struct JacobianSubstitute {
  Model model;
  Dataset dataset;  // fully augmented, oracle-labeled
};

// Full Papernot-style loop: label the seeds, then alternate training and
// Jacobian augmentation for `rounds` rounds, finishing with one training run
// over the complete augmented set. Only oracle labels are ever used.
inline JacobianSubstitute train_jacobian_substitute(const Dataset& seeds, const ModelSpec& spec,
                                                    LabelOracle& oracle,
                                                    const JacobianAugmentConfig& cfg) {
  cfg.validate();
  Dataset current = seeds;
  current.labels = oracle.labels(seeds.images, Phase::kSubstituteTraining);
  Model substitute = Model::build(spec, cfg.seed);
  for (int round = 0; round < cfg.rounds; ++round) {
    substitute = Model::build(spec, cfg.seed + static_cast<uint64_t>(round));
    TrainRecipe recipe = cfg.round_recipe;
    recipe.seed = cfg.seed + static_cast<uint64_t>(round) * 1000;
    train_classifier(substitute, current, recipe);
    current = jacobian_augmentation_round(current, substitute, oracle, cfg.lambda);
  }
  substitute = Model::build(spec, cfg.seed + static_cast<uint64_t>(cfg.rounds));
  TrainRecipe recipe = cfg.round_recipe;
  recipe.seed = cfg.seed + static_cast<uint64_t>(cfg.rounds) * 1000;
  train_classifier(substitute, current, recipe);
  return {std::move(substitute), std::move(current)};
}

// x' = clip01(x + eps * sgn(d crossentropy / d x)) on the substitute.
inline Tensor fgsm(const Model& substitute, const Tensor& x, int y, float eps) {
  int m = static_cast<int>(x.size());
  if (substitute.input_dim() != m) throw ShapeError("fgsm input width mismatch");
  int k = substitute.num_classes();
  Tensor row = x.reshaped({1, m});
  ModelPass pass(substitute, row);
  // d(CE)/d(logits) = softmax - onehot
  const Tensor& z = pass.logits();
  Tensor dz({1, k});
  float mx = z[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, z[j]);
  float sum = 0.0f;
  for (int j = 0; j < k; ++j) {
    dz[j] = std::exp(z[j] - mx);
    sum += dz[j];
  }
  for (int j = 0; j < k; ++j) dz[j] = dz[j] / sum - (j == y ? 1.0f : 0.0f);
  Tensor g = pass.input_gradient(dz);
  Tensor out({m});
  for (int p = 0; p < m; ++p) {
    float step = g[p] > 0.0f ? eps : (g[p] < 0.0f ? -eps : 0.0f);
    out[p] = clip01(x[p] + step);
  }
  return out;
}

struct EnsembleAttackConfig {
  std::vector<float> weights;  // alpha_i, nonnegative, summing to 1
  float lambda = 0.01f;        // distortion trade-off
  int iterations = 300;
  float lr = 1e-3f;
  std::vector<double>* objective_trace = nullptr;  // test hook

  void validate(size_t members) const {
    if (weights.size() != members) throw ValidationError("ensemble weights/member count mismatch");
    float sum = 0.0f;
    for (float w : weights) {
      if (w < 0.0f) throw ValidationError("ensemble weights must be nonnegative");
      sum += w;
    }
    if (std::fabs(sum - 1.0f) > 1e-4f) throw ValidationError("ensemble weights must sum to 1");
    if (lambda < 0.0f) throw ValidationError("ensemble lambda must be >= 0");
    if (iterations < 1) throw ValidationError("ensemble needs iterations >= 1");
  }
};

// Targeted transfer objective over local white-box members:
//   argmin_delta  -log(sum_i alpha_i F_i(x')[target]) + lambda * ||x'-x||_2^2
// minimized with Adam; success is verified against the target oracle under
// `verify` (majority vote for stochastic targets).
inline AdvResult ensemble_transfer_attack(const std::vector<const Model*>& members,
                                          const EnsembleAttackConfig& cfg, const Tensor& x, int y,
                                          int target, Oracle& oracle, const VerifySpec& verify,
                                          Rng& rng) {
  cfg.validate(members.size());
  verify.validate();
  int m = static_cast<int>(x.size());
  int k = members.front()->num_classes();
  for (const Model* mem : members)
    if (mem->input_dim() != m || mem->num_classes() != k)
      throw ShapeError("ensemble member geometry mismatch");

  AdvResult result;
  result.target_label = target;
  uint64_t queries = 0;

  std::vector<Tensor> dslot(1, Tensor({m}));
  Tensor& delta = dslot[0];
  for (int i = 0; i < m; ++i) delta[i] = rng.uniform(-0.01f, 0.01f);
  AdamState adam = AdamState::make(dslot, cfg.lr);

  Tensor x_eval({1, m});
  double best_obj = std::numeric_limits<double>::infinity();
  Tensor best_image;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    ++result.iterations;
    for (int i = 0; i < m; ++i) x_eval[i] = clip01(x[i] + delta[i]);

    // ensemble probability of the target class
    double s_target = 0.0;
    std::vector<Tensor> probs(members.size());
    std::vector<std::unique_ptr<ModelPass>> passes;
    passes.reserve(members.size());
    for (size_t mi = 0; mi < members.size(); ++mi) {
      passes.emplace_back(std::make_unique<ModelPass>(*members[mi], x_eval));
      const Tensor& z = passes[mi]->logits();
      Tensor p({k});
      float mx = z[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, z[j]);
      float sum = 0.0f;
      for (int j = 0; j < k; ++j) {
        p[j] = std::exp(z[j] - mx);
        sum += p[j];
      }
      for (int j = 0; j < k; ++j) p[j] /= sum;
      s_target += static_cast<double>(cfg.weights[mi]) * p[target];
      probs[mi] = std::move(p);
    }
    s_target = std::max(s_target, 1e-12);

    double dist2 = 0.0;
    for (int i = 0; i < m; ++i) {
      double d = static_cast<double>(x_eval[i]) - x[i];
      dist2 += d * d;
    }
    double obj = -std::log(s_target) + cfg.lambda * dist2;
    if (cfg.objective_trace) cfg.objective_trace->push_back(obj);

    Tensor grad({m});
    for (size_t mi = 0; mi < members.size(); ++mi) {
      // d(-log S)/d z = -(alpha_i p_t / S) (onehot_t - p)
      const Tensor& p = probs[mi];
      float scale = static_cast<float>(-cfg.weights[mi] * p[target] / s_target);
      Tensor dz({1, k});
      for (int j = 0; j < k; ++j) dz[j] = scale * ((j == target ? 1.0f : 0.0f) - p[j]);
      Tensor gin = passes[mi]->input_gradient(dz);
      for (int i = 0; i < m; ++i) {
        float v = x[i] + delta[i];
        if (v >= 0.0f && v <= 1.0f) grad[i] += gin[i];
      }
    }
    for (int i = 0; i < m; ++i) {
      float v = x[i] + delta[i];
      float de = (v >= 0.0f && v <= 1.0f) ? (x_eval[i] - x[i]) : 0.0f;
      grad[i] += 2.0f * cfg.lambda * de;
    }
    std::vector<const Tensor*> grads = {&grad};
    adam_step(dslot, grads, adam);

    if (obj < best_obj) {
      best_obj = obj;
      best_image = x_eval.reshaped({m});
    }
  }

  if (!best_image.empty()) {
    auto check = attackdetail::oracle_check(oracle, best_image, y, verify, &queries);
    if (check.fooled) {
      result.image = best_image;
      double l2 = 0.0, linf = 0.0;
      for (int i = 0; i < m; ++i) {
        double d = static_cast<double>(best_image[i]) - x[i];
        l2 += d * d;
        linf = std::max(linf, std::fabs(d));
      }
      result.l2 = std::sqrt(l2);
      result.linf = linf;
      result.final_votes = check.votes;
      result.detector_evaded = verify.detector_in_loop && check.detector_legit;
    }
  }
  result.queries = queries;
  return result;
}

// Success rule from stochastic-defense experiments: the example must fool
// the target in `consecutive` independent single passes.
inline bool consecutive_fool_check(Oracle& oracle, const Tensor& image, int y, int consecutive,
                                   uint64_t* queries) {
  VerifySpec single;
  for (int i = 0; i < consecutive; ++i) {
    auto check = attackdetail::oracle_check(oracle, image, y, single, queries);
    if (!check.fooled) return false;
  }
  return true;
}

}  // namespace sstbench
