#pragma once

#include <vector>

#include "sstbench/data.hpp"
#include "sstbench/model.hpp"
#include "sstbench/optim.hpp"
#include "sstbench/oracle.hpp"
#include "sstbench/train.hpp"

namespace sstbench {

// Noisy replicas paired with the robust model's recorded logits.
struct SstDataset {
  Tensor inputs;         // [N, m], clipped to [0,1]
  Tensor robust_logits;  // [N, K]
  NoiseSchedule schedule;

  int64_t count() const { return inputs.empty() ? 0 : inputs.dim(0); }

  void validate() const {
    if (inputs.rank() != 2 || robust_logits.rank() != 2)
      throw ValidationError("sst dataset tensors must be [N, m] / [N, K]");
    if (inputs.dim(0) != robust_logits.dim(0))
      throw ValidationError("sst dataset input/logit row counts differ");
  }

  SstDataset slice(int64_t offset, int64_t n) const {
    SstDataset out;
    out.schedule = schedule;
    int m = inputs.dim(1), k = robust_logits.dim(1);
    out.inputs = Tensor({static_cast<int>(n), m},
                        std::vector<float>(inputs.data() + offset * m,
                                           inputs.data() + (offset + n) * m));
    out.robust_logits = Tensor({static_cast<int>(n), k},
                               std::vector<float>(robust_logits.data() + offset * k,
                                                  robust_logits.data() + (offset + n) * k));
    return out;
  }
};

// Expands `images` through the noise schedule and records the oracle's
// logits for every replica, querying in deterministic batch order under the
// substitute-training phase tag.
inline SstDataset build_sst_dataset(const Dataset& images, const NoiseSchedule& schedule,
                                    Oracle& oracle, int query_batch = 256) {
  Dataset noisy = replicate_with_noise(images, schedule);
  SstDataset out;
  out.schedule = schedule;
  out.inputs = std::move(noisy.images);
  int64_t n = out.inputs.dim(0);
  int m = out.inputs.dim(1);
  std::vector<float> logits;
  int k = -1;
  for (int64_t lo = 0; lo < n; lo += query_batch) {
    int64_t hi = std::min(n, lo + query_batch);
    Tensor batch({static_cast<int>(hi - lo), m},
                 std::vector<float>(out.inputs.data() + lo * m, out.inputs.data() + hi * m));
    OracleResponse r = oracle.query(batch, Phase::kSubstituteTraining);
    if (k < 0) {
      k = r.logits.dim(1);
      logits.reserve(static_cast<size_t>(n) * k);
    }
    logits.insert(logits.end(), r.logits.data(), r.logits.data() + r.logits.size());
  }
  out.robust_logits = Tensor({static_cast<int>(n), k}, std::move(logits));
  return out;
}

// (1/N) sum_i (1/K) sum_j (Z^robust_ij - Z^sub_ij)^2 — the mean squared error
// over every logit entry.
inline float sst_loss(const Tensor& substitute_logits, const Tensor& robust_logits) {
  if (substitute_logits.shape() != robust_logits.shape())
    throw ShapeError("sst_loss operand shapes differ");
  double s = 0.0;
  for (int64_t i = 0; i < substitute_logits.size(); ++i) {
    double d = static_cast<double>(robust_logits[i]) - substitute_logits[i];
    s += d * d;
  }
  return static_cast<float>(s / static_cast<double>(substitute_logits.size()));
}

struct SubstituteEpochMetrics {
  int epoch = 0;
  float lr = 0.0f;
  float train_loss = 0.0f;
  float holdout_loss = 0.0f;
};

// Distills the recorded logits into a fresh differentiable model by
// minimizing the per-logit mean squared error with Adam.
inline std::vector<SubstituteEpochMetrics> train_substitute(Model& m, const SstDataset& data,
                                                            const TrainRecipe& recipe) {
  recipe.validate();
  data.validate();
  if (data.count() < 1) throw ValidationError("sst dataset is empty");
  if (data.robust_logits.dim(1) != m.num_classes())
    throw ValidationError("sst dataset class count does not match substitute");

  int64_t n = data.count();
  int64_t holdout = std::min<int64_t>(n - 1, static_cast<int64_t>(std::ceil(
                                                 recipe.holdout_fraction * static_cast<double>(n))));
  int64_t ntrain = n - holdout;
  int mpix = data.inputs.dim(1);
  int k = data.robust_logits.dim(1);

  auto eval_holdout = [&]() -> float {
    if (holdout == 0) return 0.0f;
    Tensor imgs({static_cast<int>(holdout), mpix},
                std::vector<float>(data.inputs.data() + ntrain * mpix,
                                   data.inputs.data() + n * mpix));
    Tensor want({static_cast<int>(holdout), k},
                std::vector<float>(data.robust_logits.data() + ntrain * k,
                                   data.robust_logits.data() + n * k));
    return sst_loss(m.logits(imgs), want);
  };

  std::vector<SubstituteEpochMetrics> metrics;
  metrics.push_back({0, 0.0f, 0.0f, eval_holdout()});

  Rng rng = Rng(recipe.seed).stream("substitute");
  Rng dropout_rng = Rng(recipe.seed).stream("substitute-dropout");
  AdamState adam = AdamState::make(m.params());
  std::vector<int64_t> order(static_cast<size_t>(ntrain));
  for (int64_t i = 0; i < ntrain; ++i) order[static_cast<size_t>(i)] = i;

  int epoch = 0;
  for (const auto& phase : recipe.phases) {
    adam.lr = phase.lr;
    for (int e = 0; e < phase.epochs; ++e) {
      ++epoch;
      if (recipe.shuffle) order = rng.permutation(ntrain);
      double loss_sum = 0.0;
      int64_t steps = 0;
      for (int64_t lo = 0; lo < ntrain; lo += recipe.batch_size) {
        int64_t hi = std::min(ntrain, lo + recipe.batch_size);
        int bs = static_cast<int>(hi - lo);
        Tensor batch({bs, mpix});
        Tensor want({bs, k});
        for (int64_t i = lo; i < hi; ++i) {
          int64_t src = order[static_cast<size_t>(i)];
          std::copy(data.inputs.data() + src * mpix, data.inputs.data() + (src + 1) * mpix,
                    batch.data() + (i - lo) * mpix);
          std::copy(data.robust_logits.data() + src * k, data.robust_logits.data() + (src + 1) * k,
                    want.data() + (i - lo) * k);
        }
        Exec ex(m.graph());
        Bindings b = m.bind_params();
        b.bind(m.input_node(), batch);
        b.bind(m.mse_target_node(), want);
        ex.forward(b, Mode::kTrain, &dropout_rng, {m.mse_loss_node()});
        float loss = ex.value(m.mse_loss_node())[0];
        if (!std::isfinite(loss))
          throw DivergenceError("substitute training diverged at epoch " + std::to_string(epoch));
        loss_sum += loss;
        ++steps;
        ex.backward(m.mse_loss_node());
        std::vector<const Tensor*> grads;
        grads.reserve(m.param_nodes().size());
        for (int pn : m.param_nodes()) grads.push_back(&ex.grad(pn));
        adam_step(m.params(), grads, adam);
      }
      metrics.push_back({epoch, phase.lr,
                         static_cast<float>(loss_sum / std::max<int64_t>(1, steps)),
                         eval_holdout()});
    }
  }
  return metrics;
}

}  // namespace sstbench
