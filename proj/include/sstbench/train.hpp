#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sstbench/data.hpp"
#include "sstbench/model.hpp"
#include "sstbench/optim.hpp"

namespace sstbench {

struct TrainPhase {
  int epochs = 1;
  float lr = 1e-3f;
};

struct TrainRecipe {
  std::vector<TrainPhase> phases;
  std::string optimizer = "adam";  // "adam" | "sgd"
  int batch_size = 100;
  uint64_t seed = 1;
  float holdout_fraction = 0.05f;  // carved off the end of the training set
  bool shuffle = true;

  int total_epochs() const {
    int n = 0;
    for (const auto& p : phases) n += p.epochs;
    return n;
  }

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd")
      throw ValidationError("unknown optimizer '" + optimizer + "'");
    if (holdout_fraction < 0.0f || holdout_fraction >= 1.0f)
      throw ValidationError("holdout fraction must be in [0,1)");
    for (const auto& p : phases)
      if (p.epochs < 0 || p.lr <= 0.0f) throw ValidationError("bad training phase");
  }
};

struct EpochMetrics {
  int epoch = 0;  // 0 = before any update
  float lr = 0.0f;
  float train_loss = 0.0f;    // mean over the epoch's minibatches
  float holdout_loss = 0.0f;
  double holdout_accuracy = 0.0;
};

namespace traindetail {

inline Tensor gather_rows(const Tensor& images, const std::vector<int64_t>& order, int64_t lo,
                          int64_t hi) {
  int m = images.dim(1);
  Tensor batch({static_cast<int>(hi - lo), m});
  for (int64_t i = lo; i < hi; ++i) {
    const float* src = images.data() + order[static_cast<size_t>(i)] * m;
    std::copy(src, src + m, batch.data() + (i - lo) * m);
  }
  return batch;
}

struct HoldoutEval {
  float loss = 0.0f;
  double accuracy = 0.0;
};

}  // namespace traindetail

// Cross-entropy evaluation in inference mode (dropout off).
inline traindetail::HoldoutEval evaluate_classifier(const Model& m, const Tensor& images,
                                                    const std::vector<int>& labels,
                                                    int batch_size = 256) {
  traindetail::HoldoutEval ev;
  int64_t n = images.dim(0);
  int mpix = images.dim(1);
  int k = m.num_classes();
  double loss_sum = 0.0;
  int64_t correct = 0;
  for (int64_t lo = 0; lo < n; lo += batch_size) {
    int64_t hi = std::min(n, lo + batch_size);
    Tensor batch({static_cast<int>(hi - lo), mpix});
    std::copy(images.data() + lo * mpix, images.data() + hi * mpix, batch.data());
    std::vector<int> blabels(labels.begin() + lo, labels.begin() + hi);
    Exec ex(m.graph());
    Bindings b = m.bind_params();
    b.bind(m.input_node(), batch);
    b.labels = &blabels;
    ex.forward(b, Mode::kInfer, nullptr, {m.ce_loss_node(), m.logits_node()});
    loss_sum += static_cast<double>(ex.value(m.ce_loss_node())[0]) * static_cast<double>(hi - lo);
    const Tensor& z = ex.value(m.logits_node());
    for (int64_t i = 0; i < hi - lo; ++i)
      if (argmax(z.data() + i * k, k) == blabels[static_cast<size_t>(i)]) ++correct;
  }
  ev.loss = static_cast<float>(loss_sum / static_cast<double>(n));
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return ev;
}

inline double accuracy(const Model& m, const Dataset& ds) {
  return evaluate_classifier(m, ds.images, ds.labels).accuracy;
}

// Per-batch input hook, e.g. stochastic defenses that mask every
// presentation freshly during training.
using BatchTransform = std::function<void(Tensor& batch, Rng& rng)>;

// Minibatch training against the fused softmax + cross-entropy head.
// Deterministic for a fixed recipe seed and data order. Metric row 0 is the
// pre-training evaluation; aborts with DivergenceError on NaN loss.
inline std::vector<EpochMetrics> train_classifier(Model& m, const Dataset& train,
                                                  const TrainRecipe& recipe,
                                                  const BatchTransform& transform = {}) {
  recipe.validate();
  train.validate();
  for (int l : train.labels)
    if (l < 0 || l >= m.num_classes()) throw ValidationError("training label out of range");

  int64_t n = train.count();
  int64_t holdout = std::min<int64_t>(n - 1, static_cast<int64_t>(std::ceil(
                                                 recipe.holdout_fraction * static_cast<double>(n))));
  int64_t ntrain = n - holdout;
  if (ntrain < 1) throw ValidationError("training set empty after holdout split");
  const Tensor& images = train.images;
  int mpix = train.pixel_count();

  Tensor hold_images({std::max<int>(1, static_cast<int>(holdout)), mpix});
  std::vector<int> hold_labels;
  if (holdout > 0) {
    std::copy(images.data() + ntrain * mpix, images.data() + n * mpix, hold_images.data());
    hold_labels.assign(train.labels.begin() + ntrain, train.labels.end());
  } else {  // fall back to scoring on the training slice itself
    hold_images = Tensor({static_cast<int>(ntrain), mpix});
    std::copy(images.data(), images.data() + ntrain * mpix, hold_images.data());
    hold_labels = train.labels;
  }

  std::vector<EpochMetrics> metrics;
  auto ev0 = evaluate_classifier(m, hold_images, hold_labels);
  metrics.push_back({0, 0.0f, 0.0f, ev0.loss, ev0.accuracy});

  Rng rng = Rng(recipe.seed).stream("train");
  Rng dropout_rng = Rng(recipe.seed).stream("dropout");
  Rng transform_rng = Rng(recipe.seed).stream("batch-transform");
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
        Tensor batch = traindetail::gather_rows(images, order, lo, hi);
        if (transform) transform(batch, transform_rng);
        std::vector<int> blabels(static_cast<size_t>(hi - lo));
        for (int64_t i = lo; i < hi; ++i)
          blabels[static_cast<size_t>(i - lo)] =
              train.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
        Exec ex(m.graph());
        Bindings b = m.bind_params();
        b.bind(m.input_node(), batch);
        b.labels = &blabels;
        ex.forward(b, Mode::kTrain, &dropout_rng, {m.ce_loss_node()});
        float loss = ex.value(m.ce_loss_node())[0];
        if (!std::isfinite(loss))
          throw DivergenceError("training diverged (loss=" + std::to_string(loss) + ") at epoch " +
                                std::to_string(epoch));
        loss_sum += loss;
        ++steps;
        ex.backward(m.ce_loss_node());
        std::vector<const Tensor*> grads;
        grads.reserve(m.param_nodes().size());
        for (int pn : m.param_nodes()) grads.push_back(&ex.grad(pn));
        if (recipe.optimizer == "adam")
          adam_step(m.params(), grads, adam);
        else
          sgd_step(m.params(), grads, phase.lr);
      }
      auto ev = evaluate_classifier(m, hold_images, hold_labels);
      metrics.push_back({epoch, phase.lr, static_cast<float>(loss_sum / std::max<int64_t>(1, steps)),
                         ev.loss, ev.accuracy});
    }
  }
  return metrics;
}

}  // namespace sstbench
