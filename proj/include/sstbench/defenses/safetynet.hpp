#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "sstbench/data.hpp"
#include "sstbench/defenses/svm.hpp"
#include "sstbench/model.hpp"

namespace sstbench {

// Four-bin quantization thresholds over the positive activations seen at the
// detector's tap layer. Quantile rule: index ceil(q*n) over the sorted
// positives (lower interpolation).
struct QuantizationThresholds {
  float q1 = 0.0f;
  float median = 0.0f;
  float q3 = 0.0f;
  float max_act = 0.0f;
  bool degenerate = false;  // q1 == q3: everything collapses to two values

  void validate() const {
    if (!(q1 > 0.0f) || q1 > median || median > q3 || q3 > max_act)
      throw ValidationError("quantization thresholds must satisfy 0 < q1 <= median <= q3 <= max");
  }

  nlohmann::json to_json() const {
    return {{"q1", q1}, {"median", median}, {"q3", q3}, {"max_act", max_act},
            {"degenerate", degenerate}};
  }
  static QuantizationThresholds from_json(const nlohmann::json& j) {
    QuantizationThresholds t;
    t.q1 = j.at("q1").get<float>();
    t.median = j.at("median").get<float>();
    t.q3 = j.at("q3").get<float>();
    t.max_act = j.at("max_act").get<float>();
    t.degenerate = j.value("degenerate", false);
    t.validate();
    return t;
  }
};

inline QuantizationThresholds fit_quantization_thresholds(const Tensor& activations) {
  std::vector<float> pos;
  pos.reserve(static_cast<size_t>(activations.size()));
  for (int64_t i = 0; i < activations.size(); ++i)
    if (activations[i] > 0.0f) pos.push_back(activations[i]);
  if (pos.empty())
    throw ValidationError("cannot fit quantization thresholds: no positive activations");
  std::sort(pos.begin(), pos.end());
  auto quantile = [&](double q) {
    size_t idx = static_cast<size_t>(std::ceil(q * static_cast<double>(pos.size())));
    idx = std::max<size_t>(idx, 1);
    return pos[idx - 1];
  };
  QuantizationThresholds t;
  t.q1 = quantile(0.25);
  t.median = quantile(0.5);
  t.q3 = quantile(0.75);
  t.max_act = pos.back();
  t.degenerate = !(t.q1 < t.q3);
  t.validate();
  return t;
}

// Bin midpoints: [0,q1) -> q1/2, [q1,median) -> q1+(median-q1)/2,
// [median,q3) -> median+(q3-median)/2, [q3,inf) -> q3+(max-q3)/2.
// Degenerate thresholds map below/above q1 to q1/2 and q1.
inline float quantize_value(float v, const QuantizationThresholds& t) {
  if (t.degenerate) return v < t.q1 ? t.q1 * 0.5f : t.q1;
  if (v < t.q1) return t.q1 * 0.5f;
  if (v < t.median) return t.q1 + (t.median - t.q1) * 0.5f;
  if (v < t.q3) return t.median + (t.q3 - t.median) * 0.5f;
  return t.q3 + (t.max_act - t.q3) * 0.5f;
}

inline Tensor quantize(const Tensor& activations, const QuantizationThresholds& t) {
  t.validate();
  Tensor out(activations.shape());
  for (int64_t i = 0; i < activations.size(); ++i) out[i] = quantize_value(activations[i], t);
  return out;
}

// second-highest / highest probability.
inline double confidence_ratio(const float* probs, int k) {
  if (k < 2) throw ValidationError("confidence_ratio needs >= 2 classes");
  float best = -1.0f, second = -1.0f;
  for (int j = 0; j < k; ++j) {
    if (probs[j] > best) {
      second = best;
      best = probs[j];
    } else if (probs[j] > second) {
      second = probs[j];
    }
  }
  return best > 0.0f ? static_cast<double>(second) / best : 1.0;
}

inline double confidence_ratio(const Tensor& prob_row) {
  return confidence_ratio(prob_row.data(), static_cast<int>(prob_row.size()));
}

// Quantized-activation detector: RBF SVM over the tap layer plus a
// confidence-ratio rejection rule.
struct SafetyNetDetector {
  int tap_index = 0;  // which dense+relu output feeds the detector
  QuantizationThresholds thresholds;
  RbfSvm svm;  // positive class = adversarial
  float ratio_threshold = 0.25f;

  void validate(const Model& classifier) const {
    if (tap_index < 0 || tap_index >= classifier.dense_relu_count())
      throw ValidationError("detector tap index invalid for this classifier");
    if (ratio_threshold <= 0.0f || ratio_threshold >= 1.0f)
      throw ValidationError("ratio threshold must be in (0,1)");
  }
};

struct JudgeResult {
  int predicted = -1;
  bool adversarial = false;
  bool ratio_flag = false;  // confidence ratio above threshold
  bool svm_flag = false;    // SVM called it adversarial
  double ratio = 0.0;
};

// Runs classifier + detector on a batch. An input is adversarial iff the
// confidence ratio exceeds the threshold OR the SVM flags its quantized tap
// activations.
inline std::vector<JudgeResult> safetynet_judge(const Model& classifier,
                                                const SafetyNetDetector& det, const Tensor& batch) {
  det.validate(classifier);
  Tensor probs = classifier.probabilities(batch);
  Tensor taps = classifier.tap_activations(batch, det.tap_index);
  int k = classifier.num_classes();
  int64_t n = probs.size() / k;
  int width = static_cast<int>(taps.size() / n);
  std::vector<JudgeResult> out(static_cast<size_t>(n));
  std::vector<float> q(static_cast<size_t>(width));
  for (int64_t i = 0; i < n; ++i) {
    JudgeResult& r = out[static_cast<size_t>(i)];
    const float* p = probs.data() + i * k;
    r.predicted = argmax(p, k);
    r.ratio = confidence_ratio(p, k);
    r.ratio_flag = r.ratio > det.ratio_threshold;
    const float* t = taps.data() + i * width;
    for (int j = 0; j < width; ++j) q[static_cast<size_t>(j)] = quantize_value(t[j], det.thresholds);
    r.svm_flag = det.svm.predict(q.data()) == 1;
    r.adversarial = r.ratio_flag || r.svm_flag;
  }
  return out;
}

// Labeled (quantized tap features, legit/adv) rows for detector training.
struct DetectorCorpus {
  Tensor features;          // [rows, width]
  std::vector<int> labels;  // 0 legit, 1 adversarial
  int skipped = 0;          // samples whose attack failed
};

// Attack callback: given (image row, true label) produce an adversarial
// image or nothing. Supplied by the attack module so the detector code does
// not depend on it.
using AttackFn = std::function<std::optional<Tensor>(const Tensor& image, int label)>;

// For each of the first M training images: tap features of the clean image
// (labeled legit) and of its adversarial counterpart (labeled adversarial),
// both quantized with `thresholds`.
inline DetectorCorpus build_detector_training_set(const Model& classifier, const Dataset& train,
                                                  int m_prefix, int tap_index,
                                                  const QuantizationThresholds& thresholds,
                                                  const AttackFn& attack) {
  if (m_prefix < 1 || m_prefix > train.count())
    throw ValidationError("detector corpus prefix out of range");
  Dataset prefix = train.slice(0, m_prefix);
  Tensor clean_taps = classifier.tap_activations(prefix.images, tap_index);
  int width = static_cast<int>(clean_taps.size() / m_prefix);

  std::vector<float> rows;
  std::vector<int> labels;
  DetectorCorpus corpus;
  for (int i = 0; i < m_prefix; ++i) {
    Tensor img = prefix.image(i);
    std::optional<Tensor> adv = attack(img, prefix.labels[static_cast<size_t>(i)]);
    if (!adv.has_value()) {
      ++corpus.skipped;
      continue;
    }
    for (int j = 0; j < width; ++j)
      rows.push_back(quantize_value(clean_taps[static_cast<int64_t>(i) * width + j], thresholds));
    labels.push_back(0);
    Tensor adv_tap = classifier.tap_activations(adv->reshaped({1, static_cast<int>(adv->size())}),
                                                tap_index);
    for (int j = 0; j < width; ++j) rows.push_back(quantize_value(adv_tap[j], thresholds));
    labels.push_back(1);
  }
  if (labels.empty()) throw ValidationError("detector corpus is empty (all attacks failed)");
  corpus.features = Tensor({static_cast<int>(labels.size()), width}, std::move(rows));
  corpus.labels = std::move(labels);
  return corpus;
}

// ---- checkpoint sections ----

inline void save_detector_sections(const SafetyNetDetector& det, ckpt::Sections& sections) {
  nlohmann::json meta;
  meta["tap_index"] = det.tap_index;
  meta["ratio_threshold"] = det.ratio_threshold;
  meta["thresholds"] = det.thresholds.to_json();
  sections["safetynet.meta"] = ckpt::encode_json(meta);
  sections["safetynet.svm"] = svm_to_bytes(det.svm);
}

inline SafetyNetDetector load_detector_sections(const ckpt::Sections& sections) {
  auto mit = sections.find("safetynet.meta");
  auto sit = sections.find("safetynet.svm");
  if (mit == sections.end() || sit == sections.end())
    throw FormatError("checkpoint has no detector sections");
  nlohmann::json meta = ckpt::decode_json(mit->second, "safetynet.meta");
  SafetyNetDetector det;
  det.tap_index = meta.at("tap_index").get<int>();
  det.ratio_threshold = meta.at("ratio_threshold").get<float>();
  det.thresholds = QuantizationThresholds::from_json(meta.at("thresholds"));
  det.svm = svm_from_bytes(sit->second);
  return det;
}

}  // namespace sstbench
