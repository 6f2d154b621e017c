#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sstbench/defenses/rfn.hpp"
#include "sstbench/defenses/safetynet.hpp"
#include "sstbench/model.hpp"

namespace sstbench {

enum class Verdict : uint8_t { kLegitimate = 0, kAdversarial = 1 };

// A classifier with its defense applied, exposing exactly the surface an
// oracle serves: logits (and detector verdicts when a detector exists).
// Nothing here leaks parameters, gradients or the defense identity.
class DefendedModel {
 public:
  virtual ~DefendedModel() = default;
  virtual std::string id() const = 0;
  virtual int num_classes() const = 0;
  virtual int64_t input_dim() const = 0;
  virtual bool stochastic() const = 0;
  virtual bool has_detector() const = 0;
  virtual Tensor logits(const Tensor& batch, Rng& rng) const = 0;
  virtual std::vector<Verdict> verdicts(const Tensor& batch, Rng& rng) const {
    (void)batch;
    (void)rng;
    throw ValidationError("model '" + id() + "' has no detector");
  }
};

// Undefended model (also covers thermometer models, whose discretization
// lives inside the graph as the first layer).
class PlainDefended : public DefendedModel {
 public:
  PlainDefended(Model model, std::string id) : model_(std::move(model)), id_(std::move(id)) {}

  std::string id() const override { return id_; }
  int num_classes() const override { return model_.num_classes(); }
  int64_t input_dim() const override { return model_.input_dim(); }
  bool stochastic() const override { return false; }
  bool has_detector() const override { return false; }
  Tensor logits(const Tensor& batch, Rng&) const override { return model_.logits(batch); }

  const Model& model() const { return model_; }

 private:
  Model model_;
  std::string id_;
};

class RfnDefended : public DefendedModel {
 public:
  RfnDefended(Model model, RfnParams params, std::string id)
      : model_(std::move(model)), params_(params), id_(std::move(id)) {
    params_.validate();
  }

  std::string id() const override { return id_; }
  int num_classes() const override { return model_.num_classes(); }
  int64_t input_dim() const override { return model_.input_dim(); }
  bool stochastic() const override { return true; }
  bool has_detector() const override { return false; }
  Tensor logits(const Tensor& batch, Rng& rng) const override {
    return rfn_forward(model_, batch, params_, rng);
  }

  const Model& model() const { return model_; }
  const RfnParams& params() const { return params_; }

 private:
  Model model_;
  RfnParams params_;
  std::string id_;
};

class SafetyNetDefended : public DefendedModel {
 public:
  SafetyNetDefended(Model model, SafetyNetDetector det, std::string id)
      : model_(std::move(model)), det_(std::move(det)), id_(std::move(id)) {
    det_.validate(model_);
  }

  std::string id() const override { return id_; }
  int num_classes() const override { return model_.num_classes(); }
  int64_t input_dim() const override { return model_.input_dim(); }
  bool stochastic() const override { return false; }
  bool has_detector() const override { return true; }
  Tensor logits(const Tensor& batch, Rng&) const override { return model_.logits(batch); }
  std::vector<Verdict> verdicts(const Tensor& batch, Rng&) const override {
    auto judged = safetynet_judge(model_, det_, batch);
    std::vector<Verdict> out(judged.size());
    for (size_t i = 0; i < judged.size(); ++i)
      out[i] = judged[i].adversarial ? Verdict::kAdversarial : Verdict::kLegitimate;
    return out;
  }

  const Model& model() const { return model_; }
  const SafetyNetDetector& detector() const { return det_; }

 private:
  Model model_;
  SafetyNetDetector det_;
  std::string id_;
};

struct VoteResult {
  std::vector<int> counts;  // per-class prediction counts
  bool correct = false;     // count(true label) > threshold, strict
};

// `runs` independent stochastic passes over one image. Deterministic
// defenses yield runs * one-hot counts.
inline VoteResult majority_vote_predict(const DefendedModel& model, const Tensor& image,
                                        int true_label, int runs, int threshold, Rng& rng) {
  if (runs < 1) throw ValidationError("vote needs runs >= 1");
  if (threshold < 0 || threshold >= runs) throw ValidationError("vote threshold must be in [0, runs)");
  int m = static_cast<int>(model.input_dim());
  if (image.size() != m) throw ShapeError("vote image size mismatch");
  Tensor batch({runs, m});
  for (int r = 0; r < runs; ++r)
    std::copy(image.data(), image.data() + m, batch.data() + static_cast<int64_t>(r) * m);
  Tensor z = model.logits(batch, rng);
  int k = model.num_classes();
  VoteResult res;
  res.counts.assign(static_cast<size_t>(k), 0);
  for (int r = 0; r < runs; ++r) res.counts[static_cast<size_t>(argmax(z.data() + static_cast<int64_t>(r) * k, k))]++;
  res.correct = true_label >= 0 && true_label < k &&
                res.counts[static_cast<size_t>(true_label)] > threshold;
  return res;
}

// ---- defended checkpoints ----
// The standard model checkpoint plus a "defense" section; detector state
// rides along in its own sections.

inline void save_defended_checkpoint(const DefendedModel& dm, const std::string& path) {
  ckpt::Sections sections;
  nlohmann::json defense;
  if (const auto* rfn = dynamic_cast<const RfnDefended*>(&dm)) {
    save_model_sections(rfn->model(), sections);
    defense["kind"] = "rfn";
    defense["mu"] = rfn->params().mu;
    defense["sigma"] = rfn->params().sigma;
  } else if (const auto* sn = dynamic_cast<const SafetyNetDefended*>(&dm)) {
    save_model_sections(sn->model(), sections);
    defense["kind"] = "safetynet";
    save_detector_sections(sn->detector(), sections);
  } else if (const auto* plain = dynamic_cast<const PlainDefended*>(&dm)) {
    save_model_sections(plain->model(), sections);
    defense["kind"] = "none";
  } else {
    throw ValidationError("unknown defended model type");
  }
  defense["id"] = dm.id();
  sections["defense"] = ckpt::encode_json(defense);
  ckpt::write_file(path, sections);
}

inline std::unique_ptr<DefendedModel> load_defended_checkpoint(const std::string& path) {
  ckpt::Sections sections = ckpt::read_file(path);
  Model model = load_model_sections(sections);
  auto it = sections.find("defense");
  if (it == sections.end())
    return std::make_unique<PlainDefended>(std::move(model), "plain");
  nlohmann::json defense = ckpt::decode_json(it->second, "defense");
  std::string kind = defense.value("kind", "none");
  std::string id = defense.value("id", kind);
  if (kind == "none") return std::make_unique<PlainDefended>(std::move(model), id);
  if (kind == "rfn") {
    RfnParams p;
    p.mu = defense.at("mu").get<float>();
    p.sigma = defense.at("sigma").get<float>();
    p.mode = RfnParams::Mode::kTest;
    return std::make_unique<RfnDefended>(std::move(model), p, id);
  }
  if (kind == "safetynet") {
    SafetyNetDetector det = load_detector_sections(sections);
    return std::make_unique<SafetyNetDefended>(std::move(model), std::move(det), id);
  }
  throw FormatError("unknown defense kind '" + kind + "' in " + path);
}

}  // namespace sstbench
