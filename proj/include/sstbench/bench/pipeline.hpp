#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sstbench/attack/cw.hpp"
#include "sstbench/attack/sst.hpp"
#include "sstbench/bench/config.hpp"
#include "sstbench/bench/report.hpp"
#include "sstbench/defended.hpp"
#include "sstbench/presets.hpp"
#include "sstbench/synth.hpp"
#include "sstbench/wire.hpp"

namespace sstbench {

// Corpus seeds are fixed so every experiment sees the same dataset, the way
// a downloaded corpus would behave.
constexpr uint64_t kCorpusTrainSeed = 0xd1617a11;
constexpr uint64_t kCorpusTestSeed = 0x7e57da7a;

struct Corpus {
  Dataset train;
  Dataset test;
};

// IDX files from `dir` (or $SSTBENCH_DATA_DIR) when present, the built-in
// generator otherwise.
inline Corpus load_corpus(const DataConfig& cfg) {
  std::string dir = cfg.dir;
  if (dir.empty()) {
    const char* env = std::getenv("SSTBENCH_DATA_DIR");
    if (env) dir = env;
  }
  if (!dir.empty()) {
    namespace fs = std::filesystem;
    fs::path p(dir);
    if (fs::exists(p / "train-images-idx3-ubyte")) {
      Corpus c;
      c.train = load_idx((p / "train-images-idx3-ubyte").string(),
                         (p / "train-labels-idx1-ubyte").string(), "train");
      c.test = load_idx((p / "t10k-images-idx3-ubyte").string(),
                        (p / "t10k-labels-idx1-ubyte").string(), "test");
      if (cfg.train_count > 0 && cfg.train_count < c.train.count())
        c.train = c.train.slice(0, cfg.train_count);
      if (cfg.test_count > 0 && cfg.test_count < c.test.count())
        c.test = c.test.slice(0, cfg.test_count);
      return c;
    }
  }
  Corpus c;
  c.train = make_digits(cfg.train_count, kCorpusTrainSeed, "train");
  c.test = make_digits(cfg.test_count, kCorpusTestSeed, "test");
  return c;
}

inline ModelSpec target_spec(const TargetConfig& cfg) {
  ModelSpec spec = make_preset(cfg.preset);
  if (cfg.thermometer_k > 0) spec = with_thermometer_input(spec, cfg.thermometer_k);
  return spec;
}

// Trains the target classifier, or reuses the cached checkpoint when its
// file already exists under the work directory.
inline Model ensure_target(const ExperimentConfig& cfg, const Corpus& corpus,
                           const std::string& work_dir) {
  namespace fs = std::filesystem;
  std::string ckpt;
  if (!cfg.target.checkpoint.empty())
    ckpt = (fs::path(work_dir) / cfg.target.checkpoint).string();
  if (!ckpt.empty() && fs::exists(ckpt)) return load_checkpoint(ckpt);

  Model model = Model::build(target_spec(cfg.target), Rng(cfg.seed).stream("target-init").next_u64());
  TrainRecipe recipe = cfg.target.train;
  recipe.seed = Rng(cfg.seed).stream("target-train").next_u64();
  BatchTransform transform;
  if (cfg.defense.kind == "rfn") {
    // RFN models see a fresh training-mode mask on every batch presentation
    RfnParams p;
    p.mu = cfg.defense.mu;
    p.sigma = cfg.defense.sigma;
    p.mode = RfnParams::Mode::kTraining;
    transform = [p](Tensor& batch, Rng& rng) {
      int m = batch.dim(1);
      Tensor mask = sample_rfn_mask(batch.dim(0), m, p, rng);
      for (int64_t i = 0; i < batch.size(); ++i) batch[i] *= mask[i];
    };
  }
  train_classifier(model, corpus.train, recipe, transform);
  if (!ckpt.empty()) {
    fs::create_directories(fs::path(ckpt).parent_path().empty() ? fs::path(work_dir)
                                                                : fs::path(ckpt).parent_path());
    save_checkpoint(model, ckpt);
  }
  return model;
}

// Fits the RBF-SVM detector: quantization thresholds from the clean tap
// activations of the corpus prefix, then clean/adversarial feature rows with
// the white-box attack supplying the adversarials.
inline SafetyNetDetector fit_safetynet_detector(const Model& classifier, const Dataset& train,
                                                const DetectorConfig& cfg, uint64_t seed,
                                                SvmFitReport* svm_report = nullptr,
                                                int* skipped = nullptr) {
  if (cfg.corpus > train.count())
    throw ValidationError("detector corpus larger than the training set");
  Dataset prefix = train.slice(0, cfg.corpus);
  Tensor clean_taps = classifier.tap_activations(prefix.images, cfg.tap);
  QuantizationThresholds thresholds = fit_quantization_thresholds(clean_taps);

  AttackParams wb;
  wb.total_run = 1;
  wb.total_iter = cfg.attack_iters;
  wb.lr = cfg.attack_lr;
  wb.kappa_schedule = {0.0f};
  wb.init_amplitude = 0.01f;
  Rng root(seed);
  AttackFn attack = [&](const Tensor& image, int label) -> std::optional<Tensor> {
    Rng rng = root.stream(fnv1a64(image.data(), static_cast<size_t>(image.size()) * 4));
    AdvResult r = cw_whitebox_attack(classifier, image, label, wb, /*targeted=*/false, rng);
    if (!r.success()) return std::nullopt;
    return r.image;
  };
  DetectorCorpus corpus =
      build_detector_training_set(classifier, prefix, cfg.corpus, cfg.tap, thresholds, attack);
  if (skipped) *skipped = corpus.skipped;

  SafetyNetDetector det;
  det.tap_index = cfg.tap;
  det.thresholds = thresholds;
  det.ratio_threshold = cfg.ratio_threshold;
  det.svm = train_rbf_svm(corpus.features, corpus.labels, cfg.svm_c, cfg.svm_gamma, cfg.svm_tol,
                          svm_report);
  return det;
}

// Wraps the trained target in its configured defense. SafetyNet fitting is
// cached inside the defended checkpoint.
inline std::unique_ptr<DefendedModel> make_defended(const ExperimentConfig& cfg, Model model,
                                                    const Corpus& corpus,
                                                    const std::string& work_dir) {
  namespace fs = std::filesystem;
  if (cfg.defense.kind == "none" || cfg.defense.kind == "thermometer") {
    // thermometer lives inside the model graph as its input layer
    return std::make_unique<PlainDefended>(std::move(model), cfg.defense.kind);
  }
  if (cfg.defense.kind == "rfn") {
    RfnParams p;
    p.mu = cfg.defense.mu;
    p.sigma = cfg.defense.sigma;
    p.mode = RfnParams::Mode::kTest;
    return std::make_unique<RfnDefended>(std::move(model), p, "rfn");
  }
  // safetynet
  std::string cache;
  if (!cfg.target.checkpoint.empty())
    cache = (fs::path(work_dir) / (cfg.target.checkpoint + ".detector")).string();
  if (!cache.empty() && fs::exists(cache)) {
    SafetyNetDetector det = load_detector_sections(ckpt::read_file(cache));
    return std::make_unique<SafetyNetDefended>(std::move(model), std::move(det), "safetynet");
  }
  SafetyNetDetector det = fit_safetynet_detector(model, corpus.train, cfg.defense.detector,
                                                 Rng(cfg.seed).stream("detector").next_u64());
  if (!cache.empty()) {
    ckpt::Sections sections;
    save_detector_sections(det, sections);
    ckpt::write_file(cache, sections);
  }
  return std::make_unique<SafetyNetDefended>(std::move(model), std::move(det), "safetynet");
}

// First N test images the defended target classifies correctly, judged
// through the oracle surface: majority vote for stochastic targets, plus a
// legitimate detector verdict where a detector exists.
inline std::vector<int> select_samples(const Dataset& test, Oracle& oracle, const VerifySpec& verify,
                                       bool has_detector, bool stochastic, int count,
                                       const std::string& selection) {
  std::vector<int> picked;
  int m = test.pixel_count();
  for (int i = 0; i < test.count() && static_cast<int>(picked.size()) < count; ++i) {
    if (selection == "prefix") {
      picked.push_back(i);
      continue;
    }
    Tensor img = test.image(i);
    int y = test.labels[static_cast<size_t>(i)];
    bool correct;
    if (stochastic && verify.vote_runs > 1) {
      Tensor batch({verify.vote_runs, m});
      for (int r = 0; r < verify.vote_runs; ++r)
        std::copy(img.data(), img.data() + m, batch.data() + static_cast<int64_t>(r) * m);
      OracleResponse resp = oracle.query(batch, Phase::kOther);
      int votes = 0;
      int k = resp.logits.dim(1);
      for (int r = 0; r < verify.vote_runs; ++r)
        if (argmax(resp.logits.data() + static_cast<int64_t>(r) * k, k) == y) ++votes;
      correct = votes > verify.vote_threshold;
    } else {
      OracleResponse resp = oracle.query(img.reshaped({1, m}), Phase::kOther);
      correct = argmax(resp.logits.data(), resp.logits.dim(1)) == y;
      if (correct && has_detector && resp.verdicts.has_value())
        correct = (*resp.verdicts)[0] == Verdict::kLegitimate;
    }
    if (correct) picked.push_back(i);
  }
  if (picked.empty()) throw ValidationError("sample selection is empty after filtering");
  return picked;
}

struct PipelineArtifacts {
  Corpus corpus;
  std::unique_ptr<DefendedModel> defended;
  std::unique_ptr<InProcessOracle> in_process;
  std::unique_ptr<RemoteOracle> remote;
  std::vector<Model> substitutes;
  std::vector<int> sample_indices;

  Oracle& oracle() { return remote ? static_cast<Oracle&>(*remote) : *in_process; }
};

// Builds everything up to (but not including) the crafting loop.
inline PipelineArtifacts prepare_pipeline(const ExperimentConfig& cfg,
                                          const std::string& work_dir) {
  cfg.validate();
  PipelineArtifacts art;
  art.corpus = load_corpus(cfg.data);
  Model target = ensure_target(cfg, art.corpus, work_dir);
  art.defended = make_defended(cfg, std::move(target), art.corpus, work_dir);
  if (cfg.oracle.transport == "wire") {
    art.remote = std::make_unique<RemoteOracle>(cfg.oracle.address);
  } else {
    art.in_process = std::make_unique<InProcessOracle>(
        *art.defended, Rng(cfg.seed).stream("oracle").next_u64());
  }

  // substitutes distilled from recorded logits of the noisy test prefix
  Dataset source = art.corpus.test.slice(0, std::min<int64_t>(cfg.sst.source_count,
                                                              art.corpus.test.count()));
  for (size_t i = 0; i < cfg.sst.substitutes.size(); ++i) {
    const SubstituteConfig& sc = cfg.sst.substitutes[i];
    NoiseSchedule schedule = ladder_schedule(
        sc.schedule_count, sc.schedule_step,
        Rng(cfg.seed).stream("sst-noise-" + std::to_string(i)).next_u64());
    SstDataset data = build_sst_dataset(source, schedule, art.oracle());
    Model sub = Model::build(make_preset(sc.preset),
                             Rng(cfg.seed).stream("sub-init-" + std::to_string(i)).next_u64());
    TrainRecipe recipe = sc.train;
    recipe.seed = Rng(cfg.seed).stream("sub-train-" + std::to_string(i)).next_u64();
    train_substitute(sub, data, recipe);
    art.substitutes.push_back(std::move(sub));
  }

  art.sample_indices = select_samples(art.corpus.test, art.oracle(), cfg.attack.verify,
                                      art.defended->has_detector(), art.defended->stochastic(),
                                      cfg.samples.count, cfg.samples.selection);
  return art;
}

// The full pipeline: train target, apply defense, distill substitutes, craft
// per sample and aggregate. Every random stream derives from the config
// seed, so identical configs reproduce identical report rows.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& work_dir,
                                       std::vector<AdvResult>* adv_out = nullptr) {
  auto t0 = std::chrono::steady_clock::now();
  PipelineArtifacts art = prepare_pipeline(cfg, work_dir);

  std::vector<const Model*> subs;
  for (const auto& s : art.substitutes) subs.push_back(&s);

  ExperimentReport report;
  report.name = cfg.name;
  report.seed = cfg.seed;
  report.config_hash = config_hash(cfg);
  Rng craft_root = Rng(cfg.seed).stream("craft");
  for (int idx : art.sample_indices) {
    Tensor x = art.corpus.test.image(idx);
    int y = art.corpus.test.labels[static_cast<size_t>(idx)];
    Rng rng = craft_root.stream(static_cast<uint64_t>(idx));
    AdvResult adv = craft_adv_example(x, y, art.oracle(), subs, cfg.attack, rng);
    SampleRow row;
    row.sample_index = idx;
    row.true_label = y;
    row.target_label = adv.target_label;
    row.success = adv.success();
    row.l2 = adv.l2;
    row.linf = adv.linf;
    row.iterations = adv.iterations;
    row.queries = adv.queries;
    row.detector_evaded = adv.detector_evaded;
    report.rows.push_back(row);
    if (adv_out) adv_out->push_back(std::move(adv));
  }
  report.queries = art.oracle().log();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace sstbench
