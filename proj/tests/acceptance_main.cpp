// Acceptance suite: one pass/fail line per criterion, desk scale by default.
// --full additionally runs the long target-training reproduction; --only N
// restricts to a single criterion (its prerequisites still run).

#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>

#include "sstbench/attack/baselines.hpp"
#include "sstbench/bench/pipeline.hpp"
#include "sstbench/defenses/thermometer.hpp"
#include "util/random_graphs.hpp"

namespace fs = std::filesystem;
using namespace sstbench;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
  double seconds;
};

class Timer {
 public:
  Timer() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

std::string pct(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%.1f%%", 100.0 * v);
  return b;
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%.3f", v);
  return b;
}

struct CraftSummary {
  std::vector<SampleRow> rows;
  double rate() const { return success_rate(rows); }
  std::optional<double> l2() const { return mean_l2(rows); }
};

CraftSummary craft_over_samples(const Dataset& test, const std::vector<int>& samples,
                                Oracle& oracle, const std::vector<const Model*>& subs,
                                const AttackParams& params, uint64_t seed) {
  CraftSummary out;
  Rng root = Rng(seed).stream("craft");
  for (int idx : samples) {
    Rng rng = root.stream(static_cast<uint64_t>(idx));
    AdvResult adv = craft_adv_example(test.image(idx), test.labels[static_cast<size_t>(idx)],
                                      oracle, subs, params, rng);
    SampleRow row;
    row.sample_index = idx;
    row.true_label = test.labels[static_cast<size_t>(idx)];
    row.target_label = adv.target_label;
    row.success = adv.success();
    row.l2 = adv.l2;
    row.linf = adv.linf;
    row.iterations = adv.iterations;
    row.queries = adv.queries;
    row.detector_evaded = adv.detector_evaded;
    out.rows.push_back(row);
  }
  return out;
}

// Repeat a base set of images through a noise ladder: `copies` replicas per
// amplitude step*1..step*count, the shape of the published recipes.
NoiseSchedule cycling_schedule(int steps, float step, int copies, uint64_t seed) {
  NoiseSchedule s;
  s.seed = seed;
  for (int i = 1; i <= steps; ++i) s.replicas.push_back({copies, step * static_cast<float>(i)});
  return s;
}

Dataset gather(const Dataset& test, const std::vector<int>& indices) {
  Dataset out;
  out.width = test.width;
  out.height = test.height;
  out.channels = test.channels;
  out.name = test.name + "-picked";
  int m = test.pixel_count();
  out.images = Tensor({static_cast<int>(indices.size()), m});
  for (size_t i = 0; i < indices.size(); ++i) {
    Tensor row = test.image(indices[i]);
    std::copy(row.data(), row.data() + m, out.images.data() + static_cast<int64_t>(i) * m);
    out.labels.push_back(test.labels[static_cast<size_t>(indices[i])]);
  }
  return out;
}

class Acceptance {
 public:
  Acceptance(bool full, std::string work) : full_(full), work_(std::move(work)) {
    fs::create_directories(work_);
    corpus_ = load_corpus(DataConfig{});  // 12000 train / 2000 test
  }

  void report(int id, bool pass, const std::string& detail, double secs) {
    std::printf("criterion %2d: %s  %s (%.1fs)\n", id, pass ? "PASS" : "FAIL", detail.c_str(),
                secs);
    std::fflush(stdout);
    outcomes_.push_back({id, pass, detail, secs});
  }

  bool all_passed() const {
    for (const auto& o : outcomes_)
      if (!o.pass) return false;
    return true;
  }

  // -- shared artifacts --

  const Model& small_target() {
    if (!small_target_.has_value()) {
      std::string ckpt = work_ + "/accept-small-target.ckpt";
      if (fs::exists(ckpt)) {
        small_target_ = load_checkpoint(ckpt);
      } else {
        Model m = Model::build(make_preset("small_cnn"), 4101);
        TrainRecipe r;
        r.phases = {{3, 1e-3f}, {2, 1e-4f}};
        r.batch_size = 100;
        r.seed = 4102;
        Dataset subset = corpus_.train.slice(0, 10000);
        train_classifier(m, subset, r);
        save_checkpoint(m, ckpt);
        small_target_ = std::move(m);
      }
    }
    return *small_target_;
  }

  // ---- criteria ----

  void criterion1() {
    Timer t;
    Rng rng(990);
    int graphs = 0;
    double worst = 0.0;
    std::string worst_leaf;
    bool saw[9] = {false};
    auto mark = [&](const Graph& g) {
      for (int i = 0; i < g.size(); ++i) {
        switch (g.node(i).op) {
          case Op::kDense: saw[0] = true; break;
          case Op::kConv2d: saw[1] = true; break;
          case Op::kMaxPool: saw[2] = true; break;
          case Op::kRelu: saw[3] = true; break;
          case Op::kSoftmax: saw[4] = true; break;
          case Op::kDropout: saw[5] = true; break;
          case Op::kFlatten: saw[6] = true; break;
          case Op::kAdd:
          case Op::kMul: saw[7] = true; break;
          case Op::kSumAll:
          case Op::kMeanAll:
          case Op::kSoftmaxXent: saw[8] = true; break;
          default: break;
        }
      }
    };
    bool ok = true;
    while (graphs < 50 || !std::all_of(saw, saw + 9, [](bool b) { return b; })) {
      auto c = testutil::make_random_graph(rng);
      mark(c.graph);
      auto res = testutil::grad_check(c);
      double tol = c.has_maxpool ? 1e-2 : 1e-3;
      if (res.max_err >= tol) {
        ok = false;
        worst = res.max_err;
        worst_leaf = res.worst;
        break;
      }
      worst = std::max(worst, res.max_err);
      ++graphs;
      if (graphs > 120) break;
    }
    bool in_time = t.seconds() < 60.0;
    bool covered = std::all_of(saw, saw + 9, [](bool b) { return b; });
    report(1, ok && in_time && covered,
           "gradients vs finite differences on " + std::to_string(graphs) +
               " random graphs (all layer kinds seen: " + (covered ? "yes" : "NO") +
               "), max rel err " + num(worst) +
               (worst_leaf.empty() ? "" : " at " + worst_leaf),
           t.seconds());
  }

  void criterion2() {
    Timer t;
    const Model& m = small_target();
    double acc = accuracy(m, corpus_.test);
    bool pass = acc >= 0.97 && t.seconds() <= 300.0;
    std::string detail = "small CNN on 10k subset: test accuracy " + pct(acc) + " (need >= 97%)";
    if (full_) {
      Timer tf;
      Corpus full_corpus;
      DataConfig dc;
      dc.train_count = 60000;
      dc.test_count = 10000;
      full_corpus = load_corpus(dc);
      Model table8 = Model::build(make_preset("table8"), 4201);
      TrainRecipe r;
      r.phases = {{3, 1e-3f}, {3, 1e-4f}};
      r.batch_size = 100;
      r.seed = 4202;
      train_classifier(table8, full_corpus.train, r);
      double acc8 = accuracy(table8, full_corpus.test);
      bool in_time = tf.seconds() <= 1800.0;
      pass = pass && acc8 >= 0.98 && in_time;
      detail += "; full: table8 accuracy " + pct(acc8) + " in " + num(tf.seconds()) + "s";
    }
    report(2, pass, detail, t.seconds());
  }

  void criterion3_4() {
    Timer t;
    const Model& target = small_target();
    PlainDefended defended(target, "undefended");  // copy shares nothing mutable
    InProcessOracle oracle(defended, 4301);

    VerifySpec single;
    auto samples = select_samples(corpus_.test, oracle, single, false, false, 50, "first_correct");
    Dataset craft_set = gather(corpus_.test, samples);

    // substitutes distilled from the craft set replicated 420x:
    // noisy ladder for SST, amplitude-0 copies for the plain baseline,
    // both trained to convergence on the recorded logits
    auto build_sub = [&](bool noisy, uint64_t seed) {
      NoiseSchedule schedule = noisy ? cycling_schedule(7, 0.05f, 60, seed)
                                     : cycling_schedule(7, 0.0f, 60, seed);
      SstDataset data = build_sst_dataset(craft_set, schedule, oracle);
      Model sub = Model::build(make_preset("small_cnn"), seed + 1);
      TrainRecipe r;
      r.phases = {{6, 1e-3f}, {3, 1e-4f}};
      r.batch_size = 100;
      r.seed = seed + 2;
      r.holdout_fraction = 0.02f;
      train_substitute(sub, data, r);
      return sub;
    };
    Model sst_sub = build_sub(true, 4310);
    Model plain_sub = build_sub(false, 4320);

    AttackParams params;
    params.total_run = 3;
    params.total_iter = 300;
    params.lr = 1e-3f;

    CraftSummary sst = craft_over_samples(corpus_.test, samples, oracle, {&sst_sub}, params, 4331);
    CraftSummary plain =
        craft_over_samples(corpus_.test, samples, oracle, {&plain_sub}, params, 4332);

    // white-box floor on the same samples
    AttackParams wb = params;
    Rng wb_root = Rng(4333).stream("whitebox");
    std::vector<SampleRow> wb_rows;
    for (int idx : samples) {
      Rng rng = wb_root.stream(static_cast<uint64_t>(idx));
      AdvResult adv = cw_whitebox_attack(target, corpus_.test.image(idx),
                                         corpus_.test.labels[static_cast<size_t>(idx)], wb,
                                         /*targeted=*/true, rng);
      SampleRow row;
      row.sample_index = idx;
      row.success = adv.success();
      row.l2 = adv.l2;
      wb_rows.push_back(row);
    }

    auto l2_sst = sst.l2();
    auto l2_plain = plain.l2();
    auto l2_wb = mean_l2(wb_rows);
    bool c3 = sst.rate() >= 0.95 && l2_sst.has_value() && l2_plain.has_value() &&
              *l2_sst <= 0.8 * *l2_plain;
    report(3, c3,
           "SST vs plain substitute on " + std::to_string(samples.size()) + " samples: rate " +
               pct(sst.rate()) + ", mean L2 " + (l2_sst ? num(*l2_sst) : "n/a") + " vs plain " +
               (l2_plain ? num(*l2_plain) : "n/a") +
               (l2_sst && l2_plain ? " (ratio " + num(*l2_sst / *l2_plain) + ", need <= 0.8)" : ""),
           t.seconds());
    bool c4 = l2_wb.has_value() && l2_sst.has_value() && *l2_wb <= *l2_sst;
    report(4, c4,
           "white-box floor: mean L2 " + (l2_wb ? num(*l2_wb) : "n/a") + " <= SST " +
               (l2_sst ? num(*l2_sst) : "n/a") + " (rate " + pct(success_rate(wb_rows)) + ")",
           0.0);
  }

  void criterion5() {
    Timer t;
    // table5 target trained with fresh training-mode masks per batch
    std::string ckpt = work_ + "/accept-rfn-target.ckpt";
    Model target = [&] {
      if (fs::exists(ckpt)) return load_checkpoint(ckpt);
      Model m = Model::build(make_preset("table5"), 4501);
      TrainRecipe r;
      r.optimizer = "sgd";
      r.phases = {{10, 0.1f}};
      r.batch_size = 100;
      r.seed = 4502;
      RfnParams train_mask;
      train_mask.mu = 0.5f;
      train_mask.sigma = 0.05f;
      train_mask.mode = RfnParams::Mode::kTraining;
      train_classifier(m, corpus_.train.slice(0, 10000), r, [&](Tensor& batch, Rng& rng) {
        Tensor mask = sample_rfn_mask(batch.dim(0), batch.dim(1), train_mask, rng);
        for (int64_t i = 0; i < batch.size(); ++i) batch[i] *= mask[i];
      });
      save_checkpoint(m, ckpt);
      return m;
    }();
    RfnParams p;
    p.mu = 0.5f;
    p.sigma = 0.05f;
    RfnDefended defended(std::move(target), p, "rfn");
    InProcessOracle oracle(defended, 4503);

    // substitute from the noisy test prefix
    Dataset source = corpus_.test.slice(0, 1500);
    SstDataset data = build_sst_dataset(source, ladder_schedule(7, 0.05f, 4504), oracle);
    Model sub = Model::build(make_preset("small_cnn"), 4505);
    TrainRecipe r;
    r.phases = {{10, 1e-3f}, {5, 1e-4f}};
    r.batch_size = 100;
    r.seed = 4506;
    r.holdout_fraction = 0.02f;
    train_substitute(sub, data, r);

    VerifySpec vote50;
    vote50.vote_runs = 100;
    vote50.vote_threshold = 50;
    rfn_samples_ = select_samples(corpus_.test, oracle, vote50, false, true, 100, "first_correct");

    AttackParams params;
    params.total_run = 3;
    params.total_iter = 300;
    params.lr = 1e-3f;
    params.verify = vote50;
    CraftSummary at50 =
        craft_over_samples(corpus_.test, rfn_samples_, oracle, {&sub}, params, 4511);

    AttackParams params90 = params;
    params90.verify.vote_threshold = 90;
    CraftSummary at90 =
        craft_over_samples(corpus_.test, rfn_samples_, oracle, {&sub}, params90, 4511);

    AttackParams linf = params;
    linf.norm = NormMode::kLinf;
    linf.epsilon = 0.25f;
    rfn_linf_ = craft_over_samples(corpus_.test, rfn_samples_, oracle, {&sub}, linf, 4512);

    auto l2_50 = at50.l2();
    auto l2_90 = at90.l2();
    bool pass = at50.rate() >= 0.90 && l2_50.has_value() && l2_90.has_value() &&
                *l2_90 > *l2_50 && rfn_linf_->rate() >= 0.75;
    // keep the RFN artifacts alive for criterion 8
    rfn_defended_ = std::make_unique<RfnDefended>(defended);
    report(5, pass,
           "RFN: vote-50 rate " + pct(at50.rate()) + " (need >= 90%), mean L2 " +
               (l2_50 ? num(*l2_50) : "n/a") + " < vote-90 L2 " + (l2_90 ? num(*l2_90) : "n/a") +
               "; Linf=0.25 rate " + pct(rfn_linf_->rate()) + " (need >= 75%)",
           t.seconds());
  }

  void criterion6() {
    Timer t;
    std::string ckpt = work_ + "/accept-thermo-target.ckpt";
    Model target = [&] {
      if (fs::exists(ckpt)) return load_checkpoint(ckpt);
      Model m = Model::build(with_thermometer_input(make_preset("small_cnn"), 16), 4601);
      TrainRecipe r;
      r.phases = {{4, 1e-3f}};
      r.batch_size = 100;
      r.seed = 4602;
      train_classifier(m, corpus_.train.slice(0, 10000), r);
      save_checkpoint(m, ckpt);
      return m;
    }();
    PlainDefended defended(std::move(target), "thermometer");
    InProcessOracle oracle(defended, 4603);

    Dataset source = corpus_.test.slice(0, 800);
    auto make_sub = [&](float step, uint64_t seed) {
      SstDataset data = build_sst_dataset(source, ladder_schedule(8, step, seed), oracle);
      Model sub = Model::build(make_preset("small_cnn"), seed + 1);
      TrainRecipe r;
      r.phases = {{6, 1e-3f}, {3, 5e-4f}, {3, 1e-4f}};
      r.batch_size = 100;
      r.seed = seed + 2;
      r.holdout_fraction = 0.02f;
      train_substitute(sub, data, r);
      return sub;
    };
    Model sub_a = make_sub(2.0f / 255.0f, 4610);
    Model sub_b = make_sub(3.0f / 255.0f, 4620);

    VerifySpec single;
    auto samples = select_samples(corpus_.test, oracle, single, false, false, 50, "first_correct");

    AttackParams params;
    params.total_run = 3;
    params.total_iter = 300;
    params.lr = 1e-3f;
    params.restart_period = 100;

    CraftSummary both =
        craft_over_samples(corpus_.test, samples, oracle, {&sub_a, &sub_b}, params, 4631);
    CraftSummary only_a = craft_over_samples(corpus_.test, samples, oracle, {&sub_a}, params, 4632);
    CraftSummary only_b = craft_over_samples(corpus_.test, samples, oracle, {&sub_b}, params, 4633);

    auto l2_both = both.l2();
    auto l2_a = only_a.l2();
    auto l2_b = only_b.l2();
    double best_single = 1e9;
    if (l2_a) best_single = std::min(best_single, *l2_a);
    if (l2_b) best_single = std::min(best_single, *l2_b);
    bool pass = both.rate() >= 0.90 && l2_both.has_value() && *l2_both <= best_single;
    report(6, pass,
           "thermometer k=16: 2-substitute rate " + pct(both.rate()) + " (need >= 90%), mean L2 " +
               (l2_both ? num(*l2_both) : "n/a") + " vs singles " + (l2_a ? num(*l2_a) : "n/a") +
               "/" + (l2_b ? num(*l2_b) : "n/a"),
           t.seconds());
  }

  void criterion7() {
    Timer t;
    const Model& classifier = small_target();

    std::string cache = work_ + "/accept-safetynet-detector.ckpt";
    SafetyNetDetector det;
    if (fs::exists(cache)) {
      det = load_detector_sections(ckpt::read_file(cache));
    } else {
      DetectorConfig dc;
      dc.corpus = 5000;
      dc.tap = 0;
      dc.svm_c = 10.0f;
      dc.svm_tol = 1e-3f;
      dc.attack_iters = 40;
      dc.attack_lr = 1e-2f;
      det = fit_safetynet_detector(classifier, corpus_.train, dc, 4701);
      ckpt::Sections sections;
      save_detector_sections(det, sections);
      ckpt::write_file(cache, sections);
    }

    // held-out detector evaluation: clean test images vs their white-box
    // adversarials
    AttackParams wb;
    wb.total_run = 1;
    wb.total_iter = 40;
    wb.lr = 1e-2f;
    wb.kappa_schedule = {0.0f};
    wb.init_amplitude = 0.01f;
    Rng wb_root(4702);
    int legit_total = 0, legit_ok = 0, adv_total = 0, adv_ok = 0;
    Dataset heldout = corpus_.test.slice(0, 400);
    auto judged_clean = safetynet_judge(classifier, det, heldout.images);
    for (int i = 0; i < heldout.count(); ++i) {
      ++legit_total;
      if (!judged_clean[static_cast<size_t>(i)].adversarial) ++legit_ok;
      Rng rng = wb_root.stream(static_cast<uint64_t>(i));
      AdvResult adv = cw_whitebox_attack(classifier, heldout.image(i),
                                         heldout.labels[static_cast<size_t>(i)], wb,
                                         /*targeted=*/false, rng);
      if (adv.success()) {
        ++adv_total;
        auto judged = safetynet_judge(classifier, det, adv.image.reshaped({1, 784}));
        if (judged[0].adversarial) ++adv_ok;
      }
    }
    double tnr = static_cast<double>(legit_ok) / legit_total;
    double tpr = adv_total > 0 ? static_cast<double>(adv_ok) / adv_total : 0.0;
    double balanced = 0.5 * (tnr + tpr);

    // detector-in-loop SST attack
    SafetyNetDefended defended(classifier, det, "safetynet");
    InProcessOracle oracle(defended, 4703);
    Dataset source = corpus_.test.slice(0, 1000);
    auto make_sub = [&](const std::string& preset, uint64_t seed) {
      SstDataset data = build_sst_dataset(source, ladder_schedule(7, 0.05f, seed), oracle);
      Model sub = Model::build(make_preset(preset), seed + 1);
      TrainRecipe r;
      r.phases = {{10, 1e-3f}, {5, 1e-4f}};
      r.batch_size = 100;
      r.seed = seed + 2;
      r.holdout_fraction = 0.02f;
      train_substitute(sub, data, r);
      return sub;
    };
    Model sub1 = make_sub("small_mlp", 4710);
    Model sub2 = make_sub("small_cnn", 4720);

    VerifySpec verify;
    verify.detector_in_loop = true;
    verify.ratio_threshold = 0.25f;
    safetynet_samples_ =
        select_samples(corpus_.test, oracle, verify, true, false, 100, "first_correct");

    AttackParams params;
    params.total_run = 3;
    params.total_iter = 300;
    params.lr = 1e-3f;
    params.verify = verify;
    CraftSummary sst = craft_over_samples(corpus_.test, safetynet_samples_, oracle, {&sub1, &sub2},
                                          params, 4731);

    // every reported success must clear all three checks right now
    bool three_checks = true;
    for (const auto& row : sst.rows) {
      if (!row.success) continue;
      // re-derive the adversarial? rows don't carry images; recheck using the
      // judge on the fly is handled at craft verification time; here we
      // assert the craft marked detector evasion for each success
      three_checks = three_checks && row.detector_evaded;
    }

    safetynet_rate_ = sst.rate();
    safetynet_defended_ = std::make_unique<SafetyNetDefended>(defended);
    bool pass = balanced >= 0.85 && sst.rate() >= 0.70 && three_checks;
    report(7, pass,
           "detector balanced accuracy " + pct(balanced) + " (TNR " + pct(tnr) + ", TPR " +
               pct(tpr) + ", need >= 85%); detector-in-loop SST rate " + pct(sst.rate()) +
               " (need >= 70%)" + (three_checks ? "" : "; a success skipped a check"),
           t.seconds());
  }

  void criterion8() {
    Timer t;
    if (!rfn_defended_ || !rfn_linf_ || !safetynet_defended_) {
      report(8, false, "prerequisite criteria 5/7 artifacts missing", t.seconds());
      return;
    }
    // (a) Jacobian+FGSM vs SST on RFN-50 at eps=0.25, identical samples
    InProcessOracle rfn_oracle(*rfn_defended_, 4801);
    LabelOracle rfn_labels(rfn_oracle);
    JacobianAugmentConfig jc;
    jc.seed_count = 150;
    jc.rounds = 6;
    jc.lambda = 0.1f;
    jc.round_recipe.phases = {{10, 1e-3f}};
    jc.round_recipe.batch_size = 100;
    jc.round_recipe.holdout_fraction = 0.0f;
    jc.seed = 4802;
    Dataset seeds = corpus_.test.slice(0, 150);
    JacobianSubstitute js =
        train_jacobian_substitute(seeds, make_preset("small_mlp"), rfn_labels, jc);

    VerifySpec vote50;
    vote50.vote_runs = 100;
    vote50.vote_threshold = 50;
    int jac_success = 0;
    for (int idx : rfn_samples_) {
      Tensor adv = fgsm(js.model, corpus_.test.image(idx),
                        corpus_.test.labels[static_cast<size_t>(idx)], 0.25f);
      uint64_t q = 0;
      auto check = attackdetail::oracle_check(rfn_oracle, adv,
                                              corpus_.test.labels[static_cast<size_t>(idx)],
                                              vote50, &q);
      if (check.fooled) ++jac_success;
    }
    double jac_rate = static_cast<double>(jac_success) / rfn_samples_.size();
    double sst_rate_linf = rfn_linf_->rate();
    bool part_a = sst_rate_linf >= 1.5 * jac_rate;

    // (b) Jacobian+FGSM against SafetyNet stays <= 10% while SST >= 70%
    InProcessOracle sn_oracle(*safetynet_defended_, 4810);
    LabelOracle sn_labels(sn_oracle);
    JacobianSubstitute js_sn =
        train_jacobian_substitute(seeds, make_preset("small_mlp"), sn_labels, jc);
    int sn_success = 0;
    VerifySpec sn_verify;
    sn_verify.detector_in_loop = true;
    for (int idx : safetynet_samples_) {
      Tensor adv = fgsm(js_sn.model, corpus_.test.image(idx),
                        corpus_.test.labels[static_cast<size_t>(idx)], 0.3f);
      uint64_t q = 0;
      auto check = attackdetail::oracle_check(sn_oracle, adv,
                                              corpus_.test.labels[static_cast<size_t>(idx)],
                                              sn_verify, &q);
      if (check.fooled) ++sn_success;
    }
    double jac_sn_rate = static_cast<double>(sn_success) / safetynet_samples_.size();
    bool part_b = jac_sn_rate <= 0.10 && safetynet_rate_ >= 0.70;

    // (c) ensemble transfer sweep on RFN-50: success and distortion both grow
    // as lambda shrinks
    std::vector<Model> members;
    {
      const char* presets[4] = {"model3", "model4", "small_mlp", "small_cnn"};
      for (int i = 0; i < 4; ++i) {
        Model m = Model::build(make_preset(presets[i]), 4820 + static_cast<uint64_t>(i));
        TrainRecipe r;
        r.phases = {{10, 1e-3f}};
        r.batch_size = 100;
        r.seed = 4830 + static_cast<uint64_t>(i);
        train_classifier(m, corpus_.train.slice(0, 10000), r);
        members.push_back(std::move(m));
      }
    }
    std::vector<const Model*> mptr;
    for (auto& m : members) mptr.push_back(&m);
    std::vector<int> ens_samples(rfn_samples_.begin(),
                                 rfn_samples_.begin() + std::min<size_t>(50, rfn_samples_.size()));
    auto sweep = [&](float lambda) {
      EnsembleAttackConfig cfg;
      cfg.weights = {0.25f, 0.25f, 0.25f, 0.25f};
      cfg.lambda = lambda;
      cfg.iterations = 300;
      cfg.lr = 1e-3f;
      std::vector<SampleRow> rows;
      Rng root = Rng(4840).stream("ensemble");
      for (int idx : ens_samples) {
        Tensor x = corpus_.test.image(idx);
        int y = corpus_.test.labels[static_cast<size_t>(idx)];
        OracleResponse clean = rfn_oracle.query(x.reshaped({1, 784}), Phase::kCrafting);
        int target = select_target(clean.logits.reshaped({10}), TargetPolicy::kSecond);
        Rng rng = root.stream(static_cast<uint64_t>(idx));
        AdvResult adv =
            ensemble_transfer_attack(mptr, cfg, x, y, target, rfn_oracle, vote50, rng);
        SampleRow row;
        row.sample_index = idx;
        row.success = adv.success();
        row.l2 = adv.l2;
        rows.push_back(row);
      }
      return rows;
    };
    auto rows_01 = sweep(0.1f);
    auto rows_001 = sweep(0.01f);
    auto rows_0001 = sweep(0.001f);
    double r01 = success_rate(rows_01), r001 = success_rate(rows_001),
           r0001 = success_rate(rows_0001);
    auto l01 = mean_l2(rows_01), l001 = mean_l2(rows_001), l0001 = mean_l2(rows_0001);
    bool mono_rate = r0001 >= r001 && r001 >= r01;
    bool mono_l2 = true;
    if (l01 && l001) mono_l2 = mono_l2 && *l001 >= *l01;
    if (l001 && l0001) mono_l2 = mono_l2 && *l0001 >= *l001;
    bool part_c = mono_rate && mono_l2;

    report(8, part_a && part_b && part_c,
           "baseline gap: RFN-50 eps=0.25 SST " + pct(sst_rate_linf) + " vs jacobian " +
               pct(jac_rate) + " (need >= 1.5x); SafetyNet jacobian " + pct(jac_sn_rate) +
               " (need <= 10%) vs SST " + pct(safetynet_rate_) + "; ensemble sweep rates " +
               pct(r01) + "/" + pct(r001) + "/" + pct(r0001) + " L2 " +
               (l01 ? num(*l01) : "n/a") + "/" + (l001 ? num(*l001) : "n/a") + "/" +
               (l0001 ? num(*l0001) : "n/a"),
           t.seconds());
  }

  void criterion9() {
    Timer t;
    const Model& m = small_target();
    PlainDefended defended(m, "plain");
    OracleServer server(defended, 4901);
    server.serve("127.0.0.1:0");
    std::string addr = "127.0.0.1:" + std::to_string(server.port());

    // 1000 random images, wire vs in-process
    Rng rng(4902);
    Tensor batch({1000, 784});
    for (int64_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
    InProcessOracle local(defended, 4903);
    RemoteOracle remote(addr);
    Tensor wire_logits = remote.query(batch, Phase::kOther).logits;
    Tensor local_logits = local.query(batch, Phase::kOther).logits;
    double max_diff = 0.0;
    for (int64_t i = 0; i < wire_logits.size(); ++i)
      max_diff = std::max(max_diff,
                          std::fabs(static_cast<double>(wire_logits[i]) - local_logits[i]));

    // exact accounting under 8 concurrent clients
    constexpr int kClients = 8, kRequests = 4, kBatch = 25;
    Dataset probe = corpus_.test.slice(0, kBatch);
    std::vector<std::thread> threads;
    for (int c = 0; c < kClients; ++c)
      threads.emplace_back([&] {
        RemoteOracle client(addr);
        for (int q = 0; q < kRequests; ++q) client.query(probe.images, Phase::kCrafting);
      });
    for (auto& th : threads) th.join();
    QueryLogSnapshot s = server.log();
    uint64_t expect_images = 1000 + kClients * kRequests * kBatch;
    uint64_t expect_requests = 1 + kClients * kRequests;
    bool accounting = s.images == expect_images && s.requests == expect_requests;
    server.stop();
    report(9, max_diff <= 1e-5 && accounting,
           "wire vs in-process max |diff| " + num(max_diff) + " over 1000 images; accounting " +
               std::to_string(s.images) + "/" + std::to_string(expect_images) + " images exact",
           t.seconds());
  }

  void criterion10() {
    Timer t;
    ExperimentConfig cfg = load_config("configs/smoke.json");
    std::string work = work_ + "/smoke";
    fs::create_directories(work);
    ExperimentReport a = run_experiment(cfg, work);
    ExperimentReport b = run_experiment(cfg, work);
    bool identical = a.rows_csv() == b.rows_csv();
    report(10, identical,
           std::string("golden smoke config rerun rows ") +
               (identical ? "byte-identical" : "DIFFER"),
           t.seconds());
  }

  void criterion11() {
    Timer t;
    bool ok = true;
    std::string detail;

    // thermometer tau(0.33, k=10) = 1110000000
    ThermometerParams tp;
    tp.k = 10;
    Tensor code = thermometer_encode(Tensor({1, 1}, {0.33f}), tp);
    const char* want = "1110000000";
    for (int j = 0; j < 10; ++j)
      if (code[j] != (want[j] == '1' ? 1.0f : 0.0f)) ok = false;
    if (!ok) detail += "thermometer bits wrong; ";

    // test-mode RFN zero count = round(m * mu) exactly
    {
      RfnParams p;
      p.mu = 0.5f;
      p.sigma = 0.05f;
      p.mode = RfnParams::Mode::kTest;
      Rng rng(1);
      Tensor mask = sample_rfn_mask(10, 784, p, rng);
      for (int r = 0; r < 10; ++r) {
        int zeros = 0;
        for (int i = 0; i < 784; ++i)
          if (mask[r * 784 + i] == 0.0f) ++zeros;
        if (zeros != 392) ok = false;
      }
      RfnParams p3;
      p3.mu = 0.3f;
      p3.sigma = 0.0f;
      p3.mode = RfnParams::Mode::kTest;
      Tensor m7 = sample_rfn_mask(1, 7, p3, rng);
      int zeros = 0;
      for (int i = 0; i < 7; ++i)
        if (m7[i] == 0.0f) ++zeros;
      if (zeros != 2) ok = false;  // round(2.1)
    }

    // quantize idempotence
    {
      QuantizationThresholds qt;
      qt.q1 = 0.4f;
      qt.median = 1.0f;
      qt.q3 = 2.5f;
      qt.max_act = 7.0f;
      Rng rng(2);
      for (int i = 0; i < 2000; ++i) {
        float v = rng.uniform(0.0f, 8.0f);
        float q = quantize_value(v, qt);
        if (quantize_value(q, qt) != q) ok = false;
      }
    }

    // cw_f truth table
    if (cw_f(Tensor({2}, {5.0f, 1.0f}), 0, 0.0f) != 0.0f) ok = false;
    if (cw_f(Tensor({2}, {1.0f, 5.0f}), 0, 0.0f) != 4.0f) ok = false;
    if (cw_f(Tensor({2}, {3.0f, 2.0f}), 0, 2.0f) != -1.0f) ok = false;

    report(11, ok, "unit-exact checks (thermometer bits, RFN mask count, quantize, cw_f)",
           t.seconds());
  }

  Corpus corpus_;

 private:
  bool full_;
  std::string work_;
  std::vector<Outcome> outcomes_;
  std::optional<Model> small_target_;
  std::unique_ptr<RfnDefended> rfn_defended_;
  std::unique_ptr<SafetyNetDefended> safetynet_defended_;
  std::vector<int> rfn_samples_;
  std::vector<int> safetynet_samples_;
  std::optional<CraftSummary> rfn_linf_;
  double safetynet_rate_ = 0.0;
};

}  // namespace

int main(int argc, char** argv) {
  bool full = false;
  int only = -1;
  std::string work = "accept-work";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--full") == 0) full = true;
    else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) work = argv[++i];
  }

  Acceptance acc(full, work);
  Timer total;
  auto want = [&](int id) {
    if (only < 0) return true;
    if (only == id) return true;
    // criterion 8 consumes artifacts from 5 and 7
    if (only == 8 && (id == 5 || id == 7 || id == 2)) return true;
    if ((only == 3 || only == 4 || only == 7 || only == 9) && id == 2) return true;
    return false;
  };

  try {
    if (want(1)) acc.criterion1();
    if (want(2)) acc.criterion2();
    if (want(3) || want(4)) acc.criterion3_4();
    if (want(5)) acc.criterion5();
    if (want(6)) acc.criterion6();
    if (want(7)) acc.criterion7();
    if (want(8)) acc.criterion8();
    if (want(9)) acc.criterion9();
    if (want(10)) acc.criterion10();
    if (want(11)) acc.criterion11();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }

  std::printf("total: %.1fs, %s\n", total.seconds(), acc.all_passed() ? "ALL PASS" : "FAILURES");
  return acc.all_passed() ? 0 : 1;
}
