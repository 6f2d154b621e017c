// sstbench command line: dataset generation, target training, defenses,
// oracle serving, substitute distillation, attacks and reports.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>

#include "sstbench/attack/baselines.hpp"
#include "sstbench/bench/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sstbench;

namespace {

Corpus load_data(const std::string& dir, int train_count, int test_count) {
  DataConfig cfg;
  cfg.dir = dir;
  cfg.train_count = train_count;
  cfg.test_count = test_count;
  return load_corpus(cfg);
}

TrainRecipe parse_phases(const std::string& spec, const std::string& optimizer, int batch) {
  // e.g. "3@0.001,3@0.0001"
  TrainRecipe r;
  r.optimizer = optimizer;
  r.batch_size = batch;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto at = tok.find('@');
    if (at == std::string::npos) throw ValidationError("bad phase spec '" + tok + "', want E@LR");
    r.phases.push_back({std::stoi(tok.substr(0, at)), std::stof(tok.substr(at + 1))});
  }
  if (r.phases.empty()) throw ValidationError("empty training schedule");
  return r;
}

std::unique_ptr<Oracle> open_oracle(const std::string& spec, uint64_t seed,
                                    std::unique_ptr<DefendedModel>& keep_alive) {
  // "host:port" connects over the wire; anything else is a checkpoint path
  if (spec.find(':') != std::string::npos && !fs::exists(spec))
    return std::make_unique<RemoteOracle>(spec);
  keep_alive = load_defended_checkpoint(spec);
  return std::make_unique<InProcessOracle>(*keep_alive, seed);
}

void export_adv_grid(const std::vector<AdvResult>& results, const std::string& path) {
  std::vector<Tensor> images;
  for (const auto& r : results)
    if (r.success()) images.push_back(r.image);
  if (images.empty()) return;
  int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(images.size()))));
  int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  export_image_grid(images, rows, cols, 28, 28, 1, path);
}

int run(int argc, char** argv) {
  CLI::App app{"gray-box adversarial robustness workbench"};
  app.require_subcommand(1);

  std::string data_dir;
  app.add_option("--data", data_dir, "IDX dataset directory (default $SSTBENCH_DATA_DIR)");

  // ---- make-data ----
  auto* make_data = app.add_subcommand("make-data", "write the built-in digit corpus as IDX files");
  std::string md_out = "data";
  int md_train = 12000, md_test = 2000;
  uint64_t md_seed_train = kCorpusTrainSeed, md_seed_test = kCorpusTestSeed;
  make_data->add_option("--out", md_out, "output directory")->required();
  make_data->add_option("--train", md_train, "training image count");
  make_data->add_option("--test", md_test, "test image count");
  make_data->add_option("--train-seed", md_seed_train, "train corpus seed");
  make_data->add_option("--test-seed", md_seed_test, "test corpus seed");

  // ---- train-target ----
  auto* train_target = app.add_subcommand("train-target", "train a classifier preset");
  std::string tt_preset = "small_cnn", tt_out, tt_phases = "5@0.001", tt_optimizer = "adam";
  int tt_batch = 100, tt_train_count = 12000, tt_test_count = 2000, tt_thermo = 0;
  uint64_t tt_seed = 1;
  train_target->add_option("--preset", tt_preset,
                           "model preset (table5..table9, model1..model4, small_cnn, small_mlp)");
  train_target->add_option("--out", tt_out, "checkpoint path")->required();
  train_target->add_option("--schedule", tt_phases, "training phases E@LR[,E@LR...]");
  train_target->add_option("--optimizer", tt_optimizer, "adam | sgd");
  train_target->add_option("--batch", tt_batch, "minibatch size");
  train_target->add_option("--train-count", tt_train_count, "training subset size");
  train_target->add_option("--test-count", tt_test_count, "test subset size");
  train_target->add_option("--thermometer-k", tt_thermo, "train on a k-level thermometer input");
  train_target->add_option("--seed", tt_seed, "init/training seed");

  // ---- apply-defense ----
  auto* apply_defense = app.add_subcommand("apply-defense", "wrap a checkpoint in a defense");
  std::string ad_in, ad_out, ad_kind = "rfn";
  float ad_mu = 0.5f, ad_sigma = 0.05f;
  apply_defense->add_option("--checkpoint", ad_in, "input model checkpoint")->required();
  apply_defense->add_option("--out", ad_out, "defended checkpoint path")->required();
  apply_defense->add_option("--defense", ad_kind,
                            "rfn | none (thermometer is a train-target flag; safetynet comes "
                            "from fit-detector)");
  apply_defense->add_option("--mu", ad_mu, "RFN mean nullification rate");
  apply_defense->add_option("--sigma", ad_sigma, "RFN rate standard deviation");

  // ---- fit-detector ----
  auto* fit_det = app.add_subcommand("fit-detector", "fit the activation-SVM detector");
  std::string fd_in, fd_out;
  int fd_corpus = 1000, fd_tap = 0, fd_iters = 40, fd_train_count = 12000;
  float fd_c = 10.0f, fd_gamma = 0.0f, fd_tol = 1e-3f, fd_ratio = 0.25f, fd_lr = 1e-2f;
  uint64_t fd_seed = 1;
  fit_det->add_option("--checkpoint", fd_in, "classifier checkpoint")->required();
  fit_det->add_option("--out", fd_out, "defended checkpoint path")->required();
  fit_det->add_option("--corpus", fd_corpus, "first M training images for the corpus");
  fit_det->add_option("--tap", fd_tap, "dense+relu tap index");
  fit_det->add_option("--svm-c", fd_c, "SVM box constraint");
  fit_det->add_option("--svm-gamma", fd_gamma, "RBF gamma (0 = 1/d)");
  fit_det->add_option("--svm-tol", fd_tol, "SMO KKT tolerance");
  fit_det->add_option("--ratio-threshold", fd_ratio, "confidence-ratio rejection threshold");
  fit_det->add_option("--attack-iters", fd_iters, "white-box attack budget per image");
  fit_det->add_option("--attack-lr", fd_lr, "white-box attack learning rate");
  fit_det->add_option("--train-count", fd_train_count, "training subset size");
  fit_det->add_option("--seed", fd_seed, "attack seed");

  // ---- serve-oracle ----
  auto* serve = app.add_subcommand("serve-oracle", "serve a defended checkpoint over TCP");
  std::string so_ckpt, so_bind = "127.0.0.1:7788";
  uint64_t so_seed = 1;
  serve->add_option("--checkpoint", so_ckpt, "defended checkpoint")->required();
  serve->add_option("--bind", so_bind, "bind address host:port");
  serve->add_option("--seed", so_seed, "server randomness seed");

  // ---- build-substitute ----
  auto* build_sub = app.add_subcommand("build-substitute",
                                       "distill a substitute from oracle logits");
  std::string bs_oracle, bs_out, bs_preset = "small_cnn", bs_phases = "10@0.001,5@0.0001";
  int bs_source = 2000, bs_replicas = 7, bs_batch = 100, bs_test_count = 2000;
  float bs_step = 0.05f;
  uint64_t bs_seed = 1;
  build_sub->add_option("--oracle", bs_oracle, "defended checkpoint path or host:port")->required();
  build_sub->add_option("--out", bs_out, "substitute checkpoint path")->required();
  build_sub->add_option("--preset", bs_preset, "substitute architecture preset");
  build_sub->add_option("--source-count", bs_source, "test-set prefix size");
  build_sub->add_option("--replicas", bs_replicas, "noise replica count");
  build_sub->add_option("--noise-step", bs_step, "amplitude step (replica i gets step*i)");
  build_sub->add_option("--schedule", bs_phases, "training phases E@LR[,E@LR...]");
  build_sub->add_option("--batch", bs_batch, "minibatch size");
  build_sub->add_option("--test-count", bs_test_count, "test subset size");
  build_sub->add_option("--seed", bs_seed, "seed");

  // ---- attack ----
  auto* attack = app.add_subcommand("attack", "craft adversarial examples via substitutes");
  std::string at_oracle, at_subs, at_out = "report.csv", at_grid, at_params, at_norm = "l2";
  int at_samples = 100, at_runs = 3, at_iters = 300, at_vote_runs = 1, at_vote_threshold = 0;
  int at_test_count = 2000;
  float at_lr = 1e-3f, at_eps = 0.25f;
  bool at_detector = false;
  uint64_t at_seed = 1;
  attack->add_option("--oracle", at_oracle, "defended checkpoint path or host:port")->required();
  attack->add_option("--substitutes", at_subs, "comma-separated substitute checkpoints")
      ->required();
  attack->add_option("--samples", at_samples, "first-correct sample count");
  attack->add_option("--params", at_params, "attack params JSON file (overrides flags)");
  attack->add_option("--total-run", at_runs, "outer runs");
  attack->add_option("--total-iter", at_iters, "inner iterations");
  attack->add_option("--lr", at_lr, "crafting learning rate");
  attack->add_option("--norm", at_norm, "l2 | linf");
  attack->add_option("--epsilon", at_eps, "L-inf bound");
  attack->add_option("--vote-runs", at_vote_runs, "verification vote passes (stochastic targets)");
  attack->add_option("--vote-threshold", at_vote_threshold, "vote threshold");
  attack->add_flag("--detector-in-loop", at_detector, "require detector evasion in the loop");
  attack->add_option("--out", at_out, "report CSV path");
  attack->add_option("--grid", at_grid, "export successful adversarials as a PGM grid");
  attack->add_option("--test-count", at_test_count, "test subset size");
  attack->add_option("--seed", at_seed, "seed");

  // ---- baseline-attack ----
  auto* baseline = app.add_subcommand("baseline-attack", "run a comparison attack");
  std::string bl_kind = "jacobian", bl_oracle, bl_out = "baseline.csv", bl_members;
  std::string bl_preset = "small_mlp";
  int bl_samples = 100, bl_seeds = 150, bl_rounds = 6, bl_iters = 300;
  int bl_vote_runs = 1, bl_vote_threshold = 0, bl_test_count = 2000;
  float bl_lambda = 0.1f, bl_eps = 0.25f, bl_ens_lambda = 0.01f, bl_lr = 1e-3f;
  uint64_t bl_seed = 1;
  baseline->add_option("--kind", bl_kind, "jacobian | ensemble")->required();
  baseline->add_option("--oracle", bl_oracle, "defended checkpoint path or host:port")->required();
  baseline->add_option("--samples", bl_samples, "first-correct sample count");
  baseline->add_option("--out", bl_out, "report CSV path");
  baseline->add_option("--seeds", bl_seeds, "jacobian: initial seed-set size");
  baseline->add_option("--rounds", bl_rounds, "jacobian: augmentation rounds");
  baseline->add_option("--lambda", bl_lambda, "jacobian: augmentation step");
  baseline->add_option("--epsilon", bl_eps, "jacobian: FGSM epsilon");
  baseline->add_option("--substitute-preset", bl_preset, "jacobian: substitute preset");
  baseline->add_option("--members", bl_members, "ensemble: comma-separated member checkpoints");
  baseline->add_option("--ens-lambda", bl_ens_lambda, "ensemble: distortion trade-off");
  baseline->add_option("--iters", bl_iters, "ensemble: iterations");
  baseline->add_option("--lr", bl_lr, "ensemble: learning rate");
  baseline->add_option("--vote-runs", bl_vote_runs, "verification vote passes");
  baseline->add_option("--vote-threshold", bl_vote_threshold, "vote threshold");
  baseline->add_option("--test-count", bl_test_count, "test subset size");
  baseline->add_option("--seed", bl_seed, "seed");

  // ---- report / compare ----
  auto* report_cmd = app.add_subcommand("report", "print the summary of a report CSV");
  std::string rp_csv;
  report_cmd->add_option("--csv", rp_csv, "report CSV")->required();

  auto* compare_cmd = app.add_subcommand("compare", "compare two reports over the same samples");
  std::string cp_a, cp_b;
  compare_cmd->add_option("--a", cp_a, "first report CSV")->required();
  compare_cmd->add_option("--b", cp_b, "second report CSV")->required();

  // ---- run-experiment ----
  auto* run_exp = app.add_subcommand("run-experiment", "run a full pipeline from a config JSON");
  std::string re_config, re_work = "work", re_out;
  run_exp->add_option("--config", re_config, "experiment config JSON")->required();
  run_exp->add_option("--work", re_work, "work directory for cached artifacts");
  run_exp->add_option("--out", re_out, "report CSV path (default <work>/<name>.csv)");

  CLI11_PARSE(app, argc, argv);

  if (make_data->parsed()) {
    fs::create_directories(md_out);
    Dataset train = make_digits(md_train, md_seed_train, "train");
    Dataset test = make_digits(md_test, md_seed_test, "test");
    save_idx(train, (fs::path(md_out) / "train-images-idx3-ubyte").string(),
             (fs::path(md_out) / "train-labels-idx1-ubyte").string());
    save_idx(test, (fs::path(md_out) / "t10k-images-idx3-ubyte").string(),
             (fs::path(md_out) / "t10k-labels-idx1-ubyte").string());
    std::cout << "wrote " << md_train << " train + " << md_test << " test images to " << md_out
              << "\n";
    return 0;
  }

  if (train_target->parsed()) {
    Corpus corpus = load_data(data_dir, tt_train_count, tt_test_count);
    ModelSpec spec = make_preset(tt_preset);
    if (tt_thermo > 0) spec = with_thermometer_input(spec, tt_thermo);
    Model model = Model::build(spec, tt_seed);
    TrainRecipe recipe = parse_phases(tt_phases, tt_optimizer, tt_batch);
    recipe.seed = tt_seed;
    auto metrics = train_classifier(model, corpus.train, recipe);
    double acc = accuracy(model, corpus.test);
    save_checkpoint(model, tt_out);
    std::cout << "trained " << spec.name << ": holdout loss " << metrics.back().holdout_loss
              << ", test accuracy " << 100.0 * acc << "%\n"
              << "checkpoint: " << tt_out << "\n";
    return 0;
  }

  if (apply_defense->parsed()) {
    Model model = load_checkpoint(ad_in);
    std::unique_ptr<DefendedModel> dm;
    if (ad_kind == "rfn") {
      RfnParams p;
      p.mu = ad_mu;
      p.sigma = ad_sigma;
      dm = std::make_unique<RfnDefended>(std::move(model), p, "rfn");
    } else if (ad_kind == "none") {
      dm = std::make_unique<PlainDefended>(std::move(model), "plain");
    } else {
      throw ValidationError("apply-defense handles rfn|none; thermometer is applied at training "
                            "time, safetynet via fit-detector");
    }
    save_defended_checkpoint(*dm, ad_out);
    std::cout << "defended checkpoint: " << ad_out << "\n";
    return 0;
  }

  if (fit_det->parsed()) {
    Corpus corpus = load_data(data_dir, fd_train_count, 100);
    Model model = load_checkpoint(fd_in);
    DetectorConfig dc;
    dc.corpus = fd_corpus;
    dc.tap = fd_tap;
    dc.svm_c = fd_c;
    dc.svm_gamma = fd_gamma;
    dc.svm_tol = fd_tol;
    dc.ratio_threshold = fd_ratio;
    dc.attack_iters = fd_iters;
    dc.attack_lr = fd_lr;
    SvmFitReport svm_rep;
    int skipped = 0;
    SafetyNetDetector det =
        fit_safetynet_detector(model, corpus.train, dc, fd_seed, &svm_rep, &skipped);
    SafetyNetDefended dm(std::move(model), std::move(det), "safetynet");
    save_defended_checkpoint(dm, fd_out);
    std::cout << "detector fitted on " << fd_corpus << " images (" << skipped
              << " attacks failed), SVM train accuracy " << 100.0 * svm_rep.train_accuracy
              << "%, " << svm_rep.support_count << " support vectors\n"
              << "defended checkpoint: " << fd_out << "\n";
    return 0;
  }

  if (serve->parsed()) {
    auto dm = load_defended_checkpoint(so_ckpt);
    OracleServer server(*dm, so_seed);
    server.serve(so_bind);
    std::cout << "serving " << dm->id() << " on port " << server.port() << " (ctrl-c to stop)\n"
              << std::flush;
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    return 0;
  }

  if (build_sub->parsed()) {
    Corpus corpus = load_data(data_dir, 100, bs_test_count);
    std::unique_ptr<DefendedModel> keep;
    auto oracle = open_oracle(bs_oracle, bs_seed, keep);
    Dataset source = corpus.test.slice(0, std::min<int64_t>(bs_source, corpus.test.count()));
    NoiseSchedule schedule = ladder_schedule(bs_replicas, bs_step, bs_seed);
    SstDataset data = build_sst_dataset(source, schedule, *oracle);
    Model sub = Model::build(make_preset(bs_preset), bs_seed);
    TrainRecipe recipe = parse_phases(bs_phases, "adam", bs_batch);
    recipe.seed = bs_seed;
    auto metrics = train_substitute(sub, data, recipe);
    save_checkpoint(sub, bs_out);
    double acc = accuracy(sub, corpus.test);
    std::cout << "substitute distilled from " << data.count() << " replicas; final holdout "
              << "sst-loss " << metrics.back().holdout_loss << ", clean test accuracy "
              << 100.0 * acc << "%\n"
              << "checkpoint: " << bs_out << "\n";
    return 0;
  }

  if (attack->parsed()) {
    Corpus corpus = load_data(data_dir, 100, at_test_count);
    std::unique_ptr<DefendedModel> keep;
    auto oracle = open_oracle(at_oracle, at_seed, keep);
    std::vector<Model> subs;
    std::stringstream ss(at_subs);
    std::string tok;
    while (std::getline(ss, tok, ',')) subs.push_back(load_checkpoint(tok));
    std::vector<const Model*> sub_ptrs;
    for (auto& s : subs) sub_ptrs.push_back(&s);

    AttackParams params;
    if (!at_params.empty()) {
      std::ifstream in(at_params);
      if (!in) throw IoError("cannot open params " + at_params);
      nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw FormatError("params file is not valid JSON");
      ExperimentConfig scratch;
      SubstituteConfig sc;
      sc.train.phases = {{1, 1e-3f}};
      scratch.sst.substitutes = {sc};
      scratch.target.train.phases = {{1, 1e-3f}};
      nlohmann::json base = config_to_json(scratch);
      base["attack"].update(j);
      params = config_from_json(base).attack;
    } else {
      params.total_run = at_runs;
      params.total_iter = at_iters;
      params.lr = at_lr;
      params.norm = at_norm == "linf" ? NormMode::kLinf : NormMode::kL2;
      params.epsilon = at_eps;
      params.verify.vote_runs = at_vote_runs;
      params.verify.vote_threshold = at_vote_threshold;
      params.verify.detector_in_loop = at_detector;
    }
    params.validate();

    bool stochastic = keep ? keep->stochastic() : at_vote_runs > 1;
    bool has_detector = keep ? keep->has_detector() : at_detector;
    auto picked = select_samples(corpus.test, *oracle, params.verify, has_detector, stochastic,
                                 at_samples, "first_correct");
    ExperimentReport report;
    report.name = "attack";
    report.seed = at_seed;
    std::vector<AdvResult> advs;
    Rng root = Rng(at_seed).stream("craft");
    auto t0 = std::chrono::steady_clock::now();
    for (int idx : picked) {
      Rng rng = root.stream(static_cast<uint64_t>(idx));
      AdvResult adv =
          craft_adv_example(corpus.test.image(idx), corpus.test.labels[static_cast<size_t>(idx)],
                            *oracle, sub_ptrs, params, rng);
      SampleRow row;
      row.sample_index = idx;
      row.true_label = corpus.test.labels[static_cast<size_t>(idx)];
      row.target_label = adv.target_label;
      row.success = adv.success();
      row.l2 = adv.l2;
      row.linf = adv.linf;
      row.iterations = adv.iterations;
      row.queries = adv.queries;
      row.detector_evaded = adv.detector_evaded;
      report.rows.push_back(row);
      advs.push_back(std::move(adv));
    }
    report.queries = oracle->log();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.save_csv(at_out);
    if (!at_grid.empty()) export_adv_grid(advs, at_grid);
    std::cout << report.summary() << "report: " << at_out << "\n";
    return 0;
  }

  if (baseline->parsed()) {
    Corpus corpus = load_data(data_dir, 2000, bl_test_count);
    std::unique_ptr<DefendedModel> keep;
    auto oracle = open_oracle(bl_oracle, bl_seed, keep);
    VerifySpec verify;
    verify.vote_runs = bl_vote_runs;
    verify.vote_threshold = bl_vote_threshold;
    auto picked = select_samples(corpus.test, *oracle, verify, keep && keep->has_detector(),
                                 keep && keep->stochastic(), bl_samples, "first_correct");

    ExperimentReport report;
    report.name = "baseline-" + bl_kind;
    report.seed = bl_seed;
    auto t0 = std::chrono::steady_clock::now();

    if (bl_kind == "jacobian") {
      LabelOracle labels(*oracle);
      JacobianAugmentConfig cfg;
      cfg.seed_count = bl_seeds;
      cfg.rounds = bl_rounds;
      cfg.lambda = bl_lambda;
      cfg.round_recipe = parse_phases("10@0.001", "adam", 100);
      cfg.round_recipe.holdout_fraction = 0.0f;
      cfg.seed = bl_seed;
      Dataset seeds = corpus.test.slice(0, std::min<int64_t>(bl_seeds, corpus.test.count()));
      JacobianSubstitute js = train_jacobian_substitute(seeds, make_preset(bl_preset), labels, cfg);
      for (int idx : picked) {
        Tensor x = corpus.test.image(idx);
        int y = corpus.test.labels[static_cast<size_t>(idx)];
        Tensor adv = fgsm(js.model, x, y, bl_eps);
        uint64_t queries = 0;
        auto check = attackdetail::oracle_check(*oracle, adv, y, verify, &queries);
        SampleRow row;
        row.sample_index = idx;
        row.true_label = y;
        row.success = check.fooled;
        double l2 = 0.0, linf = 0.0;
        for (int64_t i = 0; i < adv.size(); ++i) {
          double d = static_cast<double>(adv[i]) - x[i];
          l2 += d * d;
          linf = std::max(linf, std::fabs(d));
        }
        row.l2 = std::sqrt(l2);
        row.linf = linf;
        row.queries = queries;
        report.rows.push_back(row);
      }
    } else if (bl_kind == "ensemble") {
      if (bl_members.empty()) throw ValidationError("ensemble baseline needs --members");
      std::vector<Model> members;
      std::stringstream ss(bl_members);
      std::string tok;
      while (std::getline(ss, tok, ',')) members.push_back(load_checkpoint(tok));
      std::vector<const Model*> mptr;
      for (auto& mm : members) mptr.push_back(&mm);
      EnsembleAttackConfig cfg;
      cfg.weights.assign(members.size(), 1.0f / static_cast<float>(members.size()));
      cfg.lambda = bl_ens_lambda;
      cfg.iterations = bl_iters;
      cfg.lr = bl_lr;
      Rng root = Rng(bl_seed).stream("ensemble");
      for (int idx : picked) {
        Tensor x = corpus.test.image(idx);
        int y = corpus.test.labels[static_cast<size_t>(idx)];
        OracleResponse clean =
            oracle->query(x.reshaped({1, corpus.test.pixel_count()}), Phase::kCrafting);
        int target =
            select_target(clean.logits.reshaped({clean.logits.dim(1)}), TargetPolicy::kSecond);
        Rng rng = root.stream(static_cast<uint64_t>(idx));
        AdvResult adv = ensemble_transfer_attack(mptr, cfg, x, y, target, *oracle, verify, rng);
        SampleRow row;
        row.sample_index = idx;
        row.true_label = y;
        row.target_label = target;
        row.success = adv.success();
        row.l2 = adv.l2;
        row.linf = adv.linf;
        row.iterations = adv.iterations;
        row.queries = adv.queries;
        report.rows.push_back(row);
      }
    } else {
      throw ValidationError("unknown baseline kind '" + bl_kind + "'");
    }
    report.queries = oracle->log();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.save_csv(bl_out);
    std::cout << report.summary() << "report: " << bl_out << "\n";
    return 0;
  }

  if (report_cmd->parsed()) {
    ExperimentReport rep = ExperimentReport::load_csv(rp_csv);
    std::cout << rep.summary();
    return 0;
  }

  if (compare_cmd->parsed()) {
    ExperimentReport a = ExperimentReport::load_csv(cp_a);
    ExperimentReport b = ExperimentReport::load_csv(cp_b);
    Comparison c = compare_report(a, b);
    std::cout << c.table(a.name.empty() ? "A" : a.name, b.name.empty() ? "B" : b.name);
    return 0;
  }

  if (run_exp->parsed()) {
    ExperimentConfig cfg = load_config(re_config);
    if (!data_dir.empty()) cfg.data.dir = data_dir;
    fs::create_directories(re_work);
    ExperimentReport report = run_experiment(cfg, re_work);
    std::string out = re_out.empty() ? (fs::path(re_work) / (cfg.name + ".csv")).string() : re_out;
    report.save_csv(out);
    std::ofstream summary(out + ".summary.txt");
    summary << report.summary();
    std::cout << report.summary() << "report: " << out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
