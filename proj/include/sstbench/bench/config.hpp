#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sstbench/attack/cw.hpp"
#include "sstbench/train.hpp"

namespace sstbench {

constexpr int kConfigSchemaVersion = 1;

struct DataConfig {
  std::string dir;  // empty: $SSTBENCH_DATA_DIR, else the built-in corpus
  int train_count = 12000;
  int test_count = 2000;
};

struct TargetConfig {
  std::string preset = "small_cnn";
  int thermometer_k = 0;  // > 0 trains on a k-level thermometer input layer
  TrainRecipe train;
  std::string checkpoint;  // workdir-relative cache; reused when present
};

struct DetectorConfig {
  int corpus = 1000;  // first M training images
  int tap = 0;
  float svm_c = 10.0f;
  float svm_gamma = 0.0f;  // 0 selects 1/d
  float svm_tol = 1e-3f;
  float ratio_threshold = 0.25f;
  int attack_iters = 40;
  float attack_lr = 1e-2f;
};

struct DefenseConfig {
  std::string kind = "none";  // none | rfn | thermometer | safetynet
  float mu = 0.5f;
  float sigma = 0.05f;
  DetectorConfig detector;
};

struct OracleConfig {
  std::string transport = "inprocess";  // inprocess | wire
  std::string address;                  // host:port for wire
};

struct SubstituteConfig {
  std::string preset = "small_cnn";
  int schedule_count = 7;
  float schedule_step = 0.05f;
  TrainRecipe train;
};

struct SstConfig {
  int source_count = 2000;  // test-set prefix fed through the noise schedule
  std::vector<SubstituteConfig> substitutes;
};

struct SamplesConfig {
  int count = 100;
  std::string selection = "first_correct";
};

struct ExperimentConfig {
  std::string name = "experiment";
  uint64_t seed = 1;
  DataConfig data;
  TargetConfig target;
  DefenseConfig defense;
  OracleConfig oracle;
  SstConfig sst;
  AttackParams attack;
  SamplesConfig samples;

  void validate() const {
    if (samples.count < 1) throw ValidationError("config: sample count must be >= 1");
    if (sst.substitutes.empty()) throw ValidationError("config: need at least one substitute");
    if (defense.kind != "none" && defense.kind != "rfn" && defense.kind != "thermometer" &&
        defense.kind != "safetynet")
      throw ValidationError("config: unknown defense kind '" + defense.kind + "'");
    if (oracle.transport != "inprocess" && oracle.transport != "wire")
      throw ValidationError("config: unknown oracle transport");
    if (oracle.transport == "wire" && oracle.address.empty())
      throw ValidationError("config: wire oracle needs an address");
    if (samples.selection != "first_correct" && samples.selection != "prefix")
      throw ValidationError("config: unknown sample selection");
    attack.validate();
    target.train.validate();
    for (const auto& s : sst.substitutes) s.train.validate();
  }
};

// ---- JSON (de)serialization ----

namespace cfgdetail {

inline nlohmann::json recipe_to_json(const TrainRecipe& r) {
  nlohmann::json j;
  j["optimizer"] = r.optimizer;
  j["batch"] = r.batch_size;
  j["holdout"] = r.holdout_fraction;
  j["phases"] = nlohmann::json::array();
  for (const auto& p : r.phases) j["phases"].push_back({p.epochs, p.lr});
  return j;
}

inline TrainRecipe recipe_from_json(const nlohmann::json& j) {
  TrainRecipe r;
  r.optimizer = j.value("optimizer", "adam");
  r.batch_size = j.value("batch", 100);
  r.holdout_fraction = j.value("holdout", 0.05f);
  for (const auto& p : j.value("phases", nlohmann::json::array()))
    r.phases.push_back({p.at(0).get<int>(), p.at(1).get<float>()});
  return r;
}

}  // namespace cfgdetail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["data"] = {{"dir", c.data.dir}, {"train", c.data.train_count}, {"test", c.data.test_count}};
  j["target"] = {{"preset", c.target.preset},
                 {"thermometer_k", c.target.thermometer_k},
                 {"train", cfgdetail::recipe_to_json(c.target.train)},
                 {"checkpoint", c.target.checkpoint}};
  j["defense"] = {{"kind", c.defense.kind},
                  {"mu", c.defense.mu},
                  {"sigma", c.defense.sigma},
                  {"detector",
                   {{"corpus", c.defense.detector.corpus},
                    {"tap", c.defense.detector.tap},
                    {"svm_c", c.defense.detector.svm_c},
                    {"svm_gamma", c.defense.detector.svm_gamma},
                    {"svm_tol", c.defense.detector.svm_tol},
                    {"ratio_threshold", c.defense.detector.ratio_threshold},
                    {"attack_iters", c.defense.detector.attack_iters},
                    {"attack_lr", c.defense.detector.attack_lr}}}};
  j["oracle"] = {{"transport", c.oracle.transport}, {"address", c.oracle.address}};
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : c.sst.substitutes)
    subs.push_back({{"preset", s.preset},
                    {"schedule", {{"count", s.schedule_count}, {"step", s.schedule_step}}},
                    {"train", cfgdetail::recipe_to_json(s.train)}});
  j["sst"] = {{"source_count", c.sst.source_count}, {"substitutes", subs}};
  nlohmann::json kappa = nlohmann::json::array();
  for (float k : c.attack.kappa_schedule) kappa.push_back(k);
  j["attack"] = {{"total_run", c.attack.total_run},
                 {"total_iter", c.attack.total_iter},
                 {"lr", c.attack.lr},
                 {"c_init", c.attack.c_init},
                 {"c_increase", c.attack.c_increase},
                 {"c_decrease", c.attack.c_decrease},
                 {"kappa", kappa},
                 {"restart_period", c.attack.restart_period},
                 {"init_amplitude", c.attack.init_amplitude},
                 {"norm", c.attack.norm == NormMode::kL2 ? "l2" : "linf"},
                 {"epsilon", c.attack.epsilon},
                 {"target_policy", static_cast<int>(c.attack.target_policy)},
                 {"check_stride", c.attack.check_stride},
                 {"verify",
                  {{"vote_runs", c.attack.verify.vote_runs},
                   {"vote_threshold", c.attack.verify.vote_threshold},
                   {"detector_in_loop", c.attack.verify.detector_in_loop},
                   {"ratio_threshold", c.attack.verify.ratio_threshold}}}};
  j["samples"] = {{"count", c.samples.count}, {"selection", c.samples.selection}};
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", -1) != kConfigSchemaVersion)
    throw ValidationError("config schema_version must be " +
                          std::to_string(kConfigSchemaVersion));
  ExperimentConfig c;
  c.name = j.value("name", "experiment");
  c.seed = j.value("seed", uint64_t(1));
  if (j.contains("data")) {
    c.data.dir = j["data"].value("dir", "");
    c.data.train_count = j["data"].value("train", 12000);
    c.data.test_count = j["data"].value("test", 2000);
  }
  const auto& t = j.at("target");
  c.target.preset = t.value("preset", "small_cnn");
  c.target.thermometer_k = t.value("thermometer_k", 0);
  c.target.train = cfgdetail::recipe_from_json(t.value("train", nlohmann::json::object()));
  c.target.checkpoint = t.value("checkpoint", "");
  if (j.contains("defense")) {
    const auto& d = j["defense"];
    c.defense.kind = d.value("kind", "none");
    c.defense.mu = d.value("mu", 0.5f);
    c.defense.sigma = d.value("sigma", 0.05f);
    if (d.contains("detector")) {
      const auto& det = d["detector"];
      c.defense.detector.corpus = det.value("corpus", 1000);
      c.defense.detector.tap = det.value("tap", 0);
      c.defense.detector.svm_c = det.value("svm_c", 10.0f);
      c.defense.detector.svm_gamma = det.value("svm_gamma", 0.0f);
      c.defense.detector.svm_tol = det.value("svm_tol", 1e-3f);
      c.defense.detector.ratio_threshold = det.value("ratio_threshold", 0.25f);
      c.defense.detector.attack_iters = det.value("attack_iters", 40);
      c.defense.detector.attack_lr = det.value("attack_lr", 1e-2f);
    }
  }
  if (j.contains("oracle")) {
    c.oracle.transport = j["oracle"].value("transport", "inprocess");
    c.oracle.address = j["oracle"].value("address", "");
  }
  const auto& s = j.at("sst");
  c.sst.source_count = s.value("source_count", 2000);
  for (const auto& sub : s.at("substitutes")) {
    SubstituteConfig sc;
    sc.preset = sub.value("preset", "small_cnn");
    if (sub.contains("schedule")) {
      sc.schedule_count = sub["schedule"].value("count", 7);
      sc.schedule_step = sub["schedule"].value("step", 0.05f);
    }
    sc.train = cfgdetail::recipe_from_json(sub.value("train", nlohmann::json::object()));
    c.sst.substitutes.push_back(std::move(sc));
  }
  const auto& a = j.at("attack");
  c.attack.total_run = a.value("total_run", 3);
  c.attack.total_iter = a.value("total_iter", 300);
  c.attack.lr = a.value("lr", 1e-3f);
  c.attack.c_init = a.value("c_init", 1.0f);
  c.attack.c_increase = a.value("c_increase", 2.0f);
  c.attack.c_decrease = a.value("c_decrease", 0.5f);
  if (a.contains("kappa")) {
    c.attack.kappa_schedule.clear();
    for (const auto& k : a["kappa"]) c.attack.kappa_schedule.push_back(k.get<float>());
  }
  c.attack.restart_period = a.value("restart_period", 0);
  c.attack.init_amplitude = a.value("init_amplitude", 0.05f);
  c.attack.norm = a.value("norm", "l2") == std::string("linf") ? NormMode::kLinf : NormMode::kL2;
  c.attack.epsilon = a.value("epsilon", 0.25f);
  c.attack.target_policy = static_cast<TargetPolicy>(a.value("target_policy", 2));
  c.attack.check_stride = a.value("check_stride", 1);
  if (a.contains("verify")) {
    const auto& v = a["verify"];
    c.attack.verify.vote_runs = v.value("vote_runs", 1);
    c.attack.verify.vote_threshold = v.value("vote_threshold", 0);
    c.attack.verify.detector_in_loop = v.value("detector_in_loop", false);
    c.attack.verify.ratio_threshold = v.value("ratio_threshold", 0.25f);
  }
  if (j.contains("samples")) {
    c.samples.count = j["samples"].value("count", 100);
    c.samples.selection = j["samples"].value("selection", "first_correct");
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("config is not valid JSON: " + path);
  return config_from_json(j);
}

// Canonical hash: nlohmann dumps objects with sorted keys, so the digest is
// stable across field ordering in the source file.
inline std::string config_hash(const ExperimentConfig& c) {
  std::string dump = config_to_json(c).dump();
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(dump)));
  return buf;
}

}  // namespace sstbench
