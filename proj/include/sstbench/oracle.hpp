#pragma once

#include <atomic>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sstbench/defended.hpp"

namespace sstbench {

// Which stage of the attack a query belongs to; budget reports keep the two
// apart so crafting never contaminates substitute-training counts.
enum class Phase { kSubstituteTraining, kCrafting, kOther };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kSubstituteTraining: return "substitute-training";
    case Phase::kCrafting: return "crafting";
    case Phase::kOther: return "other";
  }
  return "?";
}

inline Phase phase_from_name(const std::string& s) {
  if (s == "substitute-training") return Phase::kSubstituteTraining;
  if (s == "crafting") return Phase::kCrafting;
  if (s == "other") return Phase::kOther;
  throw ValidationError("unknown phase '" + s + "'");
}

struct QueryLogSnapshot {
  uint64_t images = 0;
  uint64_t requests = 0;
  uint64_t images_substitute = 0;
  uint64_t images_crafting = 0;
  uint64_t requests_substitute = 0;
  uint64_t requests_crafting = 0;
};

// Monotone counters; safe under concurrent callers.
class QueryLog {
 public:
  void record(Phase phase, uint64_t batch) {
    std::lock_guard<std::mutex> lk(mutex_);
    snap_.images += batch;
    snap_.requests += 1;
    if (phase == Phase::kSubstituteTraining) {
      snap_.images_substitute += batch;
      snap_.requests_substitute += 1;
    } else if (phase == Phase::kCrafting) {
      snap_.images_crafting += batch;
      snap_.requests_crafting += 1;
    }
  }

  QueryLogSnapshot snapshot() const {
    std::lock_guard<std::mutex> lk(mutex_);
    return snap_;
  }

 private:
  mutable std::mutex mutex_;
  QueryLogSnapshot snap_;
};

struct OracleResponse {
  Tensor logits;  // [batch, K]
  std::optional<std::vector<Verdict>> verdicts;  // present iff model has a detector
  std::string model_id;
  uint64_t seq = 0;
};

// The gray-box boundary. Callers see logits (and detector verdicts); the
// interface exposes nothing else about the served model.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual OracleResponse query(const Tensor& batch, Phase phase) = 0;
  virtual QueryLogSnapshot log() const = 0;
};

class InProcessOracle : public Oracle {
 public:
  // Stochastic defenses draw per-request randomness from streams derived
  // from `seed` and the request sequence number, which makes responses
  // replayable for a pinned seed.
  InProcessOracle(const DefendedModel& model, uint64_t seed)
      : model_(model), base_(seed) {}

  OracleResponse query(const Tensor& batch, Phase phase) override {
    int64_t m = model_.input_dim();
    if (batch.size() == 0 || batch.size() % m != 0)
      throw ShapeError("oracle query: batch size not a multiple of input width");
    for (int64_t i = 0; i < batch.size(); ++i)
      if (batch[i] < 0.0f || batch[i] > 1.0f)
        throw ValidationError("oracle query: pixel outside [0,1]");
    uint64_t seq = seq_.fetch_add(1);
    Rng rng = Rng(base_).stream(seq);
    OracleResponse resp;
    resp.logits = model_.logits(batch, rng);
    if (model_.has_detector()) resp.verdicts = model_.verdicts(batch, rng);
    resp.model_id = model_.id();
    resp.seq = seq;
    log_.record(phase, static_cast<uint64_t>(batch.size() / m));
    return resp;
  }

  QueryLogSnapshot log() const override { return log_.snapshot(); }

  // Test hook: re-pinning the seed and resetting the sequence makes the next
  // responses byte-replayable.
  void pin_seed(uint64_t seed) {
    base_ = seed;
    seq_.store(0);
  }

  const DefendedModel& model() const { return model_; }

 private:
  const DefendedModel& model_;
  uint64_t base_;
  std::atomic<uint64_t> seq_{0};
  QueryLog log_;
};

// Label-only view for baselines whose threat model forbids logits. The
// narrower interface is what enforces the weaker attacker.
class LabelOracle {
 public:
  explicit LabelOracle(Oracle& inner) : inner_(inner) {}

  std::vector<int> labels(const Tensor& batch, Phase phase) {
    OracleResponse r = inner_.query(batch, phase);
    int k = r.logits.dim(1);
    std::vector<int> out(static_cast<size_t>(r.logits.dim(0)));
    for (int64_t i = 0; i < r.logits.dim(0); ++i)
      out[static_cast<size_t>(i)] = argmax(r.logits.data() + i * k, k);
    return out;
  }

 private:
  Oracle& inner_;
};

}  // namespace sstbench
