#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sstbench/data.hpp"
#include "sstbench/model.hpp"
#include "sstbench/optim.hpp"
#include "sstbench/oracle.hpp"

namespace sstbench {

// Margin loss over one logits row: max(max_{i != t} z_i - z_t, -kappa).
// Gradient flows through the two active logits while the margin is above
// -kappa; adding a constant to all logits leaves the value unchanged.
inline float cw_f(const float* z, int k, int target, float kappa) {
  if (k < 2) throw ValidationError("cw_f needs at least 2 classes");
  if (kappa < 0.0f) throw ValidationError("cw_f needs kappa >= 0");
  float best_other = -std::numeric_limits<float>::infinity();
  for (int j = 0; j < k; ++j)
    if (j != target) best_other = std::max(best_other, z[j]);
  return std::max(best_other - z[target], -kappa);
}

inline float cw_f(const Tensor& logits_row, int target, float kappa) {
  return cw_f(logits_row.data(), static_cast<int>(logits_row.size()), target, kappa);
}

// Non-targeted variant: push the true-label logit below the runner-up.
inline float cw_f_nontargeted(const float* z, int k, int true_label, float kappa) {
  float best_other = -std::numeric_limits<float>::infinity();
  for (int j = 0; j < k; ++j)
    if (j != true_label) best_other = std::max(best_other, z[j]);
  return std::max(z[true_label] - best_other, -kappa);
}

// d(cw_f)/d(logits); zero once the margin is saturated at -kappa.
inline Tensor cw_f_grad(const float* z, int k, int target, float kappa, bool targeted) {
  Tensor g({k});
  int best_other = -1;
  for (int j = 0; j < k; ++j)
    if (j != target && (best_other < 0 || z[j] > z[best_other])) best_other = j;
  float margin = targeted ? z[best_other] - z[target] : z[target] - z[best_other];
  if (margin > -kappa) {
    g[best_other] = targeted ? 1.0f : -1.0f;
    g[target] = targeted ? -1.0f : 1.0f;
  }
  return g;
}

// second | third | fourth most probable class of the robust model.
enum class TargetPolicy { kSecond = 2, kThird = 3, kFourth = 4 };

inline TargetPolicy target_policy_from_name(const std::string& s) {
  if (s == "second") return TargetPolicy::kSecond;
  if (s == "third") return TargetPolicy::kThird;
  if (s == "fourth") return TargetPolicy::kFourth;
  throw ValidationError("unknown target policy '" + s + "'");
}

// Index of the n-th largest logit; ties break toward the lower index.
inline int select_target(const Tensor& robust_logits_row, TargetPolicy policy) {
  int k = static_cast<int>(robust_logits_row.size());
  if (k < 2) throw ValidationError("select_target needs >= 2 classes");
  int rank = std::min(static_cast<int>(policy), k);
  std::vector<int> order(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (robust_logits_row[a] != robust_logits_row[b])
      return robust_logits_row[a] > robust_logits_row[b];
    return a < b;
  });
  return order[static_cast<size_t>(rank - 1)];
}

enum class NormMode { kL2, kLinf };

// Verification policy for oracle checks. vote_runs == 1 is a single
// stochastic pass; more runs apply the vote rule for attack success: the
// example counts as fooling the model iff strictly more than vote_threshold
// of the runs misclassify it. (Sample selection uses the complementary
// correctness rule: an input is classified correctly iff more than
// vote_threshold runs predict the true label.)
struct VerifySpec {
  int vote_runs = 1;
  int vote_threshold = 0;
  bool detector_in_loop = false;
  float ratio_threshold = 0.25f;

  void validate() const {
    if (vote_runs < 1) throw ValidationError("vote_runs must be >= 1");
    if (vote_threshold < 0 || vote_threshold >= vote_runs)
      throw ValidationError("vote_threshold must be in [0, vote_runs)");
  }
};

struct AttackParams {
  int total_run = 3;
  int total_iter = 300;
  float lr = 1e-3f;
  float c_init = 1.0f;
  float c_increase = 2.0f;   // applied when the incumbent improves
  float c_decrease = 0.5f;   // applied each iteration until a first success
  std::vector<float> kappa_schedule = {0.0f, 5.0f, 10.0f};  // per run
  int restart_period = 0;    // iterations between random re-inits; 0 = never
  float init_amplitude = 0.05f;
  NormMode norm = NormMode::kL2;
  float epsilon = 0.25f;     // L-inf bound
  TargetPolicy target_policy = TargetPolicy::kSecond;
  int check_stride = 1;       // oracle check cadence inside the inner loop
  int vote_attempt_stride = 25;  // cadence of full-vote attempts on stochastic targets
  VerifySpec verify;
  std::vector<float>* c_trace = nullptr;  // test hook: c recorded per iteration

  float kappa_for_run(int run) const {
    if (kappa_schedule.empty()) return 0.0f;
    size_t i = std::min(static_cast<size_t>(run), kappa_schedule.size() - 1);
    return kappa_schedule[i];
  }

  void validate() const {
    if (total_run < 0 || total_iter < 0) throw ValidationError("attack run/iter must be >= 0");
    if (lr <= 0.0f) throw ValidationError("attack lr must be positive");
    if (c_increase < 1.0f) throw ValidationError("c_increase must be >= 1 (1 disables the knob)");
    if (c_decrease <= 0.0f || c_decrease > 1.0f)
      throw ValidationError("c_decrease must lie in (0,1] (1 disables the knob)");
    if (norm == NormMode::kLinf && epsilon <= 0.0f)
      throw ValidationError("L-inf attack needs epsilon > 0");
    if (check_stride < 1) throw ValidationError("check_stride must be >= 1");
    for (float k : kappa_schedule)
      if (k < 0.0f) throw ValidationError("kappa must be >= 0");
    verify.validate();
  }
};

struct AdvResult {
  Tensor image;              // empty when no verified adversarial was found
  double l2 = 0.0;           // of x' - x
  double linf = 0.0;
  int iterations = 0;        // inner iterations consumed
  uint64_t queries = 0;      // oracle images spent on this sample
  bool detector_evaded = false;
  int target_label = -1;
  std::vector<int> final_votes;  // vote counts recorded at result time

  bool success() const { return !image.empty(); }
};

// Objective value c * ||delta||_2^2 + sum_s f_s(Z_s(clip01(x + delta))); in
// L-inf mode the distortion term is dropped (delta is clamped elsewhere).
inline float cw_objective(const Tensor& delta, const Tensor& x,
                          const std::vector<const Model*>& substitutes, int target, float kappa,
                          float c, NormMode norm) {
  if (delta.shape() != x.shape()) throw ShapeError("cw_objective: delta/x shape mismatch");
  Tensor x_eval(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) x_eval[i] = clip01(x[i] + delta[i]);
  Tensor row = x_eval.reshaped({1, static_cast<int>(x.size())});
  float obj = 0.0f;
  if (norm == NormMode::kL2) {
    float d2 = 0.0f;
    for (int64_t i = 0; i < delta.size(); ++i) d2 += delta[i] * delta[i];
    obj += c * d2;
  }
  for (const Model* sub : substitutes) obj += cw_f(sub->logits(row), target, kappa);
  return obj;
}

namespace attackdetail {

struct CheckOutcome {
  bool fooled = false;
  int pred = -1;
  bool detector_legit = true;
  double ratio = 0.0;
  std::vector<int> votes;
};

struct Candidate {
  Tensor image;
  double l2 = 0.0;
  double linf = 0.0;
  int iteration = 0;
  bool detector_legit = false;
};

// One oracle round: single pass or full vote, plus the detector conditions
// when the attack runs with the detector in the loop.
inline CheckOutcome oracle_check(Oracle& oracle, const Tensor& x_row, int y,
                                 const VerifySpec& spec, uint64_t* queries) {
  int m = static_cast<int>(x_row.size());
  CheckOutcome out;
  if (spec.vote_runs == 1) {
    OracleResponse r = oracle.query(x_row.reshaped({1, m}), Phase::kCrafting);
    *queries += 1;
    int k = r.logits.dim(1);
    out.pred = argmax(r.logits.data(), k);
    out.fooled = out.pred != y;
    if (spec.detector_in_loop) {
      // ratio from oracle logits (softmax), per the gray-box surface
      float mx = r.logits[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, r.logits[j]);
      double sum = 0.0;
      std::vector<double> p(static_cast<size_t>(k));
      for (int j = 0; j < k; ++j) {
        p[static_cast<size_t>(j)] = std::exp(static_cast<double>(r.logits[j]) - mx);
        sum += p[static_cast<size_t>(j)];
      }
      double best = 0.0, second = 0.0;
      for (int j = 0; j < k; ++j) {
        double v = p[static_cast<size_t>(j)] / sum;
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      out.ratio = best > 0.0 ? second / best : 1.0;
      out.detector_legit =
          r.verdicts.has_value() && (*r.verdicts)[0] == Verdict::kLegitimate;
      out.fooled = out.fooled && out.detector_legit && out.ratio <= spec.ratio_threshold;
    }
    return out;
  }
  // majority vote: one request carrying vote_runs copies, fresh defense
  // randomness per row; fooled iff misclassifications exceed the threshold
  Tensor batch({spec.vote_runs, m});
  for (int r = 0; r < spec.vote_runs; ++r)
    std::copy(x_row.data(), x_row.data() + m, batch.data() + static_cast<int64_t>(r) * m);
  OracleResponse resp = oracle.query(batch, Phase::kCrafting);
  *queries += static_cast<uint64_t>(spec.vote_runs);
  int k = resp.logits.dim(1);
  out.votes.assign(static_cast<size_t>(k), 0);
  for (int r = 0; r < spec.vote_runs; ++r)
    out.votes[static_cast<size_t>(argmax(resp.logits.data() + static_cast<int64_t>(r) * k, k))]++;
  int miss = spec.vote_runs - (y >= 0 && y < k ? out.votes[static_cast<size_t>(y)] : 0);
  out.fooled = miss > spec.vote_threshold;
  return out;
}

}  // namespace attackdetail

// Algorithm-style crafting loop against a gray-box oracle, optimizing the
// C&W objective on one or more local substitutes:
//   for each run: kappa from the schedule, c reset to c_init, delta random;
//   each iteration takes one Adam step, clips to [0,1], and checks the
//   oracle with a single cheap pass; while nothing verified has fooled the
//   oracle yet c shrinks every iteration, and every verified improvement
//   (smaller L2) bumps c back up. A candidate that passes the cheap check
//   with an improving L2 is immediately verified under the full policy
//   (majority vote for stochastic targets, the detector conditions when in
//   the loop); only verified candidates become the incumbent, so the result
//   is the smallest-L2 adversarial the target actually confirmed.
inline AdvResult craft_adv_example(const Tensor& x, int y, Oracle& oracle,
                                   const std::vector<const Model*>& substitutes,
                                   const AttackParams& params, Rng& rng) {
  params.validate();
  if (substitutes.empty()) throw ValidationError("craft needs at least one substitute");
  int m = static_cast<int>(x.size());
  for (const Model* s : substitutes)
    if (s->input_dim() != m) throw ShapeError("substitute input width mismatch");

  AdvResult result;
  uint64_t queries = 0;
  if (params.total_run == 0 || params.total_iter == 0) return result;

  // target chosen once from the robust model's clean logits
  OracleResponse clean = oracle.query(x.reshaped({1, m}), Phase::kCrafting);
  queries += 1;
  int k = clean.logits.dim(1);
  int target = select_target(clean.logits.reshaped({k}), params.target_policy);
  result.target_label = target;

  bool voting = params.verify.vote_runs > 1;
  double best_l2 = std::numeric_limits<double>::infinity();

  std::vector<Tensor> dslot(1, Tensor({m}));
  Tensor& delta = dslot[0];
  Tensor x_eval({1, m});
  for (int run = 0; run < params.total_run; ++run) {
    float kappa = params.kappa_for_run(run);
    float c = params.c_init;
    auto reinit = [&]() {
      for (int i = 0; i < m; ++i) delta[i] = rng.uniform(-params.init_amplitude, params.init_amplitude);
      if (params.norm == NormMode::kLinf)
        for (int i = 0; i < m; ++i)
          delta[i] = std::min(params.epsilon, std::max(-params.epsilon, delta[i]));
    };
    reinit();
    AdamState adam = AdamState::make(dslot, params.lr);

    for (int iter = 0; iter < params.total_iter; ++iter) {
      ++result.iterations;
      if (params.restart_period > 0 && iter > 0 && iter % params.restart_period == 0) {
        reinit();
        adam = AdamState::make(dslot, params.lr);
      }

      // gradient of the objective at clip01(x + delta)
      for (int i = 0; i < m; ++i) x_eval[i] = clip01(x[i] + delta[i]);
      Tensor grad({m});
      if (params.norm == NormMode::kL2)
        for (int i = 0; i < m; ++i) grad[i] = 2.0f * c * delta[i];
      for (const Model* sub : substitutes) {
        ModelPass pass(*sub, x_eval);
        Tensor df = cw_f_grad(pass.logits().data(), k, target, kappa, /*targeted=*/true);
        Tensor gin = pass.input_gradient(df.reshaped({1, k}));
        for (int i = 0; i < m; ++i) {
          float v = x[i] + delta[i];
          if (v >= 0.0f && v <= 1.0f) grad[i] += gin[i];  // clip gate
        }
      }
      std::vector<const Tensor*> grads = {&grad};
      adam_step(dslot, grads, adam);
      if (params.norm == NormMode::kLinf)
        for (int i = 0; i < m; ++i)
          delta[i] = std::min(params.epsilon, std::max(-params.epsilon, delta[i]));

      for (int i = 0; i < m; ++i) x_eval[i] = clip01(x[i] + delta[i]);

      if (result.image.empty()) c *= params.c_decrease;
      if (params.c_trace) params.c_trace->push_back(c);

      if (iter % params.check_stride != 0) continue;
      VerifySpec single;
      single.detector_in_loop = params.verify.detector_in_loop;
      single.ratio_threshold = params.verify.ratio_threshold;
      auto check = attackdetail::oracle_check(oracle, x_eval.reshaped({m}), y, single, &queries);
      if (!check.fooled) continue;
      double l2 = 0.0, linf = 0.0;
      for (int i = 0; i < m; ++i) {
        double d = static_cast<double>(x_eval[i]) - x[i];
        l2 += d * d;
        linf = std::max(linf, std::fabs(d));
      }
      l2 = std::sqrt(l2);
      if (l2 >= best_l2) continue;
      bool verified = true;
      std::vector<int> votes;
      if (voting) {
        // full votes are throttled: one attempt per vote_attempt_stride
        // iterations keeps unlucky single-pass flukes from draining the
        // query budget while the trajectory is refined in between
        if (params.vote_attempt_stride > 1 && iter % params.vote_attempt_stride != 0) continue;
        auto full = attackdetail::oracle_check(oracle, x_eval.reshaped({m}), y, params.verify,
                                               &queries);
        verified = full.fooled;
        votes = full.votes;
      }
      if (!verified) continue;
      best_l2 = l2;
      result.image = x_eval.reshaped({m});
      result.l2 = l2;
      result.linf = linf;
      result.detector_evaded = params.verify.detector_in_loop && check.detector_legit;
      result.final_votes = votes;
      c *= params.c_increase;
    }
  }
  result.queries = queries;
  return result;
}

// White-box reference: the target model itself is the sole "substitute" and
// verification reads its predictions directly. Non-targeted mode pushes the
// true-label logit below the runner-up.
inline AdvResult cw_whitebox_attack(const Model& model, const Tensor& x, int y,
                                    const AttackParams& params, bool targeted, Rng& rng) {
  params.validate();
  int m = static_cast<int>(x.size());
  if (model.input_dim() != m) throw ShapeError("whitebox attack input width mismatch");
  int k = model.num_classes();

  AdvResult result;
  Tensor clean_row = x.reshaped({1, m});
  int target = y;
  if (targeted)
    target = select_target(model.logits(clean_row).reshaped({k}), params.target_policy);
  result.target_label = targeted ? target : -1;

  std::vector<Tensor> dslot(1, Tensor({m}));
  Tensor& delta = dslot[0];
  Tensor x_eval({1, m});
  double best_l2 = std::numeric_limits<double>::infinity();

  for (int run = 0; run < params.total_run; ++run) {
    float kappa = params.kappa_for_run(run);
    float c = params.c_init;
    auto reinit = [&]() {
      for (int i = 0; i < m; ++i) delta[i] = rng.uniform(-params.init_amplitude, params.init_amplitude);
    };
    reinit();
    AdamState adam = AdamState::make(dslot, params.lr);

    for (int iter = 0; iter < params.total_iter; ++iter) {
      ++result.iterations;
      if (params.restart_period > 0 && iter > 0 && iter % params.restart_period == 0) {
        reinit();
        adam = AdamState::make(dslot, params.lr);
      }
      for (int i = 0; i < m; ++i) x_eval[i] = clip01(x[i] + delta[i]);
      Tensor grad({m});
      if (params.norm == NormMode::kL2)
        for (int i = 0; i < m; ++i) grad[i] = 2.0f * c * delta[i];
      {
        ModelPass pass(model, x_eval);
        Tensor df = cw_f_grad(pass.logits().data(), k, targeted ? target : y, kappa, targeted);
        Tensor gin = pass.input_gradient(df.reshaped({1, k}));
        for (int i = 0; i < m; ++i) {
          float v = x[i] + delta[i];
          if (v >= 0.0f && v <= 1.0f) grad[i] += gin[i];
        }
      }
      std::vector<const Tensor*> grads = {&grad};
      adam_step(dslot, grads, adam);
      if (params.norm == NormMode::kLinf)
        for (int i = 0; i < m; ++i)
          delta[i] = std::min(params.epsilon, std::max(-params.epsilon, delta[i]));

      for (int i = 0; i < m; ++i) x_eval[i] = clip01(x[i] + delta[i]);
      if (result.image.empty()) c *= params.c_decrease;

      // Algorithm-style acceptance: any misclassification counts
      int pred = model.predict(x_eval)[0];
      if (pred == y) continue;
      double l2 = 0.0, linf = 0.0;
      for (int i = 0; i < m; ++i) {
        double d = static_cast<double>(x_eval[i]) - x[i];
        l2 += d * d;
        linf = std::max(linf, std::fabs(d));
      }
      l2 = std::sqrt(l2);
      if (l2 < best_l2) {
        best_l2 = l2;
        result.image = x_eval.reshaped({m});
        result.l2 = l2;
        result.linf = linf;
        c *= params.c_increase;
      }
    }
  }
  return result;
}

}  // namespace sstbench
