#include <gtest/gtest.h>

#include "sstbench/defended.hpp"
#include "sstbench/defenses/rfn.hpp"
#include "sstbench/defenses/thermometer.hpp"
#include "sstbench/presets.hpp"
#include "sstbench/synth.hpp"
#include "sstbench/train.hpp"

using namespace sstbench;

TEST(Rfn, TestModeZeroCountIsExact) {
  RfnParams p;
  p.mu = 0.5f;
  p.sigma = 0.05f;
  p.mode = RfnParams::Mode::kTest;
  Rng rng(1);
  Tensor mask = sample_rfn_mask(20, 784, p, rng);
  for (int r = 0; r < 20; ++r) {
    int zeros = 0;
    for (int i = 0; i < 784; ++i)
      if (mask[r * 784 + i] == 0.0f) ++zeros;
    EXPECT_EQ(zeros, 392);  // round(784 * 0.5), half the features
  }
}

TEST(Rfn, RoundingRuleMatchesLround) {
  RfnParams p;
  p.mu = 0.3f;
  p.sigma = 0.0f;
  p.mode = RfnParams::Mode::kTest;
  Rng rng(2);
  Tensor mask = sample_rfn_mask(1, 7, p, rng);  // round(2.1) = 2
  int zeros = 0;
  for (int i = 0; i < 7; ++i)
    if (mask[i] == 0.0f) ++zeros;
  EXPECT_EQ(zeros, 2);
}

TEST(Rfn, TrainingModeMatchesGaussianMoments) {
  RfnParams p;
  p.mu = 0.5f;
  p.sigma = 0.05f;
  p.mode = RfnParams::Mode::kTraining;
  Rng rng(3);
  int rows = 10000, m = 784;
  Tensor mask = sample_rfn_mask(rows, m, p, rng);
  std::vector<double> fractions(static_cast<size_t>(rows));
  double mean = 0.0;
  for (int r = 0; r < rows; ++r) {
    int zeros = 0;
    for (int i = 0; i < m; ++i)
      if (mask[static_cast<int64_t>(r) * m + i] == 0.0f) ++zeros;
    fractions[static_cast<size_t>(r)] = static_cast<double>(zeros) / m;
    mean += fractions[static_cast<size_t>(r)];
  }
  mean /= rows;
  double var = 0.0;
  for (double f : fractions) var += (f - mean) * (f - mean);
  double stddev = std::sqrt(var / rows);
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(stddev, 0.05, 0.01);
}

TEST(Rfn, ZeroPositionsAreUniform) {
  RfnParams p;
  p.mu = 0.5f;
  p.sigma = 0.0f;
  p.mode = RfnParams::Mode::kTest;
  Rng rng(4);
  int rows = 2000, m = 100;
  Tensor mask = sample_rfn_mask(rows, m, p, rng);
  std::vector<int> zero_count(static_cast<size_t>(m), 0);
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < m; ++i)
      if (mask[static_cast<int64_t>(r) * m + i] == 0.0f) zero_count[static_cast<size_t>(i)]++;
  // each position zeroed with prob 0.5: binomial(2000, .5), sd ~ 22.4
  for (int i = 0; i < m; ++i) {
    EXPECT_GT(zero_count[static_cast<size_t>(i)], 1000 - 5 * 23);
    EXPECT_LT(zero_count[static_cast<size_t>(i)], 1000 + 5 * 23);
  }
}

TEST(Rfn, ForwardMatchesMaskedLogits) {
  Model m = Model::build(make_preset("small_mlp"), 17);
  Dataset ds = make_digits(3, 5);
  RfnParams p;
  p.mu = 0.5f;
  p.sigma = 0.05f;
  p.mode = RfnParams::Mode::kTest;
  // same seed -> identical logits
  Rng r1(9), r2(9), r3(10);
  Tensor a = rfn_forward(m, ds.images, p, r1);
  Tensor b = rfn_forward(m, ds.images, p, r2);
  for (int64_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  // different seeds may differ
  Tensor c = rfn_forward(m, ds.images, p, r3);
  bool any_diff = false;
  for (int64_t i = 0; i < a.size(); ++i) any_diff |= a[i] != c[i];
  EXPECT_TRUE(any_diff);
}

TEST(Rfn, MuNearZeroKeepsEverything) {
  // clamped rate 0 -> all-ones mask -> logits equal undefended logits
  Model m = Model::build(make_preset("small_mlp"), 17);
  Dataset ds = make_digits(2, 6);
  RfnParams p;
  p.mu = 1e-9f;
  p.sigma = 0.0f;
  p.mode = RfnParams::Mode::kTest;
  Rng rng(1);
  Tensor defended = rfn_forward(m, ds.images, p, rng);
  Tensor plain = m.logits(ds.images);
  for (int64_t i = 0; i < plain.size(); ++i) EXPECT_EQ(defended[i], plain[i]);
}

TEST(Thermometer, PaperExampleBits) {
  ThermometerParams p;
  p.k = 10;
  Tensor px({1, 1}, {0.33f});
  Tensor code = thermometer_encode(px, p);
  const char* want = "1110000000";
  for (int j = 0; j < 10; ++j)
    EXPECT_FLOAT_EQ(code[j], want[j] == '1' ? 1.0f : 0.0f) << "bit " << j;
}

TEST(Thermometer, BoundaryValues) {
  ThermometerParams p;
  p.k = 8;
  Tensor px({1, 2}, {0.0f, 1.0f});
  Tensor code = thermometer_encode(px, p);
  for (int j = 0; j < 8; ++j) {
    EXPECT_FLOAT_EQ(code[j], 0.0f);      // tau(0) = all zeros
    EXPECT_FLOAT_EQ(code[8 + j], 1.0f);  // tau(1) = all ones
  }
}

TEST(Thermometer, MonotonePrefixProperty) {
  ThermometerParams p;
  p.k = 16;
  Rng rng(5);
  Tensor px({1, 64});
  for (int i = 0; i < 64; ++i) px[i] = rng.uniform();
  Tensor code = thermometer_encode(px, p);
  for (int i = 0; i < 64; ++i) {
    bool seen_zero = false;
    for (int j = 0; j < 16; ++j) {
      float bit = code[i * 16 + j];
      if (bit == 0.0f) seen_zero = true;
      if (seen_zero) EXPECT_FLOAT_EQ(bit, 0.0f) << "ones must form a prefix";
    }
  }
  // monotonicity: p1 <= p2 => code(p1) <= code(p2) elementwise
  Tensor two({1, 2}, {0.3f, 0.7f});
  Tensor c2 = thermometer_encode(two, p);
  for (int j = 0; j < 16; ++j) EXPECT_LE(c2[j], c2[16 + j]);
}

TEST(Thermometer, DecodeRecoversWithinOneLevel) {
  ThermometerParams p;
  p.k = 12;
  Rng rng(6);
  Tensor px({1, 100});
  for (int i = 0; i < 100; ++i) px[i] = rng.uniform();
  Tensor back = thermometer_decode(thermometer_encode(px, p), p);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(back[i], px[i], 1.0f / 12.0f);
}

TEST(Thermometer, GraphInputLayerBlocksGradients) {
  ModelSpec spec = with_thermometer_input(make_preset("small_mlp"), 8);
  Model m = Model::build(spec, 3);
  Tensor x({1, 784});
  x.fill(0.4f);
  Tensor dlogits({1, 10});
  dlogits.fill(1.0f);
  Tensor g = m.input_gradient(x, dlogits);
  for (int64_t i = 0; i < g.size(); ++i) EXPECT_FLOAT_EQ(g[i], 0.0f);
}

TEST(MajorityVote, DeterministicDefenseGivesOneHotCounts) {
  Model m = Model::build(make_preset("small_mlp"), 21);
  Dataset ds = make_digits(1, 7);
  PlainDefended dm(std::move(m), "plain");
  Rng rng(3);
  int pred = dm.model().predict(ds.images)[0];
  VoteResult v = majority_vote_predict(dm, ds.image(0), pred, 100, 50, rng);
  EXPECT_EQ(v.counts[static_cast<size_t>(pred)], 100);
  EXPECT_TRUE(v.correct);
  // verdict independent of threshold < runs
  Rng rng2(4);
  VoteResult v2 = majority_vote_predict(dm, ds.image(0), pred, 100, 99, rng2);
  EXPECT_TRUE(v2.correct);
}

TEST(MajorityVote, StrictInequalityAtThreshold) {
  // threshold=50: 51 correct of 100 passes, 50 of 100 does not.
  // Exercised through the public surface with a deterministic model: the
  // count is either 0 or 100, so probe the rule directly on counts.
  VoteResult r;
  r.counts = {51, 49};
  EXPECT_TRUE(r.counts[0] > 50);
  r.counts = {50, 50};
  EXPECT_FALSE(r.counts[0] > 50);
}

TEST(MajorityVote, RfnVoteIsThresholdMonotone) {
  Dataset train = make_digits(1500, 31);
  Model m = Model::build(make_preset("small_mlp"), 13);
  TrainRecipe r;
  r.phases = {{2, 1e-3f}};
  r.seed = 8;
  train_classifier(m, train, r);
  RfnParams p;
  p.mu = 0.5f;
  p.sigma = 0.05f;
  RfnDefended dm(std::move(m), p, "rfn");
  Dataset test = make_digits(30, 32);
  Rng rng(11);
  int correct50 = 0, correct90 = 0;
  for (int i = 0; i < 30; ++i) {
    VoteResult v = majority_vote_predict(dm, test.image(i), test.labels[static_cast<size_t>(i)],
                                         100, 50, rng);
    int c = v.counts[static_cast<size_t>(test.labels[static_cast<size_t>(i)])];
    if (c > 50) ++correct50;
    if (c > 90) ++correct90;
  }
  EXPECT_LE(correct90, correct50);  // stricter vote cannot pass more samples
  EXPECT_GT(correct50, 15);         // trained model mostly survives the vote
}
