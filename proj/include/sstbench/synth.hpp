#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "sstbench/data.hpp"
#include "sstbench/rng.hpp"

namespace sstbench {

// Procedural 28x28 grayscale digit corpus. Each digit class is a fixed set
// of strokes; every sample gets its own affine jitter, pen width and ink
// level, so the classes are easy for a CNN yet not linearly trivial. Used as
// a stand-in wherever no IDX dataset is supplied.

namespace synthdetail {

struct P {
  float x, y;
};

using Stroke = std::vector<P>;

inline Stroke arc(float cx, float cy, float rx, float ry, float a0, float a1, int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    float a = a0 + (a1 - a0) * static_cast<float>(i) / static_cast<float>(steps);
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

inline const std::vector<std::vector<Stroke>>& glyphs() {
  static const std::vector<std::vector<Stroke>> g = [] {
    const float pi = 3.14159265358979f;
    std::vector<std::vector<Stroke>> v(10);
    v[0] = {arc(0.5f, 0.5f, 0.26f, 0.36f, 0.0f, 2.0f * pi, 28)};
    v[1] = {{{0.36f, 0.28f}, {0.54f, 0.12f}}, {{0.54f, 0.12f}, {0.54f, 0.88f}}};
    v[2] = {arc(0.5f, 0.32f, 0.25f, 0.20f, -pi, 0.0f, 12),
            {{0.75f, 0.32f}, {0.27f, 0.88f}},
            {{0.27f, 0.88f}, {0.76f, 0.88f}}};
    v[3] = {arc(0.47f, 0.30f, 0.24f, 0.19f, -pi * 0.9f, pi * 0.5f, 14),
            arc(0.47f, 0.68f, 0.26f, 0.21f, -pi * 0.5f, pi * 0.9f, 14)};
    v[4] = {{{0.64f, 0.12f}, {0.24f, 0.60f}},
            {{0.24f, 0.60f}, {0.80f, 0.60f}},
            {{0.64f, 0.12f}, {0.64f, 0.88f}}};
    v[5] = {{{0.72f, 0.12f}, {0.30f, 0.12f}},
            {{0.30f, 0.12f}, {0.28f, 0.46f}},
            arc(0.48f, 0.64f, 0.24f, 0.22f, -pi * 0.55f, pi * 0.75f, 16)};
    v[6] = {{{0.66f, 0.12f}, {0.36f, 0.52f}}, arc(0.5f, 0.66f, 0.21f, 0.21f, 0.0f, 2.0f * pi, 22)};
    v[7] = {{{0.25f, 0.13f}, {0.76f, 0.13f}}, {{0.76f, 0.13f}, {0.40f, 0.88f}}};
    v[8] = {arc(0.5f, 0.31f, 0.19f, 0.18f, 0.0f, 2.0f * pi, 20),
            arc(0.5f, 0.68f, 0.23f, 0.21f, 0.0f, 2.0f * pi, 22)};
    v[9] = {arc(0.5f, 0.33f, 0.20f, 0.20f, 0.0f, 2.0f * pi, 20), {{0.70f, 0.36f}, {0.60f, 0.88f}}};
    return v;
  }();
  return g;
}

inline float seg_dist(float px, float py, const P& a, const P& b) {
  float vx = b.x - a.x, vy = b.y - a.y;
  float wx = px - a.x, wy = py - a.y;
  float vv = vx * vx + vy * vy;
  float t = vv > 0.0f ? std::min(1.0f, std::max(0.0f, (wx * vx + wy * vy) / vv)) : 0.0f;
  float dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace synthdetail

// Renders one digit. The same (label, rng state) always produces the same
// pixels. Each sample gets affine jitter, a sinusoidal wobble field, pen and
// ink variation, speckle and a few clutter dots, which keeps the classes
// learnable without being linearly trivial.
inline void render_digit(int label, Rng& rng, float* out28x28) {
  using namespace synthdetail;
  const auto& strokes = glyphs()[static_cast<size_t>(label)];

  float rot = rng.uniform(-0.35f, 0.35f);
  float shear = rng.uniform(-0.28f, 0.28f);
  float sx = rng.uniform(0.72f, 1.18f);
  float sy = rng.uniform(0.72f, 1.18f);
  float tx = rng.uniform(-0.08f, 0.08f);
  float ty = rng.uniform(-0.08f, 0.08f);
  float pen = rng.uniform(0.75f, 2.0f);
  float ink = rng.uniform(0.6f, 1.0f);
  float speckle = rng.uniform(0.01f, 0.07f);
  float wob_amp = rng.uniform(0.0f, 1.4f);
  float wob_freq = rng.uniform(0.25f, 0.65f);
  float wob_phase = rng.uniform(0.0f, 6.28f);
  float wob_amp2 = rng.uniform(0.0f, 1.1f);
  float wob_phase2 = rng.uniform(0.0f, 6.28f);

  float cr = std::cos(rot), sr = std::sin(rot);
  auto map = [&](P p) {
    float x = (p.x - 0.5f) * sx, y = (p.y - 0.5f) * sy;
    x += shear * y;
    float xr = cr * x - sr * y, yr = sr * x + cr * y;
    float px = (xr + 0.5f + tx) * 22.0f + 3.0f;
    float py = (yr + 0.5f + ty) * 22.0f + 3.0f;
    // smooth displacement field bends the strokes
    px += wob_amp * std::sin(wob_freq * py + wob_phase);
    py += wob_amp2 * std::sin(wob_freq * px + wob_phase2);
    return P{px, py};
  };

  std::vector<std::pair<P, P>> segs;
  for (const auto& s : strokes)
    for (size_t i = 0; i + 1 < s.size(); ++i) segs.emplace_back(map(s[i]), map(s[i + 1]));

  for (int y = 0; y < 28; ++y) {
    for (int x = 0; x < 28; ++x) {
      float d = 1e9f;
      float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      for (const auto& sg : segs) d = std::min(d, seg_dist(px, py, sg.first, sg.second));
      float v = std::min(1.0f, std::max(0.0f, pen + 0.5f - d)) * ink;
      out28x28[y * 28 + x] = v;
    }
  }
  // clutter: a few faint dots off the glyph
  int dots = static_cast<int>(rng.below(4));
  for (int dtt = 0; dtt < dots; ++dtt) {
    int cx = 2 + static_cast<int>(rng.below(24));
    int cy = 2 + static_cast<int>(rng.below(24));
    float amp = rng.uniform(0.15f, 0.45f);
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) {
        int i = (cy + oy) * 28 + (cx + ox);
        float fall = (ox == 0 && oy == 0) ? 1.0f : 0.35f;
        out28x28[i] = clip01(out28x28[i] + amp * fall);
      }
  }
  for (int i = 0; i < 784; ++i)
    out28x28[i] = clip01(out28x28[i] + rng.uniform(-speckle, speckle));
}

// Balanced-ish labeled corpus; sample i is generated from its own RNG stream
// so any prefix of a bigger corpus is stable.
inline Dataset make_digits(int count, uint64_t seed, const std::string& name = "digits") {
  Dataset ds;
  ds.width = 28;
  ds.height = 28;
  ds.channels = 1;
  ds.name = name;
  ds.images = Tensor({count, 784});
  ds.labels.resize(static_cast<size_t>(count));
  Rng root(seed);
  parallel_for(count, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      Rng stream = root.stream(static_cast<uint64_t>(i));
      int label = static_cast<int>(stream.below(10));
      ds.labels[static_cast<size_t>(i)] = label;
      render_digit(label, stream, ds.images.data() + i * 784);
    }
  }, 64);
  return ds;
}

}  // namespace sstbench
