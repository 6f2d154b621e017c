#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sstbench/common.hpp"
#include "sstbench/rng.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

// Labeled image set. Pixels live in [0,1]; images are stored flat row-major.
struct Dataset {
  Tensor images;            // [N, m]
  std::vector<int> labels;  // values in [0, K)
  int width = 0, height = 0, channels = 1;
  std::string name;

  int64_t count() const { return labels.empty() ? 0 : images.dim(0); }
  int pixel_count() const { return width * height * channels; }

  Tensor image(int64_t i) const { return images.row(i); }

  Dataset slice(int64_t offset, int64_t n) const {
    Dataset out;
    out.width = width;
    out.height = height;
    out.channels = channels;
    out.name = name;
    int m = pixel_count();
    std::vector<float> d(images.data() + offset * m, images.data() + (offset + n) * m);
    out.images = Tensor({static_cast<int>(n), m}, std::move(d));
    out.labels.assign(labels.begin() + offset, labels.begin() + offset + n);
    return out;
  }

  void validate() const {
    if (images.rank() != 2) throw ValidationError("dataset images must be [N, m]");
    if (images.dim(0) != static_cast<int>(labels.size()))
      throw ValidationError("dataset image count " + std::to_string(images.dim(0)) +
                            " != label count " + std::to_string(labels.size()));
    for (int64_t i = 0; i < images.size(); ++i)
      if (images[i] < 0.0f || images[i] > 1.0f)
        throw ValidationError("dataset pixel out of [0,1]");
  }
};

// One block of noisy replicas: `count` copies with uniform noise in
// [-amplitude, amplitude] per pixel.
struct ReplicaSpec {
  int count = 1;
  float amplitude = 0.0f;
};

struct NoiseSchedule {
  std::vector<ReplicaSpec> replicas;
  uint64_t seed = 0;

  int total_replicas() const {
    int n = 0;
    for (const auto& r : replicas) n += r.count;
    return n;
  }

  void validate() const {
    for (const auto& r : replicas) {
      if (r.amplitude < 0.0f) throw ValidationError("noise amplitude must be >= 0");
      if (r.count < 1) throw ValidationError("replica count must be >= 1");
    }
  }
};

inline float clip01(float v) { return std::min(std::max(v, 0.0f), 1.0f); }

inline Tensor clip01(const Tensor& t) {
  Tensor out = t;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = clip01(out[i]);
  return out;
}

// ---- IDX files (big-endian magic + dims, raw u8 payload) ----

namespace detail {

inline uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError(path + ": truncated IDX header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Loads an IDX image/label pair, scaling pixels by 1/255 into [0,1].
// The image count is cross-checked against the label file.
inline Dataset load_idx(const std::string& image_path, const std::string& label_path,
                        const std::string& name = "idx") {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw IoError("cannot open image file " + image_path);
  uint32_t magic = detail::read_be32(img, image_path);
  if (magic != 0x00000803u)
    throw FormatError(image_path + ": bad IDX image magic (expected 0x803)");
  uint32_t n = detail::read_be32(img, image_path);
  uint32_t rows = detail::read_be32(img, image_path);
  uint32_t cols = detail::read_be32(img, image_path);
  if (rows == 0 || cols == 0 || n == 0) throw FormatError(image_path + ": empty IDX dimensions");
  std::vector<unsigned char> raw(static_cast<size_t>(n) * rows * cols);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(img.gcount()) != raw.size())
    throw FormatError(image_path + ": truncated IDX image payload");

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError("cannot open label file " + label_path);
  uint32_t lmagic = detail::read_be32(lab, label_path);
  if (lmagic != 0x00000801u)
    throw FormatError(label_path + ": bad IDX label magic (expected 0x801)");
  uint32_t ln = detail::read_be32(lab, label_path);
  if (ln != n)
    throw FormatError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(ln) + " labels");
  std::vector<unsigned char> lraw(ln);
  lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lraw.size()));
  if (static_cast<size_t>(lab.gcount()) != lraw.size())
    throw FormatError(label_path + ": truncated IDX label payload");

  Dataset ds;
  ds.width = static_cast<int>(cols);
  ds.height = static_cast<int>(rows);
  ds.channels = 1;
  ds.name = name;
  std::vector<float> px(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) px[i] = static_cast<float>(raw[i]) / 255.0f;
  ds.images = Tensor({static_cast<int>(n), static_cast<int>(rows * cols)}, std::move(px));
  ds.labels.assign(lraw.begin(), lraw.end());
  return ds;
}

inline void save_idx(const Dataset& ds, const std::string& image_path,
                     const std::string& label_path) {
  std::ofstream img(image_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + image_path);
  detail::write_be32(img, 0x00000803u);
  detail::write_be32(img, static_cast<uint32_t>(ds.count()));
  detail::write_be32(img, static_cast<uint32_t>(ds.height));
  detail::write_be32(img, static_cast<uint32_t>(ds.width));
  std::vector<unsigned char> raw(static_cast<size_t>(ds.images.size()));
  for (int64_t i = 0; i < ds.images.size(); ++i)
    raw[static_cast<size_t>(i)] =
        static_cast<unsigned char>(std::lround(clip01(ds.images[i]) * 255.0f));
  img.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!img) throw IoError("short write to " + image_path);

  std::ofstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError("cannot write " + label_path);
  detail::write_be32(lab, 0x00000801u);
  detail::write_be32(lab, static_cast<uint32_t>(ds.labels.size()));
  for (int l : ds.labels) {
    unsigned char b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!lab) throw IoError("short write to " + label_path);
}

// Expands a dataset into noisy replicas. Noise is uniform per pixel in
// [-a, a], added before clipping to [0,1]; labels are carried along. Clean
// copies are produced only by an explicit amplitude-0 entry.
// Replica blocks use independent RNG streams derived from schedule.seed.
inline Dataset replicate_with_noise(const Dataset& ds, const NoiseSchedule& schedule) {
  schedule.validate();
  int64_t n = ds.count();
  int m = ds.pixel_count();
  int total = schedule.total_replicas();
  Dataset out;
  out.width = ds.width;
  out.height = ds.height;
  out.channels = ds.channels;
  out.name = ds.name + "+noise";
  out.images = Tensor({static_cast<int>(total * n), m});
  out.labels.resize(static_cast<size_t>(total * n));
  Rng root(schedule.seed);
  int64_t row = 0;
  int64_t replica_index = 0;
  for (const auto& spec : schedule.replicas) {
    for (int r = 0; r < spec.count; ++r, ++replica_index) {
      Rng stream = root.stream(static_cast<uint64_t>(replica_index));
      float a = spec.amplitude;
      for (int64_t i = 0; i < n; ++i, ++row) {
        const float* src = ds.images.data() + i * m;
        float* dst = out.images.data() + row * m;
        if (a == 0.0f) {
          std::copy(src, src + m, dst);
        } else {
          for (int p = 0; p < m; ++p) dst[p] = clip01(src[p] + stream.uniform(-a, a));
        }
        out.labels[static_cast<size_t>(row)] = ds.labels[static_cast<size_t>(i)];
      }
    }
  }
  return out;
}

// Uniform amplitudes a = step*1 .. step*count, one replica each. This is the
// usual substitute-training schedule shape.
inline NoiseSchedule ladder_schedule(int count, float step, uint64_t seed) {
  NoiseSchedule s;
  s.seed = seed;
  for (int i = 1; i <= count; ++i) s.replicas.push_back({1, step * static_cast<float>(i)});
  return s;
}

// ---- PGM/PPM grid export ----
// Header: magic, '\n', "<width> <height>", '\n', "255", '\n', then raw
// 8-bit samples row-major (1 byte/pixel for P5, 3 for P6). Images are tiled
// row-major into the grid; unused cells stay black.
inline void export_image_grid(const std::vector<Tensor>& images, int rows, int cols, int width,
                              int height, int channels, const std::string& path) {
  if (rows * cols < static_cast<int>(images.size()))
    throw ValidationError("image grid too small: " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " < " + std::to_string(images.size()));
  if (channels != 1 && channels != 3)
    throw ValidationError("image grid supports 1 or 3 channels");
  int64_t m = static_cast<int64_t>(width) * height * channels;
  for (const auto& t : images)
    if (t.size() != m) throw ShapeError("image grid: image size mismatch");

  int gw = cols * width, gh = rows * height;
  std::vector<unsigned char> buf(static_cast<size_t>(gw) * gh * channels, 0);
  for (size_t i = 0; i < images.size(); ++i) {
    int gy = static_cast<int>(i) / cols, gx = static_cast<int>(i) % cols;
    const float* src = images[i].data();
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        for (int c = 0; c < channels; ++c) {
          // channel-planar source, interleaved destination
          float v = channels == 1 ? src[y * width + x] : src[c * height * width + y * width + x];
          size_t o = ((static_cast<size_t>(gy) * height + y) * gw + gx * width + x) *
                         static_cast<size_t>(channels) +
                     static_cast<size_t>(c);
          buf[o] = static_cast<unsigned char>(std::lround(clip01(v) * 255.0f));
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (channels == 1 ? "P5" : "P6") << "\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace sstbench
