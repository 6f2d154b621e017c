#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sstbench/graph.hpp"
#include "sstbench/layers.hpp"
#include "sstbench/rng.hpp"

namespace sstbench {

// A ModelSpec compiled to a computation graph plus its trained parameters.
// Inference entry points are const and safe to call concurrently; training
// mutates parameters and needs exclusive access.
class Model {
 public:
  Model() = default;

  static Model build(const ModelSpec& spec, uint64_t init_seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    m.init_seed_ = init_seed;
    m.compile();
    m.init_params(init_seed);
    return m;
  }

  const ModelSpec& spec() const { return spec_; }
  int num_classes() const { return spec_.num_classes; }
  const Shape& input_shape() const { return spec_.input_shape; }
  int64_t input_dim() const { return shape_size(spec_.input_shape); }
  uint64_t init_seed() const { return init_seed_; }

  const Graph& graph() const { return graph_; }
  int input_node() const { return input_node_; }
  int label_node() const { return label_node_; }
  int logits_node() const { return logits_node_; }
  int probs_node() const { return probs_node_; }
  int ce_loss_node() const { return ce_loss_node_; }
  int mse_target_node() const { return mse_target_node_; }
  int mse_loss_node() const { return mse_loss_node_; }
  const std::vector<int>& param_nodes() const { return param_nodes_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Post-ReLU outputs of fully connected layers, in depth order. Tap point
  // for activation-based detectors.
  int dense_relu_count() const { return static_cast<int>(dense_relu_nodes_.size()); }

  Bindings bind_params() const {
    Bindings b;
    for (size_t i = 0; i < param_nodes_.size(); ++i) b.bind(param_nodes_[i], params_[i]);
    return b;
  }

  Tensor logits(const Tensor& batch) const {
    Exec ex(graph_);
    Bindings b = bind_params();
    b.bind(input_node_, batch);
    ex.forward(b, Mode::kInfer, nullptr, {logits_node_});
    return ex.value(logits_node_);
  }

  Tensor probabilities(const Tensor& batch) const {
    Exec ex(graph_);
    Bindings b = bind_params();
    b.bind(input_node_, batch);
    ex.forward(b, Mode::kInfer, nullptr, {probs_node_});
    return ex.value(probs_node_);
  }

  std::vector<int> predict(const Tensor& batch) const {
    Tensor z = logits(batch);
    int k = spec_.num_classes;
    int64_t n = z.size() / k;
    std::vector<int> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = argmax(z.data() + i * k, k);
    return out;
  }

  // Activations at the tap point (post-ReLU dense output), [N, width].
  Tensor tap_activations(const Tensor& batch, int tap_index) const {
    if (tap_index < 0 || tap_index >= dense_relu_count())
      throw ValidationError("tap index " + std::to_string(tap_index) + " out of range (" +
                            std::to_string(dense_relu_count()) + " dense+relu layers)");
    int node = dense_relu_nodes_[static_cast<size_t>(tap_index)];
    Exec ex(graph_);
    Bindings b = bind_params();
    b.bind(input_node_, batch);
    ex.forward(b, Mode::kInfer, nullptr, {node});
    return ex.value(node);
  }

  // d(dlogits . logits)/d(input): backpropagates an arbitrary logit cotangent
  // to the model input. Returns a tensor shaped like `batch`.
  Tensor input_gradient(const Tensor& batch, const Tensor& dlogits) const {
    Exec ex(graph_);
    Bindings b = bind_params();
    b.bind(input_node_, batch);
    ex.forward(b, Mode::kInfer, nullptr, {logits_node_});
    ex.backward_from(logits_node_, dlogits);
    Tensor g = ex.grad(input_node_);
    return g.reshaped(batch.shape());
  }

 private:
  void compile() {
    input_node_ = graph_.input(spec_.input_shape, "input");
    int cur = input_node_;
    bool flat = spec_.input_shape.size() == 1;
    int dense_idx = 0, conv_idx = 0;
    int last_dense_out = -1;
    for (size_t li = 0; li < spec_.layers.size(); ++li) {
      const LayerSpec& l = spec_.layers[li];
      const Shape& in_shape = graph_.node(cur).shape;
      switch (l.kind) {
        case LayerSpec::Kind::kDense: {
          if (in_shape.size() != 1) cur = graph_.flatten(cur);
          int in_units = graph_.node(cur).shape[0];
          std::string base = "fc" + std::to_string(dense_idx++);
          int w = graph_.param({in_units, l.units}, base + ".w");
          int bb = graph_.param({l.units}, base + ".b");
          cur = graph_.dense(cur, w, bb, base);
          last_dense_out = cur;
          flat = true;
          break;
        }
        case LayerSpec::Kind::kConv2d: {
          if (in_shape.size() != 3)
            throw ValidationError("layer " + std::to_string(li) + " (conv2d): input is flat");
          std::string base = "conv" + std::to_string(conv_idx++);
          int k = graph_.param({l.maps, in_shape[0], l.kernel, l.kernel}, base + ".k");
          int bb = graph_.param({l.maps}, base + ".b");
          cur = graph_.conv2d(cur, k, bb, l.stride, l.same_pad, base);
          break;
        }
        case LayerSpec::Kind::kMaxPool:
          cur = graph_.maxpool(cur, l.kernel, l.stride);
          break;
        case LayerSpec::Kind::kRelu:
          cur = graph_.relu(cur);
          if (last_dense_out >= 0 && graph_.node(cur).in[0] == last_dense_out)
            dense_relu_nodes_.push_back(cur);
          break;
        case LayerSpec::Kind::kDropout:
          cur = graph_.dropout(cur, l.rate);
          break;
        case LayerSpec::Kind::kSoftmax:
          // applied implicitly on top of the logits below
          break;
        case LayerSpec::Kind::kFlatten:
          cur = graph_.flatten(cur);
          flat = true;
          break;
        case LayerSpec::Kind::kThermometerInput:
          cur = graph_.thermometer(cur, l.levels, "thermometer");
          break;
      }
    }
    (void)flat;
    const Shape& out_shape = graph_.node(cur).shape;
    if (out_shape.size() != 1 || out_shape[0] != spec_.num_classes)
      throw ValidationError("model '" + spec_.name + "' produces " + shape_str(out_shape) +
                            ", expected " + std::to_string(spec_.num_classes) + " logits");
    logits_node_ = cur;
    probs_node_ = graph_.softmax(cur, "probs");
    label_node_ = graph_.labels();
    ce_loss_node_ = graph_.softmax_xent(logits_node_, label_node_, "ce_loss");
    mse_target_node_ = graph_.input({spec_.num_classes}, "mse_target");
    mse_loss_node_ = graph_.mse(logits_node_, mse_target_node_, "mse_loss");
    param_nodes_ = graph_.params();
  }

  void init_params(uint64_t seed) {
    Rng rng = Rng(seed).stream("init");
    params_.clear();
    params_.reserve(param_nodes_.size());
    for (int id : param_nodes_) {
      const Node& n = graph_.node(id);
      Tensor t(n.shape);
      bool is_bias = n.shape.size() == 1;
      if (!is_bias) {
        // fan-in-scaled uniform: U(-sqrt(3/fan_in), sqrt(3/fan_in))
        int64_t fan_in = n.shape.size() == 2
                             ? n.shape[0]
                             : static_cast<int64_t>(n.shape[1]) * n.shape[2] * n.shape[3];
        float limit = std::sqrt(3.0f / static_cast<float>(fan_in));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
      }
      params_.push_back(std::move(t));
    }
  }

  ModelSpec spec_;
  Graph graph_;
  std::vector<Tensor> params_;
  std::vector<int> param_nodes_;
  std::vector<int> dense_relu_nodes_;
  int input_node_ = -1;
  int label_node_ = -1;
  int logits_node_ = -1;
  int probs_node_ = -1;
  int ce_loss_node_ = -1;
  int mse_target_node_ = -1;
  int mse_loss_node_ = -1;
  uint64_t init_seed_ = 0;
};

// One forward pass kept alive so callers can read logits and then pull the
// input gradient for an arbitrary cotangent without re-running the forward.
// The batch tensor must outlive the pass.
class ModelPass {
 public:
  ModelPass(const Model& m, const Tensor& batch) : model_(m), ex_(m.graph()) {
    bindings_ = m.bind_params();
    bindings_.bind(m.input_node(), batch);
    ex_.forward(bindings_, Mode::kInfer, nullptr, {m.logits_node()});
  }

  const Tensor& logits() const { return ex_.value(model_.logits_node()); }

  Tensor input_gradient(const Tensor& dlogits) {
    ex_.backward_from(model_.logits_node(), dlogits);
    return ex_.grad(model_.input_node());
  }

 private:
  const Model& model_;
  Exec ex_;
  Bindings bindings_;
};

// ---- checkpoint container ----
// Layout: 8-byte magic, u32 LE version, u32 LE section count, then sections
// of (u32 name length, name bytes, u64 payload length, payload bytes).

namespace ckpt {

constexpr char kMagic[8] = {'S', 'S', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

using Sections = std::map<std::string, std::vector<uint8_t>>;

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}
inline uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint64_t get_u64(const uint8_t* p) {
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(p[i]) << (8 * i);
  return x;
}

inline void write_file(const std::string& path, const Sections& sections) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u64(buf, payload.size());
    buf.insert(buf.end(), payload.begin(), payload.end());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to checkpoint " + path);
}

inline Sections read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw FormatError("corrupt checkpoint (bad magic): " + path);
  uint32_t version = get_u32(buf.data() + 8);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  uint32_t count = get_u32(buf.data() + 12);
  size_t off = 16;
  Sections sections;
  for (uint32_t s = 0; s < count; ++s) {
    if (off + 4 > buf.size()) throw FormatError("corrupt checkpoint (truncated): " + path);
    uint32_t nlen = get_u32(buf.data() + off);
    off += 4;
    if (off + nlen + 8 > buf.size()) throw FormatError("corrupt checkpoint (truncated): " + path);
    std::string name(reinterpret_cast<const char*>(buf.data() + off), nlen);
    off += nlen;
    uint64_t plen = get_u64(buf.data() + off);
    off += 8;
    if (off + plen > buf.size()) throw FormatError("corrupt checkpoint (truncated): " + path);
    sections[name].assign(buf.begin() + static_cast<long>(off),
                          buf.begin() + static_cast<long>(off + plen));
    off += plen;
  }
  return sections;
}

inline std::vector<uint8_t> encode_params(const std::vector<Tensor>& params) {
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u64(out, static_cast<uint64_t>(p.size()));
    size_t off = out.size();
    out.resize(off + static_cast<size_t>(p.size()) * 4);
    std::memcpy(out.data() + off, p.data(), static_cast<size_t>(p.size()) * 4);
  }
  return out;
}

inline void decode_params(const std::vector<uint8_t>& blob, std::vector<Tensor>& params) {
  if (blob.size() < 4) throw FormatError("corrupt checkpoint parameter section");
  uint32_t count = get_u32(blob.data());
  if (count != params.size())
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(params.size()));
  size_t off = 4;
  for (auto& p : params) {
    if (off + 8 > blob.size()) throw FormatError("corrupt checkpoint parameter section");
    uint64_t n = get_u64(blob.data() + off);
    off += 8;
    if (n != static_cast<uint64_t>(p.size()) || off + n * 4 > blob.size())
      throw FormatError("checkpoint parameter size mismatch");
    std::memcpy(p.data(), blob.data() + off, n * 4);
    off += n * 4;
  }
}

inline std::vector<uint8_t> encode_json(const nlohmann::json& j) {
  std::string s = j.dump();
  return std::vector<uint8_t>(s.begin(), s.end());
}

inline nlohmann::json decode_json(const std::vector<uint8_t>& blob, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(blob.begin(), blob.end(), nullptr, false);
  if (j.is_discarded()) throw FormatError("corrupt checkpoint section '" + what + "'");
  return j;
}

}  // namespace ckpt

// Writes spec + parameters; extra sections (defense state, detector) are
// preserved for the caller to fill.
inline void save_model_sections(const Model& m, ckpt::Sections& sections) {
  nlohmann::json meta = m.spec().to_json();
  meta["init_seed"] = m.init_seed();
  sections["spec"] = ckpt::encode_json(meta);
  sections["params"] = ckpt::encode_params(m.params());
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  ckpt::Sections sections;
  save_model_sections(m, sections);
  ckpt::write_file(path, sections);
}

inline Model load_model_sections(const ckpt::Sections& sections) {
  auto it = sections.find("spec");
  if (it == sections.end()) throw FormatError("checkpoint has no spec section");
  nlohmann::json meta = ckpt::decode_json(it->second, "spec");
  ModelSpec spec = ModelSpec::from_json(meta);
  Model m = Model::build(spec, meta.value("init_seed", uint64_t(0)));
  auto pit = sections.find("params");
  if (pit == sections.end()) throw FormatError("checkpoint has no params section");
  ckpt::decode_params(pit->second, m.params());
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  return load_model_sections(ckpt::read_file(path));
}

}  // namespace sstbench
