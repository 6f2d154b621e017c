#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sstbench/common.hpp"
#include "sstbench/rng.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

// Reverse-mode differentiable computation graph over float32 tensors.
//
// Node shapes are per-example; the batch dimension is implicit and flows
// through execution. Parameters and loss reductions carry no batch dimension.
// The graph is append-only, so node order is already topological.

enum class Op {
  kInput,
  kLabels,  // integer class labels, bound at execution
  kParam,
  kDense,       // x[in] . W[in,out] + b[out]
  kConv2d,      // x[C,H,W] * K[M,C,kh,kw] + b[M]
  kMaxPool,     // ties break toward the lowest flat index
  kRelu,
  kSoftmax,     // per-example over the last (only) axis
  kDropout,     // inverted dropout, active in training mode only
  kFlatten,
  kThermometer,  // unary input discretization; blocks gradients
  kAdd,
  kMul,
  kScale,       // x * constant
  kSumAll,      // scalar, reduces batch too
  kMeanAll,
  kSoftmaxXent,  // fused softmax + cross-entropy, mean over batch
  kMse,          // mean over every element of (a - b)^2
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kLabels: return "labels";
    case Op::kParam: return "param";
    case Op::kDense: return "dense";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool: return "maxpool";
    case Op::kRelu: return "relu";
    case Op::kSoftmax: return "softmax";
    case Op::kDropout: return "dropout";
    case Op::kFlatten: return "flatten";
    case Op::kThermometer: return "thermometer";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kSumAll: return "sum";
    case Op::kMeanAll: return "mean";
    case Op::kSoftmaxXent: return "softmax_xent";
    case Op::kMse: return "mse";
  }
  return "?";
}

struct Node {
  Op op = Op::kInput;
  std::vector<int> in;   // producer node ids
  Shape shape;           // per-example output shape
  std::string name;

  // op-specific attributes
  int kernel_h = 0, kernel_w = 0, stride = 1;
  bool same_pad = false;
  int pad_h = 0, pad_w = 0;  // resolved at build time
  int out_h = 0, out_w = 0;
  float rate = 0.0f;   // dropout
  float scale = 1.0f;  // kScale
  int levels = 0;      // thermometer
};

class Graph {
 public:
  int input(Shape per_example_shape, const std::string& name = "") {
    Node n;
    n.op = Op::kInput;
    n.shape = std::move(per_example_shape);
    inputs_.push_back(next_id());
    return push(std::move(n), name);
  }

  int labels(const std::string& name = "labels") {
    Node n;
    n.op = Op::kLabels;
    n.shape = {1};
    label_node_ = next_id();
    return push(std::move(n), name);
  }

  int param(Shape shape, const std::string& name) {
    Node n;
    n.op = Op::kParam;
    n.shape = std::move(shape);
    params_.push_back(next_id());
    return push(std::move(n), name);
  }

  int dense(int x, int w, int b, const std::string& name = "") {
    const Node& xs = node(x);
    const Node& ws = node(w);
    const Node& bs = node(b);
    if (xs.shape.size() != 1)
      fail(name, "dense expects a flat input, got " + shape_str(xs.shape));
    if (ws.shape.size() != 2 || ws.shape[0] != xs.shape[0])
      fail(name, "dense weight " + shape_str(ws.shape) + " does not accept input " +
                     shape_str(xs.shape));
    if (bs.shape.size() != 1 || bs.shape[0] != ws.shape[1])
      fail(name, "dense bias " + shape_str(bs.shape) + " does not match units " +
                     std::to_string(ws.shape[1]));
    Node n;
    n.op = Op::kDense;
    n.in = {x, w, b};
    n.shape = {ws.shape[1]};
    return push(std::move(n), name);
  }

  int conv2d(int x, int k, int b, int stride, bool same_pad, const std::string& name = "") {
    const Node& xs = node(x);
    const Node& ks = node(k);
    const Node& bs = node(b);
    if (xs.shape.size() != 3)
      fail(name, "conv2d expects [C,H,W] input, got " + shape_str(xs.shape));
    if (ks.shape.size() != 4 || ks.shape[1] != xs.shape[0])
      fail(name, "conv2d kernel " + shape_str(ks.shape) + " does not accept input " +
                     shape_str(xs.shape));
    if (bs.shape.size() != 1 || bs.shape[0] != ks.shape[0])
      fail(name, "conv2d bias does not match feature maps");
    if (stride < 1) fail(name, "conv2d stride must be >= 1");
    int c = xs.shape[0], h = xs.shape[1], w = xs.shape[2];
    int kh = ks.shape[2], kw = ks.shape[3];
    Node n;
    n.op = Op::kConv2d;
    n.in = {x, k, b};
    n.kernel_h = kh;
    n.kernel_w = kw;
    n.stride = stride;
    n.same_pad = same_pad;
    if (same_pad) {
      n.out_h = (h + stride - 1) / stride;
      n.out_w = (w + stride - 1) / stride;
      n.pad_h = std::max(0, (n.out_h - 1) * stride + kh - h) / 2;
      n.pad_w = std::max(0, (n.out_w - 1) * stride + kw - w) / 2;
    } else {
      if (h < kh || w < kw) fail(name, "conv2d kernel larger than input without padding");
      n.out_h = (h - kh) / stride + 1;
      n.out_w = (w - kw) / stride + 1;
    }
    (void)c;
    n.shape = {ks.shape[0], n.out_h, n.out_w};
    return push(std::move(n), name);
  }

  int maxpool(int x, int k, int stride, const std::string& name = "") {
    const Node& xs = node(x);
    if (xs.shape.size() != 3)
      fail(name, "maxpool expects [C,H,W] input, got " + shape_str(xs.shape));
    if (xs.shape[1] < k || xs.shape[2] < k) fail(name, "maxpool window larger than input");
    Node n;
    n.op = Op::kMaxPool;
    n.in = {x};
    n.kernel_h = n.kernel_w = k;
    n.stride = stride;
    n.out_h = (xs.shape[1] - k) / stride + 1;
    n.out_w = (xs.shape[2] - k) / stride + 1;
    n.shape = {xs.shape[0], n.out_h, n.out_w};
    return push(std::move(n), name);
  }

  int relu(int x, const std::string& name = "") {
    Node n;
    n.op = Op::kRelu;
    n.in = {x};
    n.shape = node(x).shape;
    return push(std::move(n), name);
  }

  int softmax(int x, const std::string& name = "") {
    const Node& xs = node(x);
    if (xs.shape.size() != 1) fail(name, "softmax expects a flat input");
    Node n;
    n.op = Op::kSoftmax;
    n.in = {x};
    n.shape = xs.shape;
    return push(std::move(n), name);
  }

  int dropout(int x, float rate, const std::string& name = "") {
    if (rate < 0.0f || rate >= 1.0f) fail(name, "dropout rate must be in [0,1)");
    Node n;
    n.op = Op::kDropout;
    n.in = {x};
    n.rate = rate;
    n.shape = node(x).shape;
    return push(std::move(n), name);
  }

  int flatten(int x, const std::string& name = "") {
    Node n;
    n.op = Op::kFlatten;
    n.in = {x};
    n.shape = {static_cast<int>(shape_size(node(x).shape))};
    return push(std::move(n), name);
  }

  // k-level unary code per scalar. Spatial input [C,H,W] widens the channel
  // axis to C*k; flat input [m] widens pixel-major to [m*k].
  int thermometer(int x, int k, const std::string& name = "") {
    if (k < 2) fail(name, "thermometer needs at least 2 levels");
    const Node& xs = node(x);
    Node n;
    n.op = Op::kThermometer;
    n.in = {x};
    n.levels = k;
    if (xs.shape.size() == 3)
      n.shape = {xs.shape[0] * k, xs.shape[1], xs.shape[2]};
    else if (xs.shape.size() == 1)
      n.shape = {xs.shape[0] * k};
    else
      fail(name, "thermometer expects [C,H,W] or flat input");
    return push(std::move(n), name);
  }

  int add(int a, int b, const std::string& name = "") { return binary(Op::kAdd, a, b, name); }
  int mul(int a, int b, const std::string& name = "") { return binary(Op::kMul, a, b, name); }

  int scale(int x, float s, const std::string& name = "") {
    Node n;
    n.op = Op::kScale;
    n.in = {x};
    n.scale = s;
    n.shape = node(x).shape;
    return push(std::move(n), name);
  }

  int sum_all(int x, const std::string& name = "") { return reduce(Op::kSumAll, x, name); }
  int mean_all(int x, const std::string& name = "") { return reduce(Op::kMeanAll, x, name); }

  int softmax_xent(int logits, int labels, const std::string& name = "") {
    const Node& ls = node(logits);
    if (ls.shape.size() != 1 || ls.shape[0] < 2) fail(name, "softmax_xent expects [K] logits");
    if (node(labels).op != Op::kLabels) fail(name, "softmax_xent needs a labels node");
    Node n;
    n.op = Op::kSoftmaxXent;
    n.in = {logits, labels};
    n.shape = {1};
    return push(std::move(n), name);
  }

  int mse(int a, int b, const std::string& name = "") {
    if (node(a).shape != node(b).shape) fail(name, "mse operands differ in shape");
    Node n;
    n.op = Op::kMse;
    n.in = {a, b};
    n.shape = {1};
    return push(std::move(n), name);
  }

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<int>& params() const { return params_; }
  const std::vector<int>& inputs() const { return inputs_; }
  int label_node() const { return label_node_; }

  bool is_scalar_node(int id) const {
    const Node& n = node(id);
    return n.op == Op::kSumAll || n.op == Op::kMeanAll || n.op == Op::kSoftmaxXent ||
           n.op == Op::kMse;
  }

 private:
  int next_id() const { return static_cast<int>(nodes_.size()); }

  int push(Node n, const std::string& name) {
    n.name = name.empty() ? std::string(op_name(n.op)) + "#" + std::to_string(next_id()) : name;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int binary(Op op, int a, int b, const std::string& name) {
    if (node(a).shape != node(b).shape)
      fail(name, std::string(op_name(op)) + " operands differ in shape: " +
                     shape_str(node(a).shape) + " vs " + shape_str(node(b).shape));
    Node n;
    n.op = op;
    n.in = {a, b};
    n.shape = node(a).shape;
    return push(std::move(n), name);
  }

  int reduce(Op op, int x, const std::string& name) {
    Node n;
    n.op = op;
    n.in = {x};
    n.shape = {1};
    return push(std::move(n), name);
  }

  [[noreturn]] void fail(const std::string& name, const std::string& msg) const {
    std::string where = name.empty() ? ("node#" + std::to_string(next_id())) : name;
    throw ShapeError(where + ": " + msg);
  }

  std::vector<Node> nodes_;
  std::vector<int> params_;
  std::vector<int> inputs_;
  int label_node_ = -1;
};

enum class Mode { kInfer, kTrain };

// Bindings for one execution: input tensors, labels, and parameter values.
// Pointed-at tensors must outlive the Exec pass.
struct Bindings {
  std::unordered_map<int, const Tensor*> tensors;
  const std::vector<int>* labels = nullptr;

  void bind(int node, const Tensor& t) { tensors[node] = &t; }
};

// One forward/backward pass over a graph. Inference mode is a pure function
// of (bindings, parameters); training mode additionally consumes dropout
// randomness from the supplied stream.
class Exec {
 public:
  explicit Exec(const Graph& g)
      : g_(g), owned_(static_cast<size_t>(g.size())), values_(static_cast<size_t>(g.size()), nullptr),
        grads_(static_cast<size_t>(g.size())), batch_(0) {}

  // Evaluates the ancestor closure of `targets` (the whole graph when empty).
  // Inputs and parameters outside the closure may stay unbound.
  void forward(const Bindings& b, Mode mode = Mode::kInfer, Rng* rng = nullptr,
               const std::vector<int>& targets = {}) {
    mode_ = mode;
    batch_ = -1;
    aux_.assign(static_cast<size_t>(g_.size()), {});
    values_.assign(static_cast<size_t>(g_.size()), nullptr);
    labels_ = b.labels;
    std::vector<bool> needed(static_cast<size_t>(g_.size()), targets.empty());
    if (!targets.empty()) {
      std::vector<int> stack = targets;
      while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (needed[static_cast<size_t>(id)]) continue;
        needed[static_cast<size_t>(id)] = true;
        for (int in : g_.node(id).in) stack.push_back(in);
      }
    }
    for (int id = 0; id < g_.size(); ++id) {
      if (!needed[static_cast<size_t>(id)]) continue;
      const Node& n = g_.node(id);
      switch (n.op) {
        case Op::kInput: {
          auto it = b.tensors.find(id);
          if (it == b.tensors.end()) throw ShapeError(n.name + ": input not bound");
          bind_batched(id, *it->second);
          break;
        }
        case Op::kParam: {
          auto it = b.tensors.find(id);
          if (it == b.tensors.end()) throw ShapeError(n.name + ": parameter not bound");
          if (it->second->shape() != n.shape)
            throw ShapeError(n.name + ": bound parameter shape " + shape_str(it->second->shape()) +
                             " != declared " + shape_str(n.shape));
          values_[static_cast<size_t>(id)] = it->second;
          break;
        }
        case Op::kLabels: {
          if (!labels_) throw ShapeError(n.name + ": labels not bound");
          break;
        }
        default:
          compute(id, rng);
      }
    }
    if (labels_ && batch_ > 0 && static_cast<int64_t>(labels_->size()) != batch_)
      throw ShapeError("labels length does not match batch size");
  }

  const Tensor& value(int id) const {
    const Tensor* t = values_[static_cast<size_t>(id)];
    if (!t) throw Error(g_.node(id).name + ": no value (not computed)");
    return *t;
  }

  // d(output)/d(everything): seeds the given node with a cotangent and sweeps
  // backward. For scalar losses use backward(loss).
  void backward_from(int seed_node, const Tensor& cotangent) {
    if (value(seed_node).shape() != cotangent.shape())
      throw ShapeError("cotangent shape mismatch at " + g_.node(seed_node).name);
    for (auto& t : grads_) t = Tensor();
    grad_at(seed_node) = cotangent;
    for (int id = seed_node; id >= 0; --id) {
      if (grads_[static_cast<size_t>(id)].empty()) continue;
      propagate(id);
    }
  }

  void backward(int loss_node) {
    if (value(loss_node).size() != 1)
      throw ShapeError(g_.node(loss_node).name + ": backward requires a scalar loss node");
    backward_from(loss_node, Tensor::full(value(loss_node).shape(), 1.0f));
  }

  // Gradient tensor for a node; zeros if the node did not influence the loss.
  const Tensor& grad(int id) {
    Tensor& t = grads_[static_cast<size_t>(id)];
    if (t.empty()) t = Tensor(value(id).shape());
    return t;
  }

  int64_t batch() const { return batch_; }

 private:
  struct NodeAux {
    Tensor mask;                    // dropout mask / softmax cache / xent probs
    std::vector<int32_t> indices;   // maxpool argmax
  };

  void bind_batched(int id, const Tensor& t) {
    const Node& n = g_.node(id);
    int64_t per = shape_size(n.shape);
    int64_t nb = -1;
    if (t.rank() == static_cast<int>(n.shape.size()) + 1) {
      bool trailing_ok = true;
      for (size_t d = 0; d < n.shape.size(); ++d)
        trailing_ok &= t.shape()[d + 1] == n.shape[d];
      if (trailing_ok) nb = t.dim(0);
    } else if (t.shape() == n.shape) {
      nb = 1;
    } else if (t.rank() == 2 && n.shape.size() == 3 && t.dim(1) == per) {
      nb = t.dim(0);  // flat rows feeding a spatial input
    }
    if (nb <= 0)
      throw ShapeError(n.name + ": bound tensor " + shape_str(t.shape()) +
                       " does not match per-example shape " + shape_str(n.shape));
    if (batch_ == -1) batch_ = nb;
    if (nb != batch_)
      throw ShapeError(n.name + ": inconsistent batch size across inputs");
    values_[static_cast<size_t>(id)] = &t;
  }

  Tensor& own(int id, Shape per_example, bool batched = true) {
    Shape s;
    if (batched) {
      s.push_back(static_cast<int>(batch_));
      for (int d : per_example) s.push_back(d);
    } else {
      s = std::move(per_example);
    }
    owned_[static_cast<size_t>(id)] = Tensor(std::move(s));
    values_[static_cast<size_t>(id)] = &owned_[static_cast<size_t>(id)];
    return owned_[static_cast<size_t>(id)];
  }

  Tensor& grad_at(int id) {
    Tensor& t = grads_[static_cast<size_t>(id)];
    if (t.empty()) t = Tensor(value(id).shape());
    return t;
  }

  const Tensor& in_val(int id, int slot) const { return value(g_.node(id).in[static_cast<size_t>(slot)]); }

  void compute(int id, Rng* rng);
  void propagate(int id);

  // conv helpers
  void im2col(const float* img, int C, int H, int W, const Node& n, float* col) const;
  void col2im_add(const float* col, int C, int H, int W, const Node& n, float* img) const;

  const Graph& g_;
  std::vector<Tensor> owned_;
  std::vector<const Tensor*> values_;
  std::vector<Tensor> grads_;
  std::vector<NodeAux> aux_;
  const std::vector<int>* labels_ = nullptr;
  int64_t batch_ = 0;
  Mode mode_ = Mode::kInfer;
};

inline void Exec::im2col(const float* img, int C, int H, int W, const Node& n, float* col) const {
  int kh = n.kernel_h, kw = n.kernel_w, s = n.stride;
  int oh = n.out_h, ow = n.out_w;
  int64_t idx = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        for (int y = 0; y < oh; ++y) {
          int iy = y * s + ky - n.pad_h;
          bool row_ok = iy >= 0 && iy < H;
          for (int x = 0; x < ow; ++x) {
            int ix = x * s + kx - n.pad_w;
            col[idx++] = (row_ok && ix >= 0 && ix < W) ? img[(c * H + iy) * W + ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void Exec::col2im_add(const float* col, int C, int H, int W, const Node& n,
                             float* img) const {
  int kh = n.kernel_h, kw = n.kernel_w, s = n.stride;
  int oh = n.out_h, ow = n.out_w;
  int64_t idx = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        for (int y = 0; y < oh; ++y) {
          int iy = y * s + ky - n.pad_h;
          bool row_ok = iy >= 0 && iy < H;
          for (int x = 0; x < ow; ++x) {
            int ix = x * s + kx - n.pad_w;
            if (row_ok && ix >= 0 && ix < W) img[(c * H + iy) * W + ix] += col[idx];
            ++idx;
          }
        }
      }
    }
  }
}

inline void Exec::compute(int id, Rng* rng) {
  const Node& n = g_.node(id);
  if (batch_ <= 0 && n.op != Op::kParam)
    throw ShapeError(n.name + ": no batched input bound before first computation");

  switch (n.op) {
    case Op::kDense: {
      const Tensor& x = in_val(id, 0);
      const Tensor& w = in_val(id, 1);
      const Tensor& b = in_val(id, 2);
      int in = w.dim(0), out = w.dim(1);
      Tensor& y = own(id, n.shape);
      gemm_nn(x.data(), w.data(), y.data(), batch_, in, out);
      parallel_for(batch_, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) axpy(1.0f, b.data(), y.data() + i * out, out);
      }, 4096);
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = in_val(id, 0);
      const Tensor& k = in_val(id, 1);
      const Tensor& b = in_val(id, 2);
      const Node& xs = g_.node(n.in[0]);
      int C = xs.shape[0], H = xs.shape[1], W = xs.shape[2];
      int M = k.dim(0);
      int ckk = C * n.kernel_h * n.kernel_w;
      int64_t ohw = static_cast<int64_t>(n.out_h) * n.out_w;
      int64_t in_sz = static_cast<int64_t>(C) * H * W;
      Tensor& y = own(id, n.shape);
      parallel_for(batch_, [&](int64_t lo, int64_t hi) {
        std::vector<float> col(static_cast<size_t>(ckk) * ohw);
        for (int64_t i = lo; i < hi; ++i) {
          im2col(x.data() + i * in_sz, C, H, W, n, col.data());
          float* out = y.data() + i * M * ohw;
          gemm_nn(k.data(), col.data(), out, M, ckk, ohw);
          for (int m = 0; m < M; ++m) {
            float bv = b[m];
            float* o = out + m * ohw;
            for (int64_t j = 0; j < ohw; ++j) o[j] += bv;
          }
        }
      }, 1);
      break;
    }
    case Op::kMaxPool: {
      const Tensor& x = in_val(id, 0);
      const Node& xs = g_.node(n.in[0]);
      int C = xs.shape[0], H = xs.shape[1], W = xs.shape[2];
      int64_t ohw = static_cast<int64_t>(n.out_h) * n.out_w;
      Tensor& y = own(id, n.shape);
      auto& idxs = aux_[static_cast<size_t>(id)].indices;
      idxs.assign(static_cast<size_t>(batch_ * C * ohw), 0);
      parallel_for(batch_, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          const float* img = x.data() + i * C * H * W;
          float* out = y.data() + i * C * ohw;
          int32_t* am = idxs.data() + i * C * ohw;
          for (int c = 0; c < C; ++c) {
            const float* plane = img + c * H * W;
            for (int y0 = 0; y0 < n.out_h; ++y0) {
              for (int x0 = 0; x0 < n.out_w; ++x0) {
                int best = -1;
                float bv = 0.0f;
                for (int ky = 0; ky < n.kernel_h; ++ky) {
                  int iy = y0 * n.stride + ky;
                  for (int kx = 0; kx < n.kernel_w; ++kx) {
                    int ix = x0 * n.stride + kx;
                    float v = plane[iy * W + ix];
                    int flat = iy * W + ix;
                    if (best < 0 || v > bv) {  // strict > keeps the lowest flat index on ties
                      bv = v;
                      best = flat;
                    }
                  }
                }
                int64_t o = (c * n.out_h + y0) * n.out_w + x0;
                out[o] = bv;
                am[o] = best;
              }
            }
          }
        }
      }, 1);
      break;
    }
    case Op::kRelu: {
      const Tensor& x = in_val(id, 0);
      Tensor& y = own(id, n.shape);
      parallel_for(x.size(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      }, 1 << 16);
      break;
    }
    case Op::kSoftmax: {
      const Tensor& x = in_val(id, 0);
      int k = n.shape[0];
      Tensor& y = own(id, n.shape);
      for (int64_t i = 0; i < batch_; ++i) {
        const float* zi = x.data() + i * k;
        float* yi = y.data() + i * k;
        float mx = zi[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        float sum = 0.0f;
        for (int j = 0; j < k; ++j) {
          yi[j] = std::exp(zi[j] - mx);
          sum += yi[j];
        }
        for (int j = 0; j < k; ++j) yi[j] /= sum;
      }
      break;
    }
    case Op::kDropout: {
      const Tensor& x = in_val(id, 0);
      Tensor& y = own(id, n.shape);
      if (mode_ == Mode::kTrain && n.rate > 0.0f) {
        if (!rng) throw Error(n.name + ": dropout in training mode requires an RNG");
        Tensor& mask = aux_[static_cast<size_t>(id)].mask;
        mask = Tensor(x.shape());
        float keep = 1.0f - n.rate;
        float inv = 1.0f / keep;
        for (int64_t i = 0; i < x.size(); ++i) {
          mask[i] = rng->uniform() < keep ? inv : 0.0f;
          y[i] = x[i] * mask[i];
        }
      } else {
        std::copy(x.data(), x.data() + x.size(), y.data());
      }
      break;
    }
    case Op::kFlatten: {
      const Tensor& x = in_val(id, 0);
      Tensor& y = own(id, n.shape);
      std::copy(x.data(), x.data() + x.size(), y.data());
      break;
    }
    case Op::kThermometer: {
      const Tensor& x = in_val(id, 0);
      const Node& xs = g_.node(n.in[0]);
      int k = n.levels;
      Tensor& y = own(id, n.shape);
      if (xs.shape.size() == 3) {
        int C = xs.shape[0], hw = xs.shape[1] * xs.shape[2];
        for (int64_t i = 0; i < batch_; ++i) {
          const float* xi = x.data() + i * C * hw;
          float* yi = y.data() + i * C * k * hw;
          for (int c = 0; c < C; ++c)
            for (int j = 0; j < k; ++j) {
              float thr = static_cast<float>(j + 1) / static_cast<float>(k);
              float* plane = yi + (c * k + j) * hw;
              const float* src = xi + c * hw;
              for (int p = 0; p < hw; ++p) plane[p] = src[p] >= thr ? 1.0f : 0.0f;
            }
        }
      } else {
        int m = xs.shape[0];
        for (int64_t i = 0; i < batch_; ++i) {
          const float* xi = x.data() + i * m;
          float* yi = y.data() + i * m * k;
          for (int p = 0; p < m; ++p)
            for (int j = 0; j < k; ++j)
              yi[p * k + j] = xi[p] >= static_cast<float>(j + 1) / static_cast<float>(k) ? 1.0f : 0.0f;
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kMul: {
      const Tensor& a = in_val(id, 0);
      const Tensor& b = in_val(id, 1);
      if (a.size() != b.size()) throw ShapeError(n.name + ": operand batch mismatch");
      Tensor& y = own(id, n.shape);
      if (n.op == Op::kAdd)
        for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
      else
        for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
      break;
    }
    case Op::kScale: {
      const Tensor& x = in_val(id, 0);
      Tensor& y = own(id, n.shape);
      for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] * n.scale;
      break;
    }
    case Op::kSumAll:
    case Op::kMeanAll: {
      const Tensor& x = in_val(id, 0);
      float s = 0.0f;
      for (int64_t i = 0; i < x.size(); ++i) s += x[i];
      if (n.op == Op::kMeanAll) s /= static_cast<float>(x.size());
      Tensor& y = own(id, {1}, /*batched=*/false);
      y[0] = s;
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& z = in_val(id, 0);
      if (!labels_) throw ShapeError(n.name + ": labels not bound");
      int k = g_.node(n.in[0]).shape[0];
      Tensor& probs = aux_[static_cast<size_t>(id)].mask;
      probs = Tensor(z.shape());
      float loss = 0.0f;
      for (int64_t i = 0; i < batch_; ++i) {
        int label = (*labels_)[static_cast<size_t>(i)];
        if (label < 0 || label >= k) throw ValidationError(n.name + ": label out of range");
        const float* zi = z.data() + i * k;
        float* pi = probs.data() + i * k;
        float mx = zi[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        float sum = 0.0f;
        for (int j = 0; j < k; ++j) {
          pi[j] = std::exp(zi[j] - mx);
          sum += pi[j];
        }
        for (int j = 0; j < k; ++j) pi[j] /= sum;
        loss += -std::log(std::max(pi[label], 1e-12f));
      }
      Tensor& y = own(id, {1}, /*batched=*/false);
      y[0] = loss / static_cast<float>(batch_);
      break;
    }
    case Op::kMse: {
      const Tensor& a = in_val(id, 0);
      const Tensor& b = in_val(id, 1);
      if (a.size() != b.size()) throw ShapeError(n.name + ": operand batch mismatch");
      double s = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
      }
      Tensor& y = own(id, {1}, /*batched=*/false);
      y[0] = static_cast<float>(s / static_cast<double>(a.size()));
      break;
    }
    default:
      throw Error(n.name + ": unexpected op in compute()");
  }
}

inline void Exec::propagate(int id) {
  const Node& n = g_.node(id);
  const Tensor& gy = grads_[static_cast<size_t>(id)];
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kLabels:
      break;  // leaves
    case Op::kDense: {
      const Tensor& x = in_val(id, 0);
      const Tensor& w = in_val(id, 1);
      int in = w.dim(0), out = w.dim(1);
      Tensor& gx = grad_at(n.in[0]);
      Tensor& gw = grad_at(n.in[1]);
      Tensor& gb = grad_at(n.in[2]);
      gemm_nt(gy.data(), w.data(), gx.data(), batch_, out, in, /*acc=*/true);
      gemm_tn(x.data(), gy.data(), gw.data(), batch_, in, out, /*acc=*/true);
      for (int64_t i = 0; i < batch_; ++i) axpy(1.0f, gy.data() + i * out, gb.data(), out);
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = in_val(id, 0);
      const Tensor& k = in_val(id, 1);
      const Node& xs = g_.node(n.in[0]);
      int C = xs.shape[0], H = xs.shape[1], W = xs.shape[2];
      int M = k.dim(0);
      int ckk = C * n.kernel_h * n.kernel_w;
      int64_t ohw = static_cast<int64_t>(n.out_h) * n.out_w;
      int64_t in_sz = static_cast<int64_t>(C) * H * W;
      Tensor& gx = grad_at(n.in[0]);
      Tensor& gk = grad_at(n.in[1]);
      Tensor& gb = grad_at(n.in[2]);
      int nslots = std::min<int64_t>(ThreadPool::instance().width(), batch_);
      int64_t per = (batch_ + nslots - 1) / nslots;
      // per-slot kernel/bias accumulators merged in fixed order afterwards,
      // so the result does not depend on thread interleaving
      std::vector<Tensor> gk_part(static_cast<size_t>(nslots)), gb_part(static_cast<size_t>(nslots));
      parallel_for(nslots, [&](int64_t slo, int64_t shi) {
        for (int64_t slot = slo; slot < shi; ++slot) {
          int64_t lo = slot * per;
          int64_t hi = std::min<int64_t>(batch_, lo + per);
          if (lo >= hi) continue;
          Tensor& gkp = gk_part[static_cast<size_t>(slot)];
          Tensor& gbp = gb_part[static_cast<size_t>(slot)];
          gkp = Tensor(k.shape());
          gbp = Tensor({M});
          std::vector<float> col(static_cast<size_t>(ckk) * ohw);
          std::vector<float> dcol(static_cast<size_t>(ckk) * ohw);
          for (int64_t i = lo; i < hi; ++i) {
            const float* gyi = gy.data() + i * M * ohw;
            im2col(x.data() + i * in_sz, C, H, W, n, col.data());
            // dK += dY . col^T ; dX = col2im(K^T . dY)
            gemm_nt(gyi, col.data(), gkp.data(), M, ohw, ckk, /*acc=*/true);
            gemm_tn(k.data(), gyi, dcol.data(), M, ckk, ohw, /*acc=*/false);
            col2im_add(dcol.data(), C, H, W, n, gx.data() + i * in_sz);
            for (int m = 0; m < M; ++m) {
              const float* g = gyi + m * ohw;
              float s = 0.0f;
              for (int64_t j = 0; j < ohw; ++j) s += g[j];
              gbp[m] += s;
            }
          }
        }
      }, 1);
      for (int t = 0; t < nslots; ++t) {
        if (!gk_part[static_cast<size_t>(t)].empty())
          axpy(1.0f, gk_part[static_cast<size_t>(t)].data(), gk.data(), gk.size());
        if (!gb_part[static_cast<size_t>(t)].empty())
          axpy(1.0f, gb_part[static_cast<size_t>(t)].data(), gb.data(), gb.size());
      }
      break;
    }
    case Op::kMaxPool: {
      const Node& xs = g_.node(n.in[0]);
      int C = xs.shape[0], H = xs.shape[1], W = xs.shape[2];
      int64_t ohw = static_cast<int64_t>(n.out_h) * n.out_w;
      Tensor& gx = grad_at(n.in[0]);
      const auto& idxs = aux_[static_cast<size_t>(id)].indices;
      for (int64_t i = 0; i < batch_; ++i) {
        const float* g = gy.data() + i * C * ohw;
        float* gxi = gx.data() + i * C * H * W;
        const int32_t* am = idxs.data() + i * C * ohw;
        for (int c = 0; c < C; ++c)
          for (int64_t j = 0; j < ohw; ++j)
            gxi[c * H * W + am[c * ohw + j]] += g[c * ohw + j];
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& x = in_val(id, 0);
      Tensor& gx = grad_at(n.in[0]);
      // subgradient at 0 is 0
      for (int64_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0f) gx[i] += gy[i];
      break;
    }
    case Op::kSoftmax: {
      const Tensor& y = value(id);
      int k = n.shape[0];
      Tensor& gx = grad_at(n.in[0]);
      for (int64_t i = 0; i < batch_; ++i) {
        const float* yi = y.data() + i * k;
        const float* gi = gy.data() + i * k;
        float dotv = dot(yi, gi, k);
        float* gxi = gx.data() + i * k;
        for (int j = 0; j < k; ++j) gxi[j] += yi[j] * (gi[j] - dotv);
      }
      break;
    }
    case Op::kDropout: {
      Tensor& gx = grad_at(n.in[0]);
      const Tensor& mask = aux_[static_cast<size_t>(id)].mask;
      if (mode_ == Mode::kTrain && n.rate > 0.0f) {
        for (int64_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
      } else {
        axpy(1.0f, gy.data(), gx.data(), gy.size());
      }
      break;
    }
    case Op::kFlatten: {
      Tensor& gx = grad_at(n.in[0]);
      axpy(1.0f, gy.data(), gx.data(), gy.size());
      break;
    }
    case Op::kThermometer:
      break;  // discretization blocks gradients
    case Op::kAdd: {
      axpy(1.0f, gy.data(), grad_at(n.in[0]).data(), gy.size());
      axpy(1.0f, gy.data(), grad_at(n.in[1]).data(), gy.size());
      break;
    }
    case Op::kMul: {
      const Tensor& a = in_val(id, 0);
      const Tensor& b = in_val(id, 1);
      Tensor& ga = grad_at(n.in[0]);
      Tensor& gb = grad_at(n.in[1]);
      for (int64_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * b[i];
        gb[i] += gy[i] * a[i];
      }
      break;
    }
    case Op::kScale: {
      Tensor& gx = grad_at(n.in[0]);
      axpy(n.scale, gy.data(), gx.data(), gy.size());
      break;
    }
    case Op::kSumAll: {
      Tensor& gx = grad_at(n.in[0]);
      float g = gy[0];
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
      break;
    }
    case Op::kMeanAll: {
      Tensor& gx = grad_at(n.in[0]);
      float g = gy[0] / static_cast<float>(gx.size());
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& probs = aux_[static_cast<size_t>(id)].mask;
      int k = g_.node(n.in[0]).shape[0];
      Tensor& gz = grad_at(n.in[0]);
      float g = gy[0] / static_cast<float>(batch_);
      for (int64_t i = 0; i < batch_; ++i) {
        int label = (*labels_)[static_cast<size_t>(i)];
        const float* pi = probs.data() + i * k;
        float* gi = gz.data() + i * k;
        for (int j = 0; j < k; ++j) gi[j] += g * (pi[j] - (j == label ? 1.0f : 0.0f));
      }
      break;
    }
    case Op::kMse: {
      const Tensor& a = in_val(id, 0);
      const Tensor& b = in_val(id, 1);
      Tensor& ga = grad_at(n.in[0]);
      Tensor& gb = grad_at(n.in[1]);
      float g = 2.0f * gy[0] / static_cast<float>(a.size());
      for (int64_t i = 0; i < a.size(); ++i) {
        float d = a[i] - b[i];
        ga[i] += g * d;
        gb[i] -= g * d;
      }
      break;
    }
    default:
      throw Error(n.name + ": unexpected op in propagate()");
  }
}

// Central-difference gradient estimate, used as the independent oracle for
// reverse-mode gradients. Evaluates f 2*size times.
inline Tensor finite_diff_grad(const std::function<float(const Tensor&)>& f, const Tensor& point,
                               float h) {
  if (h <= 0.0f) throw ValidationError("finite_diff_grad: step size must be positive");
  Tensor g(point.shape());
  Tensor probe = point;
  for (int64_t i = 0; i < point.size(); ++i) {
    float orig = probe[i];
    probe[i] = orig + h;
    float fp = f(probe);
    probe[i] = orig - h;
    float fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0f * h);
  }
  return g;
}

// Mean over the batch of -log(p(true label)), on probability rows.
// Probabilities are clamped to >= 1e-12 before the log.
inline float cross_entropy_loss(const Tensor& probabilities, const std::vector<int>& labels) {
  if (probabilities.rank() != 2) throw ShapeError("cross_entropy_loss expects [N,K]");
  int64_t n = probabilities.dim(0);
  int k = probabilities.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy_loss: labels length != batch");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= k) throw ValidationError("cross_entropy_loss: label out of range");
    const float* row = probabilities.data() + i * k;
    float rowsum = 0.0f;
    for (int j = 0; j < k; ++j) rowsum += row[j];
    if (std::fabs(rowsum - 1.0f) > 1e-4f)
      throw ValidationError("cross_entropy_loss: probability row does not sum to 1");
    s += -std::log(std::max(row[label], 1e-12f));
  }
  return static_cast<float>(s / static_cast<double>(n));
}

}  // namespace sstbench
