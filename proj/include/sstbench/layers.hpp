#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sstbench/common.hpp"
#include "sstbench/tensor.hpp"

namespace sstbench {

// Declarative layer description. Conv parameters follow the "M, KxK, S"
// convention: M feature maps, KxK kernel, stride S.
struct LayerSpec {
  enum class Kind {
    kDense,
    kConv2d,
    kMaxPool,
    kRelu,
    kDropout,
    kSoftmax,
    kFlatten,
    kThermometerInput,
  };

  Kind kind = Kind::kDense;
  int units = 0;        // dense
  int maps = 0;         // conv feature maps
  int kernel = 0;       // conv / maxpool window
  int stride = 1;
  bool same_pad = true;  // conv padding; stride-1 stacks keep their spatial size
  float rate = 0.0f;    // dropout
  int levels = 0;       // thermometer-input

  static LayerSpec dense(int units) {
    LayerSpec l;
    l.kind = Kind::kDense;
    l.units = units;
    return l;
  }
  static LayerSpec conv2d(int maps, int kernel, int stride, bool same_pad = true) {
    LayerSpec l;
    l.kind = Kind::kConv2d;
    l.maps = maps;
    l.kernel = kernel;
    l.stride = stride;
    l.same_pad = same_pad;
    return l;
  }
  static LayerSpec maxpool(int kernel, int stride) {
    LayerSpec l;
    l.kind = Kind::kMaxPool;
    l.kernel = kernel;
    l.stride = stride;
    return l;
  }
  static LayerSpec relu() {
    LayerSpec l;
    l.kind = Kind::kRelu;
    return l;
  }
  static LayerSpec dropout(float rate) {
    LayerSpec l;
    l.kind = Kind::kDropout;
    l.rate = rate;
    return l;
  }
  static LayerSpec softmax() {
    LayerSpec l;
    l.kind = Kind::kSoftmax;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = Kind::kFlatten;
    return l;
  }
  static LayerSpec thermometer_input(int levels) {
    LayerSpec l;
    l.kind = Kind::kThermometerInput;
    l.levels = levels;
    return l;
  }

  void validate() const {
    switch (kind) {
      case Kind::kDense:
        if (units <= 0) throw ValidationError("dense layer needs positive units");
        break;
      case Kind::kConv2d:
        if (maps <= 0 || kernel <= 0 || stride <= 0)
          throw ValidationError("conv layer needs positive maps/kernel/stride");
        break;
      case Kind::kMaxPool:
        if (kernel <= 0 || stride <= 0)
          throw ValidationError("maxpool layer needs positive kernel/stride");
        break;
      case Kind::kDropout:
        if (rate < 0.0f || rate >= 1.0f) throw ValidationError("dropout rate must be in [0,1)");
        break;
      case Kind::kThermometerInput:
        if (levels < 2) throw ValidationError("thermometer-input needs >= 2 levels");
        break;
      default:
        break;
    }
  }
};

inline const char* layer_kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::kDense: return "dense";
    case LayerSpec::Kind::kConv2d: return "conv2d";
    case LayerSpec::Kind::kMaxPool: return "maxpool";
    case LayerSpec::Kind::kRelu: return "relu";
    case LayerSpec::Kind::kDropout: return "dropout";
    case LayerSpec::Kind::kSoftmax: return "softmax";
    case LayerSpec::Kind::kFlatten: return "flatten";
    case LayerSpec::Kind::kThermometerInput: return "thermometer-input";
  }
  return "?";
}

inline LayerSpec::Kind layer_kind_from_name(const std::string& s) {
  if (s == "dense") return LayerSpec::Kind::kDense;
  if (s == "conv2d") return LayerSpec::Kind::kConv2d;
  if (s == "maxpool") return LayerSpec::Kind::kMaxPool;
  if (s == "relu") return LayerSpec::Kind::kRelu;
  if (s == "dropout") return LayerSpec::Kind::kDropout;
  if (s == "softmax") return LayerSpec::Kind::kSoftmax;
  if (s == "flatten") return LayerSpec::Kind::kFlatten;
  if (s == "thermometer-input") return LayerSpec::Kind::kThermometerInput;
  throw ValidationError("unknown layer kind '" + s + "'");
}

// Ordered layer list plus input geometry. The final layer must yield
// num_classes logits (the softmax layer, if present, sits on top of them).
struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per example, [C,H,W] or [m]
  int num_classes = 10;

  void validate() const {
    if (layers.empty()) throw ValidationError("model has no layers");
    if (input_shape.empty()) throw ValidationError("model input shape is empty");
    if (num_classes < 2) throw ValidationError("model needs >= 2 classes");
    for (const auto& l : layers) l.validate();
    for (size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == LayerSpec::Kind::kThermometerInput && i != 0)
        throw ValidationError("thermometer-input must be the first layer");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["input_shape"] = input_shape;
    j["num_classes"] = num_classes;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
      nlohmann::json lj;
      lj["kind"] = layer_kind_name(l.kind);
      switch (l.kind) {
        case LayerSpec::Kind::kDense:
          lj["units"] = l.units;
          break;
        case LayerSpec::Kind::kConv2d:
          lj["maps"] = l.maps;
          lj["kernel"] = l.kernel;
          lj["stride"] = l.stride;
          lj["same_pad"] = l.same_pad;
          break;
        case LayerSpec::Kind::kMaxPool:
          lj["kernel"] = l.kernel;
          lj["stride"] = l.stride;
          break;
        case LayerSpec::Kind::kDropout:
          lj["rate"] = l.rate;
          break;
        case LayerSpec::Kind::kThermometerInput:
          lj["levels"] = l.levels;
          break;
        default:
          break;
      }
      j["layers"].push_back(lj);
    }
    return j;
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.name = j.value("name", "");
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<int>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      l.units = lj.value("units", 0);
      l.maps = lj.value("maps", 0);
      l.kernel = lj.value("kernel", 0);
      l.stride = lj.value("stride", 1);
      l.same_pad = lj.value("same_pad", true);
      l.rate = lj.value("rate", 0.0f);
      l.levels = lj.value("levels", 0);
      spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
  }
};

}  // namespace sstbench
