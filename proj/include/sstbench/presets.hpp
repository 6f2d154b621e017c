#pragma once

#include <string>
#include <vector>

#include "sstbench/layers.hpp"
#include "sstbench/train.hpp"

namespace sstbench {

// Architecture presets addressable from the CLI and experiment configs.
// table5..table9 and model1..model4 follow the published tables; the small_*
// entries are desk-scale stand-ins for fast runs.

inline ModelSpec make_preset(const std::string& name) {
  using L = LayerSpec;
  ModelSpec s;
  s.name = name;
  s.num_classes = 10;
  s.input_shape = {1, 28, 28};

  if (name == "table5") {
    // 784-784-784-784-10 MLP, ReLU, dropout 0.25 after each hidden layer
    s.input_shape = {784};
    for (int i = 0; i < 3; ++i) {
      s.layers.push_back(L::dense(784));
      s.layers.push_back(L::relu());
      s.layers.push_back(L::dropout(0.25f));
    }
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "table6") {
    for (int i = 0; i < 3; ++i) {
      s.layers.push_back(L::conv2d(64, 3, 1));
      s.layers.push_back(L::relu());
    }
    s.layers.push_back(L::maxpool(2, 2));
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(2048));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "table7") {
    s.input_shape = {3, 32, 32};
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::maxpool(2, 2));
    s.layers.push_back(L::conv2d(128, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::maxpool(2, 2));
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(4096));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(1024));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "table8") {
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::maxpool(2, 2));
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(2048));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "table9") {
    s.num_classes = 2;
    for (int i = 0; i < 3; ++i) {
      s.layers.push_back(L::conv2d(64, 3, 1));
      s.layers.push_back(L::relu());
    }
    s.layers.push_back(L::maxpool(2, 2));
    s.layers.push_back(L::conv2d(64, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(1024));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(512));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(512));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(2));
    s.layers.push_back(L::softmax());
  } else if (name == "model1") {
    s.layers.push_back(L::dropout(0.2f));
    s.layers.push_back(L::conv2d(64, 8, 2));  // same padding: 28 -> 14
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(128, 6, 2, /*same_pad=*/false));  // 14 -> 5
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(128, 5, 1, /*same_pad=*/false));  // 5 -> 1
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dropout(0.5f));
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "model2") {
    s.layers.push_back(L::conv2d(128, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(64, 3, 2));  // 28 -> 14
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv2d(128, 5, 1, /*same_pad=*/false));  // 14 -> 10
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dropout(0.25f));
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(128));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dropout(0.5f));
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "model3") {
    s.input_shape = {784};
    s.layers.push_back(L::dense(200));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dropout(0.5f));
    s.layers.push_back(L::dense(200));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dropout(0.5f));
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "model4") {
    s.input_shape = {784};
    s.layers.push_back(L::dense(200));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(200));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "small_cnn") {
    s.layers.push_back(L::conv2d(16, 5, 2));  // 28 -> 14
    s.layers.push_back(L::relu());
    s.layers.push_back(L::maxpool(2, 2));  // 14 -> 7
    s.layers.push_back(L::conv2d(32, 3, 1));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::flatten());
    s.layers.push_back(L::dense(128));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else if (name == "small_mlp") {
    s.input_shape = {784};
    s.layers.push_back(L::dense(256));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(128));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::dense(10));
    s.layers.push_back(L::softmax());
  } else {
    throw ValidationError("unknown model preset '" + name + "'");
  }
  s.validate();
  return s;
}

inline std::vector<std::string> preset_names() {
  return {"table5", "table6", "table7", "table8", "table9", "model1",
          "model2", "model3", "model4", "small_cnn", "small_mlp"};
}

// Prepends a k-level thermometer discretization to an existing spec.
inline ModelSpec with_thermometer_input(ModelSpec base, int k) {
  base.layers.insert(base.layers.begin(), LayerSpec::thermometer_input(k));
  base.name += "+thermo" + std::to_string(k);
  // conv stacks see k-fold channels; dense stacks see k-fold features
  base.validate();
  return base;
}

// Published training recipes where the tables give them; Adam 1e-3 elsewhere.
inline TrainRecipe preset_recipe(const std::string& name) {
  TrainRecipe r;
  r.batch_size = 100;
  if (name == "table5") {
    r.optimizer = "sgd";
    r.phases = {{25, 0.1f}};
  } else if (name == "table8" || name == "table9") {
    r.phases = {{3, 1e-3f}, {3, 1e-4f}};
  } else if (name == "model1" || name == "model2" || name == "model3" || name == "model4") {
    r.phases = {{10, 1e-3f}};
  } else {
    r.phases = {{5, 1e-3f}};
  }
  return r;
}

}  // namespace sstbench
