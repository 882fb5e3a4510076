// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpgd/autodiff.hpp"

namespace mpgd::models {

enum class ModelKind { kMlp, kFcn };
enum class Activation { kRelu, kIdentity };

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
ModelKind model_kind_from_string(const std::string& name);
Activation activation_from_string(const std::string& name);

/// Fixed small architectures. An mlp is a dense stack over layer_widths
/// (input width first); an fcn is a stack of same-padded conv layers over
/// channels (input channels first) with square odd kernels and no bias.
/// The activation applies after every layer, the output layer included.
struct ModelConfig {
  ModelKind kind = ModelKind::kMlp;
  std::vector<std::size_t> layer_widths;  // mlp: [in, hidden..., out]
  std::vector<std::size_t> channels;      // fcn: [in, hidden..., out]
  std::size_t kernel_size = 3;            // fcn only, odd
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Param {
  std::string name;
  Tensor value;
};

struct Model {
  ModelConfig config;
  std::vector<Param> params;
};

/// Weights uniform in (-s, s) with s = sqrt(1 / fan_in), biases zero,
/// deterministic from config.seed.
Model init(const ModelConfig& config);

/// Wraps the current parameter values as gradient-carrying leaves, aligned
/// with model.params.
std::vector<ad::NodePtr> make_param_nodes(const Model& model);

/// Builds the prediction graph over the given parameter leaves.
ad::NodePtr forward(const Model& model, const std::vector<ad::NodePtr>& params,
                    const Tensor& x);

/// Inference-only forward (no gradient bookkeeping).
Tensor predict(const Model& model, const Tensor& x);

/// Checkpoint: directory with a model.txt manifest plus one tensor file per
/// parameter.
void save_model(const Model& model, const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

}  // namespace mpgd::models
