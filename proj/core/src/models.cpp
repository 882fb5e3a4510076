// SPDX-License-Identifier: Apache-2.0
#include "mpgd/models.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"
#include "mpgd/rng.hpp"

namespace mpgd::models {

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

ad::NodePtr activate(const ad::NodePtr& x, Activation act) {
  return act == Activation::kRelu ? ad::max_with_scalar(x, 0.0) : x;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& piece : split_list(s)) out.push_back(parse_u64(piece));
  return out;
}

}  // namespace

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kMlp ? "mlp" : "fcn";
}

std::string to_string(Activation act) {
  return act == Activation::kRelu ? "relu" : "identity";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "mlp") return ModelKind::kMlp;
  if (name == "fcn") return ModelKind::kFcn;
  throw Error("model: unknown kind '" + name + "'");
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw Error("model: unknown activation '" + name + "'");
}

void ModelConfig::validate() const {
  if (kind == ModelKind::kMlp) {
    if (layer_widths.size() < 2)
      throw Error("model: mlp needs an input width and at least one layer");
    for (std::size_t w : layer_widths)
      if (w == 0) throw Error("model: zero-width layer");
  } else {
    if (channels.size() < 2)
      throw Error("model: fcn needs input channels and at least one layer");
    for (std::size_t c : channels)
      if (c == 0) throw Error("model: zero-channel layer");
    if (kernel_size == 0 || kernel_size % 2 == 0)
      throw Error("model: fcn kernel size must be odd");
  }
}

Model init(const ModelConfig& config) {
  config.validate();
  Model model;
  model.config = config;
  Rng rng(config.seed);
  if (config.kind == ModelKind::kMlp) {
    for (std::size_t l = 0; l + 1 < config.layer_widths.size(); ++l) {
      const std::size_t fan_in = config.layer_widths[l];
      const std::size_t fan_out = config.layer_widths[l + 1];
      const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
      model.params.push_back(
          {"w" + std::to_string(l), uniform_tensor({fan_out, fan_in}, s, rng)});
      model.params.push_back({"b" + std::to_string(l), Tensor({fan_out, 1})});
    }
  } else {
    const std::size_t k = config.kernel_size;
    for (std::size_t l = 0; l + 1 < config.channels.size(); ++l) {
      const std::size_t c_in = config.channels[l];
      const std::size_t c_out = config.channels[l + 1];
      const double s = std::sqrt(1.0 / static_cast<double>(c_in * k * k));
      model.params.push_back(
          {"k" + std::to_string(l), uniform_tensor({c_out, c_in, k, k}, s, rng)});
    }
  }
  return model;
}

std::vector<ad::NodePtr> make_param_nodes(const Model& model) {
  std::vector<ad::NodePtr> nodes;
  nodes.reserve(model.params.size());
  for (const auto& p : model.params) nodes.push_back(ad::parameter(p.value));
  return nodes;
}

ad::NodePtr forward(const Model& model, const std::vector<ad::NodePtr>& params,
                    const Tensor& x) {
  const ModelConfig& cfg = model.config;
  if (params.size() != model.params.size())
    throw Error("model: parameter node count mismatch");
  if (cfg.kind == ModelKind::kMlp) {
    if (x.size() != cfg.layer_widths.front())
      throw Error("model: input size does not match mlp input width");
    auto h = ad::reshape(ad::constant(x), {x.size(), 1});
    for (std::size_t l = 0; l + 1 < cfg.layer_widths.size(); ++l) {
      auto z = ad::add(ad::matmul(params[2 * l], h), params[2 * l + 1]);
      h = activate(z, cfg.activation);
    }
    return ad::reshape(h, {cfg.layer_widths.back()});
  }
  if (x.rank() != 3 || x.shape()[0] != cfg.channels.front())
    throw Error("model: input shape does not match fcn channels");
  auto h = ad::constant(x);
  for (std::size_t l = 0; l + 1 < cfg.channels.size(); ++l)
    h = activate(ad::conv2d(h, params[l]), cfg.activation);
  return h;
}

Tensor predict(const Model& model, const Tensor& x) {
  std::vector<ad::NodePtr> consts;
  consts.reserve(model.params.size());
  for (const auto& p : model.params) consts.push_back(ad::constant(p.value));
  return forward(model, consts, x)->value;
}

void save_model(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "model.txt");
  if (!out) throw Error("model: cannot write manifest in " + dir.string());
  out << "kind = " << to_string(model.config.kind) << "\n";
  if (model.config.kind == ModelKind::kMlp)
    out << "widths = " << join_sizes(model.config.layer_widths) << "\n";
  else {
    out << "channels = " << join_sizes(model.config.channels) << "\n";
    out << "kernel = " << model.config.kernel_size << "\n";
  }
  out << "activation = " << to_string(model.config.activation) << "\n";
  out << "seed = " << model.config.seed << "\n";
  out << "params = ";
  for (std::size_t i = 0; i < model.params.size(); ++i)
    out << (i ? "," : "") << model.params[i].name;
  out << "\n";
  if (!out) throw Error("model: manifest write failed in " + dir.string());
  for (const auto& p : model.params) p.value.save(dir / (p.name + ".mpgt"));
}

Model load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.txt");
  if (!in) throw Error("model: missing manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[std::string(trim(std::string_view(line).substr(0, eq)))] =
        std::string(trim(std::string_view(line).substr(eq + 1)));
  }
  Model model;
  model.config.kind = model_kind_from_string(kv.at("kind"));
  if (model.config.kind == ModelKind::kMlp)
    model.config.layer_widths = parse_sizes(kv.at("widths"));
  else {
    model.config.channels = parse_sizes(kv.at("channels"));
    model.config.kernel_size = parse_u64(kv.at("kernel"));
  }
  model.config.activation = activation_from_string(kv.at("activation"));
  model.config.seed = parse_u64(kv.at("seed"));
  model.config.validate();
  for (const auto& name : split_list(kv.at("params")))
    model.params.push_back({name, Tensor::load(dir / (name + ".mpgt"))});

  // Cross-check stored shapes against the manifest architecture.
  const Model fresh = init(model.config);
  if (fresh.params.size() != model.params.size())
    throw Error("model: parameter count does not match architecture");
  for (std::size_t i = 0; i < fresh.params.size(); ++i)
    if (fresh.params[i].name != model.params[i].name ||
        !fresh.params[i].value.same_shape(model.params[i].value))
      throw Error("model: parameter '" + model.params[i].name +
                  "' does not match architecture");
  return model;
}

}  // namespace mpgd::models
