// SPDX-License-Identifier: Apache-2.0
#include "mpgd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"
#include "mpgd/rng.hpp"

namespace mpgd::trainer {

namespace {

double grad_norm_sq_of(const std::vector<ad::NodePtr>& params) {
  double acc = 0.0;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p->grad.size(); ++i) acc += p->grad[i] * p->grad[i];
  return acc;
}

/// Mean of per-instance losses over the batch; also reports the AMSE
/// selection stats. Parameters are shared across instance subgraphs so one
/// backward accumulates the whole-batch gradient.
struct BatchLoss {
  ad::NodePtr loss;
  double mean_crit_fraction = 1.0;
  std::size_t fallback_count = 0;
};

BatchLoss batch_loss(const models::Model& model,
                     const std::vector<ad::NodePtr>& params,
                     const std::vector<Example>& batch,
                     const losses::LossSpec& spec) {
  BatchLoss out;
  ad::NodePtr acc;
  double crit_fraction_sum = 0.0;
  for (const Example& ex : batch) {
    auto y = models::forward(model, params, *ex.input);
    auto [loss_i, crit] = losses::compute_loss(spec, y, *ex.target);
    if (crit) {
      crit_fraction_sum += static_cast<double>(crit->indices.size()) /
                           static_cast<double>(ex.target->size());
      if (crit->fallback_all) ++out.fallback_count;
    } else {
      crit_fraction_sum += 1.0;
    }
    acc = acc ? ad::add(acc, loss_i) : loss_i;
  }
  out.loss = ad::mul(acc, 1.0 / static_cast<double>(batch.size()));
  out.mean_crit_fraction = crit_fraction_sum / static_cast<double>(batch.size());
  return out;
}

}  // namespace

void TrainConfig::validate(std::size_t dataset_size) const {
  loss.validate();
  if (batch_size == 0 || batch_size > dataset_size)
    throw Error("train: batch_size must lie in [1, dataset size]");
  if (steps == 0) throw Error("train: steps must be positive");
  if (learning_rate <= 0.0) throw Error("train: learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw Error("train: momentum must lie in [0, 1)");
}

Velocity Velocity::zeros_like(const models::Model& model) {
  Velocity vel;
  vel.v.reserve(model.params.size());
  for (const auto& p : model.params) vel.v.emplace_back(p.value.shape());
  return vel;
}

StepLog train_step(models::Model& model, const std::vector<Example>& batch,
                   const losses::LossSpec& spec, double learning_rate,
                   double momentum, Velocity& velocity, std::size_t step_index,
                   bool log_eta) {
  if (batch.empty()) throw Error("train: empty batch");
  if (velocity.v.size() != model.params.size())
    throw Error("train: velocity/parameter count mismatch");

  auto params = models::make_param_nodes(model);
  const BatchLoss bl = batch_loss(model, params, batch, spec);
  const double loss_value = bl.loss->value[0];
  if (!std::isfinite(loss_value))
    throw Error("train: non-finite loss at step " + std::to_string(step_index) +
                "; the run diverged");
  ad::backward(bl.loss);
  const double update_norm_sq = grad_norm_sq_of(params);

  StepLog log;
  log.step = step_index;
  log.loss = loss_value;
  log.grad_norm_sq = update_norm_sq;
  log.mean_crit_fraction = bl.mean_crit_fraction;
  log.fallback_count = bl.fallback_count;

  if (log_eta && spec.kind == losses::LossKind::kAmse) {
    // Extra full-MSE backward on the same batch to measure
    // eta = ||grad AMSE||^2 / ||grad MSE||^2.
    auto mse_params = models::make_param_nodes(model);
    const BatchLoss ref =
        batch_loss(model, mse_params, batch, losses::LossSpec::mse());
    ad::backward(ref.loss);
    const double mse_norm_sq = grad_norm_sq_of(mse_params);
    log.grad_norm_sq = mse_norm_sq;
    log.topk_grad_norm_sq = update_norm_sq;
    if (mse_norm_sq > 0.0) log.eta = update_norm_sq / mse_norm_sq;
  }

  for (std::size_t p = 0; p < model.params.size(); ++p) {
    Tensor& w = model.params[p].value;
    Tensor& v = velocity.v[p];
    const Tensor& g = params[p]->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= learning_rate * v[i];
    }
  }
  return log;
}

RunRecord train(models::Model& model, const synth::Dataset& dataset,
                const TrainConfig& config) {
  dataset.validate();
  config.validate(dataset.size());

  const auto t0 = std::chrono::steady_clock::now();
  RunRecord record;
  record.config = config;
  record.steps.reserve(config.steps);

  Rng rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches_per_epoch = dataset.size() / config.batch_size;
  std::size_t cursor = batches_per_epoch;  // trigger a shuffle on first use

  Velocity velocity = Velocity::zeros_like(model);
  std::vector<Example> batch(config.batch_size);
  for (std::size_t t = 0; t < config.steps; ++t) {
    if (cursor >= batches_per_epoch) {
      shuffle(order, rng);
      cursor = 0;
    }
    const std::size_t base = cursor * config.batch_size;
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      const std::size_t idx = order[base + i];
      batch[i] = Example{&dataset.inputs[idx], &dataset.targets[idx]};
    }
    ++cursor;
    record.steps.push_back(train_step(model, batch, config.loss,
                                      config.learning_rate, config.momentum,
                                      velocity, t, config.log_eta));
  }

  record.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

void RunRecord::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error("train: cannot write " + file.string());
  out << "step,loss,grad_norm_sq,topk_grad_norm_sq,eta,mean_crit_fraction,"
         "fallback_count\n";
  for (const StepLog& s : steps) {
    out << s.step << ',' << format_double(s.loss) << ','
        << format_double(s.grad_norm_sq) << ',';
    if (s.topk_grad_norm_sq) out << format_double(*s.topk_grad_norm_sq);
    out << ',';
    if (s.eta) out << format_double(*s.eta);
    out << ',' << format_double(s.mean_crit_fraction) << ',' << s.fallback_count
        << '\n';
  }
  if (!out) throw Error("train: write failed for " + file.string());
}

}  // namespace mpgd::trainer
