// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpgd/losses.hpp"
#include "mpgd/models.hpp"
#include "mpgd/synthbench.hpp"

namespace mpgd::trainer {

struct TrainConfig {
  losses::LossSpec loss;
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool log_eta = false;  // doubles backward cost when on

  void validate(std::size_t dataset_size) const;
};

/// One optimization step. For AMSE runs with eta logging, grad_norm_sq holds
/// the full-MSE gradient norm and topk_grad_norm_sq the AMSE (update)
/// gradient norm, so eta == topk_grad_norm_sq / grad_norm_sq; otherwise
/// grad_norm_sq is the norm of the gradient actually applied.
struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  std::optional<double> topk_grad_norm_sq;
  std::optional<double> eta;
  double mean_crit_fraction = 1.0;  // mean |E_i| / n_entries over the batch
  std::size_t fallback_count = 0;
};

struct RunRecord {
  TrainConfig config;
  std::vector<StepLog> steps;
  std::map<std::string, double> final_metrics;
  double wall_time = 0.0;

  /// Columns: step,loss,grad_norm_sq,topk_grad_norm_sq,eta,
  /// mean_crit_fraction,fallback_count. Optional fields stay empty.
  void write_csv(const std::filesystem::path& file) const;
};

struct Example {
  const Tensor* input;
  const Tensor* target;
};

/// Per-parameter momentum buffers, aligned with model.params.
struct Velocity {
  std::vector<Tensor> v;

  static Velocity zeros_like(const models::Model& model);
};

/// Forward + loss over the batch, backward, momentum-SGD parameter update:
/// v <- momentum * v + g; w <- w - lr * v.
StepLog train_step(models::Model& model, const std::vector<Example>& batch,
                   const losses::LossSpec& spec, double learning_rate,
                   double momentum, Velocity& velocity, std::size_t step_index = 0,
                   bool log_eta = false);

/// Runs config.steps steps with seeded epoch-shuffled without-replacement
/// batches. Deterministic: (seed, config, dataset) fully determine the record.
RunRecord train(models::Model& model, const synth::Dataset& dataset,
                const TrainConfig& config);

}  // namespace mpgd::trainer
