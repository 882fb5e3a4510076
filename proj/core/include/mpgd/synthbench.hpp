// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mpgd/tensor.hpp"

namespace mpgd::synth {

enum class Split { kTrain, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::string name;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
};

/// Image regression task with rare high-amplitude target pixels: a smooth
/// low-frequency field plus a few sharp Gaussian spikes whose locations are
/// marked in a second input channel. Most entries are easy; the spikes carry
/// nearly all of the worst-case error.
struct SpikeTaskConfig {
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  std::size_t n_samples = 500;
  double smooth_scale = 0.25;  // base-field amplitude, < spike_amp
  std::size_t n_spikes = 3;
  double spike_amp = 1.0;  // target maximum, exact per instance
  std::size_t blur_radius = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Returns 80/20 train/test datasets, deterministic from config.seed.
std::pair<Dataset, Dataset> gen_spike_task(const SpikeTaskConfig& config);

/// Scalar regression y = w* . x with heavy-tailed noise injected on an
/// outlier_fraction subset; noiseless elsewhere.
std::pair<Dataset, Dataset> gen_scalar_task(std::size_t n_samples,
                                            std::size_t dim,
                                            double outlier_fraction,
                                            std::uint64_t seed);

/// Directory with a manifest plus one tensor file per input/target.
/// Round-trips are bit-exact.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mpgd::synth
