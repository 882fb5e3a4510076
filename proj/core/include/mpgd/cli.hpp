// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mpgd/losses.hpp"
#include "mpgd/models.hpp"
#include "mpgd/trainer.hpp"

namespace mpgd::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitTheory = 3;

/// Flat "section.key = value" experiment config. '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_text(const std::string& text);
KeyValues parse_config_file(const std::filesystem::path& file);

/// Applies overrides (command-line flags) on top of a config map.
void apply_overrides(KeyValues& kv,
                     const std::vector<std::pair<std::string, std::string>>& overrides);

/// MPGD_OUT env var wins, then the explicit value, then the default.
std::filesystem::path resolve_output_dir(const std::string& explicit_dir,
                                         const std::string& fallback);

struct GenOptions {
  std::string task = "spike";  // spike | scalar
  std::size_t grid = 32;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  std::string out;  // dataset directory
  // spike task knobs
  double smooth_scale = 0.25;
  std::size_t n_spikes = 3;
  double spike_amp = 1.0;
  std::size_t blur_radius = 2;
  // scalar task knobs
  std::size_t dim = 4;
  double outlier_fraction = 0.1;
};

struct TrainOptions {
  std::string data_dir;
  std::string out;
  std::string run_name;  // file prefix; defaults to the loss name
  losses::LossSpec loss = losses::LossSpec::mse();
  models::ModelConfig model;  // seed is overwritten per run seed
  bool model_given = false;   // false: infer a default from the dataset
  trainer::TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
  bool save_model = false;
  std::string metrics_filter;  // comma list; empty keeps every metric
};

struct CompareOptions {
  std::string data_dir;
  std::string out;
  std::vector<losses::LossSpec> variants;
  models::ModelConfig model;
  bool model_given = false;
  trainer::TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct TheoryOptions {
  std::size_t problems = 20;
  std::size_t d = 8;
  std::size_t m = 100;
  std::vector<double> conds = {2.0, 10.0, 50.0, 200.0};
  std::size_t steps = 100;  // descent-lemma steps and theorem horizon T
  double k_fraction = 0.05;
  double step_scale = 1.0;  // != 1 switches to demonstration mode
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::string out;
};

struct EvalOptions {
  std::string data_dir;
  std::string model_dir;
  std::string split = "test";
  std::string out;
};

GenOptions resolve_gen(const KeyValues& kv);
TrainOptions resolve_train(const KeyValues& kv);
CompareOptions resolve_compare(const KeyValues& kv);
TheoryOptions resolve_theory(const KeyValues& kv);
EvalOptions resolve_eval(const KeyValues& kv);

int cmd_gen(const GenOptions& opts);
int cmd_train(const TrainOptions& opts);
int cmd_compare(const CompareOptions& opts);
int cmd_theory(const TheoryOptions& opts);
int cmd_eval(const EvalOptions& opts);

/// Maps exceptions onto the exit-code contract (1 usage, 2 runtime,
/// 3 theory assertion).
int run_guarded(const std::function<int()>& body);

}  // namespace mpgd::cli
