// SPDX-License-Identifier: Apache-2.0
//
// Command-line front door: dataset generation, training, loss comparisons,
// convergence-theory checks, and metric evaluation. Flags override values
// from --config files key for key.

#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "mpgd/cli.hpp"
#include "mpgd/error.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Registers a string option that lands in the flat config namespace.
void add_kv_option(CLI::App* cmd, const std::string& flag, const std::string& key,
          Overrides& overrides, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
      help);
}

void add_kv_flag(CLI::App* cmd, const std::string& flag, const std::string& key,
               Overrides& overrides, const std::string& help) {
  cmd->add_flag_callback(
      flag, [&overrides, key] { overrides.emplace_back(key, "true"); }, help);
}

mpgd::cli::KeyValues merged(const std::string& config_file, const Overrides& o) {
  mpgd::cli::KeyValues kv;
  if (!config_file.empty()) kv = mpgd::cli::parse_config_file(config_file);
  mpgd::cli::apply_overrides(kv, o);
  return kv;
}

void add_model_train_flags(CLI::App* cmd, Overrides& o) {
  add_kv_option(cmd, "--model", "model.kind", o, "model kind: mlp or fcn");
  add_kv_option(cmd, "--widths", "model.widths", o, "mlp layer widths, e.g. 4,8,1");
  add_kv_option(cmd, "--channels", "model.channels", o, "fcn channels, e.g. 2,8,1");
  add_kv_option(cmd, "--kernel", "model.kernel", o, "fcn kernel size (odd)");
  add_kv_option(cmd, "--activation", "model.activation", o, "relu or identity");
  add_kv_option(cmd, "--steps", "train.steps", o, "optimization steps");
  add_kv_option(cmd, "--batch", "train.batch_size", o, "batch size");
  add_kv_option(cmd, "--lr", "train.learning_rate", o, "learning rate");
  add_kv_option(cmd, "--momentum", "train.momentum", o, "momentum in [0,1)");
  add_kv_flag(cmd, "--log-eta", "train.log_eta", o,
            "log the AMSE/MSE gradient-norm ratio (extra backward pass)");
  add_kv_option(cmd, "--seeds", "seeds", o, "comma-separated run seeds");
  add_kv_option(cmd, "--data", "data", o, "dataset directory (with train/ and test/)");
  add_kv_option(cmd, "--out", "out", o, "output directory (MPGD_OUT overrides)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPGD training and verification workbench"};
  app.require_subcommand(1);

  std::string config_file;
  Overrides o;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_kv_option(gen, "--task", "task", o, "spike or scalar");
  add_kv_option(gen, "--grid", "gen.grid", o, "spike grid side length");
  add_kv_option(gen, "--samples", "gen.samples", o, "number of instances");
  add_kv_option(gen, "--seed", "gen.seed", o, "generator seed");
  add_kv_option(gen, "--smooth-scale", "gen.smooth_scale", o, "base field amplitude");
  add_kv_option(gen, "--spikes", "gen.spikes", o, "spikes per image");
  add_kv_option(gen, "--spike-amp", "gen.spike_amp", o, "spike amplitude (target max)");
  add_kv_option(gen, "--blur-radius", "gen.blur_radius", o, "target blur radius");
  add_kv_option(gen, "--dim", "gen.dim", o, "scalar-task input dimension");
  add_kv_option(gen, "--outlier-fraction", "gen.outlier_fraction", o,
       "scalar-task heavy-tail fraction");
  add_kv_option(gen, "--out", "out", o, "dataset directory (MPGD_OUT overrides)");

  CLI::App* train = app.add_subcommand("train", "train one loss over seeds");
  train->add_option("--config", config_file, "flat key=value config file");
  add_kv_option(train, "--loss", "loss.kind", o,
       "mse, amse, maxerror, shrinkage, or biased");
  add_kv_option(train, "--lambda", "loss.lambda", o, "AMSE selection threshold");
  add_kv_option(train, "--a", "loss.a", o, "shrinkage/biased coefficient a");
  add_kv_option(train, "--c", "loss.c", o, "shrinkage/biased coefficient c");
  add_kv_option(train, "--name", "name", o, "output file prefix");
  add_kv_option(train, "--metrics", "metrics", o, "metric filter for the summary");
  add_kv_flag(train, "--save-model", "save_model", o, "write model checkpoints");
  add_model_train_flags(train, o);

  CLI::App* compare = app.add_subcommand(
      "compare", "train several loss variants and tabulate metrics");
  compare->add_option("--config", config_file, "flat key=value config file");
  std::vector<std::string> variant_flags;
  compare->add_option("--variant", variant_flags,
                      "loss variant, e.g. amse(lambda=0.007); repeatable");
  add_model_train_flags(compare, o);

  CLI::App* theory = app.add_subcommand(
      "theory", "verify the descent lemma and rate bounds on quadratics");
  add_kv_option(theory, "--problems", "theory.problems", o, "number of quadratics");
  add_kv_option(theory, "--d", "theory.d", o, "parameter dimension");
  add_kv_option(theory, "--m", "theory.m", o, "number of residual entries");
  add_kv_option(theory, "--conds", "theory.conds", o, "condition numbers to cycle");
  add_kv_option(theory, "--steps", "theory.steps", o, "GD steps / horizon T");
  add_kv_option(theory, "--k-fraction", "theory.k_fraction", o, "top-k fraction");
  add_kv_option(theory, "--step-scale", "theory.step_scale", o,
       "step size multiple of 1/L; != 1 is demonstration mode");
  add_kv_option(theory, "--epsilon", "theory.epsilon", o, "convergence threshold");
  add_kv_option(theory, "--seed", "theory.seed", o, "base seed");
  add_kv_option(theory, "--out", "out", o, "output directory (MPGD_OUT overrides)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_kv_option(eval, "--data", "data", o, "dataset directory");
  add_kv_option(eval, "--model", "eval.model", o, "model checkpoint directory");
  add_kv_option(eval, "--split", "eval.split", o, "train or test");
  add_kv_option(eval, "--out", "out", o, "output directory (MPGD_OUT overrides)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mpgd::cli::kExitOk : mpgd::cli::kExitUsage;
  }

  return mpgd::cli::run_guarded([&]() -> int {
    if (gen->parsed()) return mpgd::cli::cmd_gen(mpgd::cli::resolve_gen(merged("", o)));
    if (train->parsed())
      return mpgd::cli::cmd_train(mpgd::cli::resolve_train(merged(config_file, o)));
    if (compare->parsed()) {
      auto kv = merged(config_file, o);
      if (!variant_flags.empty()) {
        std::string joined;
        for (const auto& v : variant_flags) {
          if (!joined.empty()) joined += ",";
          joined += v;
        }
        kv["compare.variants"] = joined;
      }
      return mpgd::cli::cmd_compare(mpgd::cli::resolve_compare(kv));
    }
    if (theory->parsed())
      return mpgd::cli::cmd_theory(mpgd::cli::resolve_theory(merged("", o)));
    if (eval->parsed())
      return mpgd::cli::cmd_eval(mpgd::cli::resolve_eval(merged("", o)));
    throw mpgd::UsageError("no subcommand given");
  });
}
