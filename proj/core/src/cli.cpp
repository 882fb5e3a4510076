// SPDX-License-Identifier: Apache-2.0
#include "mpgd/cli.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"
#include "mpgd/metrics.hpp"
#include "mpgd/synthbench.hpp"
#include "mpgd/theorylab.hpp"

namespace mpgd::cli {

namespace {

using json = nlohmann::ordered_json;

std::string get_or(const KeyValues& kv, const std::string& key,
                   const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

bool has(const KeyValues& kv, const std::string& key) {
  return kv.find(key) != kv.end();
}

void require_known_keys(const KeyValues& kv, const std::set<std::string>& known) {
  for (const auto& [key, value] : kv)
    if (known.find(key) == known.end())
      throw UsageError("unknown config key '" + key + "'");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& piece : split_list(text)) seeds.push_back(parse_u64(piece));
  if (seeds.empty()) throw UsageError("seeds list must be nonempty");
  return seeds;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& piece : split_list(text)) out.push_back(parse_u64(piece));
  return out;
}

/// Splits on commas that are not nested inside parentheses, so variant lists
/// like "mse, shrinkage(a=10,c=0.2)" keep parameters attached.
std::vector<std::string> split_variant_list(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  int depth = 0;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      const auto piece = trim(current);
      if (!piece.empty()) out.emplace_back(piece);
      current.clear();
    } else {
      current += ch;
    }
  }
  const auto piece = trim(current);
  if (!piece.empty()) out.emplace_back(piece);
  return out;
}

/// Fills per-kind defaults: amse gets the paper threshold, the reweighting
/// losses get their usual comparison settings.
losses::LossSpec finalize_loss(losses::LossKind kind, std::optional<double> lambda,
                               std::optional<double> a, std::optional<double> c) {
  using losses::LossKind;
  losses::LossSpec spec;
  spec.kind = kind;
  switch (kind) {
    case LossKind::kAmse:
      spec.lambda = lambda.value_or(losses::kDefaultLambda);
      if (a || c) throw UsageError("a/c do not apply to amse");
      break;
    case LossKind::kShrinkage:
      spec.a = a.value_or(10.0);
      spec.c = c.value_or(0.2);
      if (lambda) throw UsageError("lambda only applies to amse");
      break;
    case LossKind::kBiased:
      spec.a = a.value_or(20.0);
      spec.c = c.value_or(0.4);
      if (lambda) throw UsageError("lambda only applies to amse");
      break;
    default:
      if (lambda) throw UsageError("lambda only applies to amse");
      if (a || c) throw UsageError("a/c only apply to shrinkage and biased");
  }
  spec.validate();
  return spec;
}

/// Lenient "kind(key=value,...)" parser used for --loss and compare variants.
losses::LossSpec parse_variant(const std::string& text) {
  std::string kind_name = std::string(trim(text));
  std::optional<double> lambda, a, c;
  const auto open = kind_name.find('(');
  if (open != std::string::npos) {
    if (kind_name.back() != ')')
      throw UsageError("malformed loss spec '" + text + "'");
    const std::string inner = kind_name.substr(open + 1, kind_name.size() - open - 2);
    kind_name = std::string(trim(std::string_view(kind_name).substr(0, open)));
    for (const auto& item : split_list(inner)) {
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw UsageError("malformed loss parameter '" + item + "'");
      const auto key = std::string(trim(std::string_view(item).substr(0, eq)));
      const double value = parse_double(trim(std::string_view(item).substr(eq + 1)));
      if (key == "lambda") lambda = value;
      else if (key == "a") a = value;
      else if (key == "c") c = value;
      else throw UsageError("unknown loss parameter '" + key + "'");
    }
  }
  return finalize_loss(losses::loss_kind_from_string(kind_name), lambda, a, c);
}

/// Filesystem- and CSV-safe label, e.g. "biased_a20_c0.4".
std::string variant_label(const losses::LossSpec& spec) {
  std::string label = spec.name();
  if (spec.lambda) label += "_l" + format_double(*spec.lambda);
  if (spec.a) label += "_a" + format_double(*spec.a);
  if (spec.c) label += "_c" + format_double(*spec.c);
  return label;
}

losses::LossSpec loss_from_kv(const KeyValues& kv) {
  std::optional<double> lambda, a, c;
  if (has(kv, "loss.lambda")) lambda = parse_double(kv.at("loss.lambda"));
  if (has(kv, "loss.a")) a = parse_double(kv.at("loss.a"));
  if (has(kv, "loss.c")) c = parse_double(kv.at("loss.c"));
  const std::string kind = get_or(kv, "loss.kind", "mse");
  return finalize_loss(losses::loss_kind_from_string(kind), lambda, a, c);
}

models::ModelConfig model_from_kv(const KeyValues& kv, bool& given) {
  models::ModelConfig mc;
  given = has(kv, "model.kind");
  if (!given) {
    for (const char* key : {"model.widths", "model.channels", "model.kernel",
                            "model.activation"})
      if (has(kv, key))
        throw UsageError(std::string(key) + " requires model.kind");
    return mc;
  }
  mc.kind = models::model_kind_from_string(kv.at("model.kind"));
  if (mc.kind == models::ModelKind::kMlp) {
    if (!has(kv, "model.widths")) throw UsageError("mlp needs model.widths");
    mc.layer_widths = parse_size_list(kv.at("model.widths"));
  } else {
    if (!has(kv, "model.channels")) throw UsageError("fcn needs model.channels");
    mc.channels = parse_size_list(kv.at("model.channels"));
    mc.kernel_size = has(kv, "model.kernel") ? parse_u64(kv.at("model.kernel")) : 3;
  }
  const std::string default_act =
      mc.kind == models::ModelKind::kFcn ? "relu" : "identity";
  mc.activation =
      models::activation_from_string(get_or(kv, "model.activation", default_act));
  mc.validate();
  return mc;
}

trainer::TrainConfig train_from_kv(const KeyValues& kv) {
  trainer::TrainConfig tc;
  tc.steps = parse_u64(get_or(kv, "train.steps", "2000"));
  tc.batch_size = parse_u64(get_or(kv, "train.batch_size", "8"));
  tc.learning_rate = parse_double(get_or(kv, "train.learning_rate", "0.05"));
  tc.momentum = parse_double(get_or(kv, "train.momentum", "0.9"));
  tc.log_eta = parse_bool(get_or(kv, "train.log_eta", "false"));
  return tc;
}

const std::set<std::string> kTrainKeys = {
    "data",         "out",           "name",
    "seeds",        "save_model",    "metrics",
    "loss.kind",    "loss.lambda",   "loss.a",
    "loss.c",       "model.kind",    "model.widths",
    "model.channels", "model.kernel", "model.activation",
    "train.steps",  "train.batch_size", "train.learning_rate",
    "train.momentum", "train.log_eta"};

/// Runs fn(0..n-1) on a small worker pool; rethrows the first failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct LoadedData {
  synth::Dataset train;
  synth::Dataset test;
};

LoadedData load_data(const std::string& data_dir) {
  if (data_dir.empty()) throw UsageError("--data is required");
  const std::filesystem::path root(data_dir);
  if (!std::filesystem::exists(root / "train" / "manifest.txt"))
    throw Error("dataset not found under " + root.string());
  LoadedData d;
  d.train = synth::load_dataset(root / "train");
  d.test = synth::load_dataset(root / "test");
  return d;
}

models::ModelConfig default_model_for(const synth::Dataset& data) {
  const Tensor& in = data.inputs.front();
  const Tensor& target = data.targets.front();
  models::ModelConfig mc;
  if (in.rank() == 3) {
    mc.kind = models::ModelKind::kFcn;
    mc.channels = {in.shape()[0], 8, target.shape()[0]};
    mc.kernel_size = 3;
    mc.activation = models::Activation::kRelu;
  } else {
    mc.kind = models::ModelKind::kMlp;
    mc.layer_widths = {in.size(), target.size()};
    mc.activation = models::Activation::kIdentity;
  }
  return mc;
}

metrics::MetricReport evaluate_model(const models::Model& model,
                                     const synth::Dataset& data, bool* pooled_out) {
  std::vector<Tensor> predictions;
  predictions.reserve(data.size());
  for (const Tensor& x : data.inputs)
    predictions.push_back(models::predict(model, x));
  // Scalar targets carry no per-instance statistics; pool them instead.
  const bool pooled = data.targets.front().size() == 1;
  if (pooled_out) *pooled_out = pooled;
  return pooled ? metrics::evaluate_pooled(predictions, data.targets)
                : metrics::evaluate_mean(predictions, data.targets);
}

std::vector<double> collect_etas(const trainer::RunRecord& record) {
  std::vector<double> etas;
  for (const auto& s : record.steps)
    if (s.eta) etas.push_back(*s.eta);
  return etas;
}

json model_config_json(const models::ModelConfig& mc) {
  json j;
  j["kind"] = models::to_string(mc.kind);
  if (mc.kind == models::ModelKind::kMlp) {
    j["widths"] = mc.layer_widths;
  } else {
    j["channels"] = mc.channels;
    j["kernel"] = mc.kernel_size;
  }
  j["activation"] = models::to_string(mc.activation);
  return j;
}

json run_json(const trainer::RunRecord& record, const models::ModelConfig& mc,
              bool pooled_metrics) {
  json j;
  json cfg;
  for (const auto& [key, value] : record.config.loss.to_kv()) cfg[key] = value;
  cfg["train.steps"] = record.config.steps;
  cfg["train.batch_size"] = record.config.batch_size;
  cfg["train.learning_rate"] = record.config.learning_rate;
  cfg["train.momentum"] = record.config.momentum;
  cfg["train.log_eta"] = record.config.log_eta;
  cfg["train.seed"] = record.config.seed;
  cfg["model"] = model_config_json(mc);
  j["config"] = cfg;
  j["metrics_pooled"] = pooled_metrics;
  j["metrics"] = record.final_metrics;
  const auto etas = collect_etas(record);
  if (!etas.empty()) {
    const theory::EtaSummary s = theory::measure_eta(etas);
    j["eta_summary"] = {{"min", s.min},
                        {"median", s.median},
                        {"max", s.max},
                        {"fraction_ge_one", s.fraction_ge_one},
                        {"count", s.count}};
  }
  j["wall_time"] = record.wall_time;
  return j;
}

void write_json_file(const json& j, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error("write failed for " + file.string());
}

void filter_metrics(std::map<std::string, double>& values,
                    const std::string& metric_list) {
  if (metric_list.empty()) return;
  std::set<std::string> keep;
  for (const auto& name : split_list(metric_list)) keep.insert(name);
  for (auto it = values.begin(); it != values.end();)
    it = keep.count(it->first) ? std::next(it) : values.erase(it);
}

constexpr const char* kMetricColumns[] = {
    "ssim",          "nrmse",        "peak_nrmse_0.005", "peak_nrmse_0.01",
    "peak_nrmse_0.02", "peak_nrmse_0.05", "peak_nrmse_avg", "me", "r2"};

bool metric_higher_is_better(const std::string& name) {
  return name == "ssim" || name == "r2";
}

}  // namespace

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string_view::npos)
      throw Error("config: missing '=' on line " + std::to_string(line_no));
    const auto key = trim(stripped.substr(0, eq));
    const auto value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw Error("config: empty key on line " + std::to_string(line_no));
    kv[std::string(key)] = std::string(value);
  }
  return kv;
}

KeyValues parse_config_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("config: cannot open " + file.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_overrides(
    KeyValues& kv,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, value] : overrides) kv[key] = value;
}

std::filesystem::path resolve_output_dir(const std::string& explicit_dir,
                                         const std::string& fallback) {
  if (const char* env = std::getenv("MPGD_OUT"); env && *env)
    return std::filesystem::path(env);
  if (!explicit_dir.empty()) return std::filesystem::path(explicit_dir);
  return std::filesystem::path(fallback);
}

GenOptions resolve_gen(const KeyValues& kv) {
  require_known_keys(kv, {"task", "out", "gen.grid", "gen.samples", "gen.seed",
                          "gen.smooth_scale", "gen.spikes", "gen.spike_amp",
                          "gen.blur_radius", "gen.dim", "gen.outlier_fraction"});
  GenOptions opts;
  opts.task = get_or(kv, "task", "spike");
  if (opts.task != "spike" && opts.task != "scalar")
    throw UsageError("unknown task '" + opts.task + "'");
  opts.grid = parse_u64(get_or(kv, "gen.grid", "32"));
  opts.samples = parse_u64(get_or(kv, "gen.samples", "500"));
  opts.seed = parse_u64(get_or(kv, "gen.seed", "0"));
  opts.out = get_or(kv, "out", "");
  opts.smooth_scale = parse_double(get_or(kv, "gen.smooth_scale", "0.25"));
  opts.n_spikes = parse_u64(get_or(kv, "gen.spikes", "3"));
  opts.spike_amp = parse_double(get_or(kv, "gen.spike_amp", "1"));
  opts.blur_radius = parse_u64(get_or(kv, "gen.blur_radius", "2"));
  opts.dim = parse_u64(get_or(kv, "gen.dim", "4"));
  opts.outlier_fraction = parse_double(get_or(kv, "gen.outlier_fraction", "0.1"));
  if (opts.samples < 5)
    throw UsageError("--samples must be at least 5 for an 80/20 split");
  return opts;
}

TrainOptions resolve_train(const KeyValues& kv) {
  require_known_keys(kv, kTrainKeys);
  TrainOptions opts;
  opts.data_dir = get_or(kv, "data", "");
  opts.out = get_or(kv, "out", "");
  opts.run_name = get_or(kv, "name", "");
  opts.loss = loss_from_kv(kv);
  opts.model = model_from_kv(kv, opts.model_given);
  opts.train = train_from_kv(kv);
  opts.train.loss = opts.loss;
  opts.seeds = parse_seed_list(get_or(kv, "seeds", "1"));
  opts.save_model = parse_bool(get_or(kv, "save_model", "false"));
  opts.metrics_filter = get_or(kv, "metrics", "");
  return opts;
}

CompareOptions resolve_compare(const KeyValues& kv) {
  std::set<std::string> keys = kTrainKeys;
  keys.insert("compare.variants");
  for (const char* k : {"loss.kind", "loss.lambda", "loss.a", "loss.c", "name",
                        "save_model", "metrics"})
    keys.erase(k);
  require_known_keys(kv, keys);
  CompareOptions opts;
  opts.data_dir = get_or(kv, "data", "");
  opts.out = get_or(kv, "out", "");
  for (const auto& piece :
       split_variant_list(get_or(kv, "compare.variants", "")))
    opts.variants.push_back(parse_variant(piece));
  if (opts.variants.size() < 2)
    throw UsageError("compare needs at least two loss variants");
  opts.model = model_from_kv(kv, opts.model_given);
  opts.train = train_from_kv(kv);
  opts.seeds = parse_seed_list(get_or(kv, "seeds", "1,2,3"));
  return opts;
}

TheoryOptions resolve_theory(const KeyValues& kv) {
  require_known_keys(kv, {"out", "theory.problems", "theory.d", "theory.m",
                          "theory.conds", "theory.steps", "theory.k_fraction",
                          "theory.step_scale", "theory.epsilon", "theory.seed"});
  TheoryOptions opts;
  opts.problems = parse_u64(get_or(kv, "theory.problems", "20"));
  opts.d = parse_u64(get_or(kv, "theory.d", "8"));
  opts.m = parse_u64(get_or(kv, "theory.m", "100"));
  if (has(kv, "theory.conds")) {
    opts.conds.clear();
    for (const auto& piece : split_list(kv.at("theory.conds")))
      opts.conds.push_back(parse_double(piece));
  }
  opts.steps = parse_u64(get_or(kv, "theory.steps", "100"));
  opts.k_fraction = parse_double(get_or(kv, "theory.k_fraction", "0.05"));
  opts.step_scale = parse_double(get_or(kv, "theory.step_scale", "1"));
  opts.epsilon = parse_double(get_or(kv, "theory.epsilon", "1e-8"));
  opts.seed = parse_u64(get_or(kv, "theory.seed", "1"));
  opts.out = get_or(kv, "out", "");
  if (opts.problems == 0) throw UsageError("--problems must be positive");
  if (opts.conds.empty()) throw UsageError("--conds must be nonempty");
  return opts;
}

EvalOptions resolve_eval(const KeyValues& kv) {
  require_known_keys(kv, {"data", "out", "eval.model", "eval.split"});
  EvalOptions opts;
  opts.data_dir = get_or(kv, "data", "");
  opts.model_dir = get_or(kv, "eval.model", "");
  opts.split = get_or(kv, "eval.split", "test");
  opts.out = get_or(kv, "out", "");
  if (opts.model_dir.empty()) throw UsageError("--model is required");
  if (opts.split != "train" && opts.split != "test")
    throw UsageError("--split must be train or test");
  return opts;
}

int cmd_gen(const GenOptions& opts) {
  const auto dir = resolve_output_dir(
      opts.out, "mpgd_out/" + opts.task + "-seed" + std::to_string(opts.seed));
  synth::Dataset train, test;
  if (opts.task == "spike") {
    synth::SpikeTaskConfig config;
    config.grid_h = config.grid_w = opts.grid;
    config.n_samples = opts.samples;
    config.smooth_scale = opts.smooth_scale;
    config.n_spikes = opts.n_spikes;
    config.spike_amp = opts.spike_amp;
    config.blur_radius = opts.blur_radius;
    config.seed = opts.seed;
    std::tie(train, test) = synth::gen_spike_task(config);
  } else {
    std::tie(train, test) =
        synth::gen_scalar_task(opts.samples, opts.dim, opts.outlier_fraction,
                               opts.seed);
  }
  synth::save_dataset(train, dir / "train");
  synth::save_dataset(test, dir / "test");
  std::cout << "[gen] " << dir.string() << " task=" << opts.task
            << " train=" << train.size() << " test=" << test.size()
            << " seed=" << opts.seed << "\n";
  return kExitOk;
}

namespace {

struct RunOutput {
  trainer::RunRecord record;
  models::Model model;
  metrics::MetricReport report;
  bool pooled = false;
};

RunOutput run_one(const synth::Dataset& train_set, const synth::Dataset& test_set,
                  const models::ModelConfig& base_model,
                  const trainer::TrainConfig& base_train, std::uint64_t seed) {
  RunOutput out;
  models::ModelConfig mc = base_model;
  mc.seed = seed;
  out.model = models::init(mc);
  trainer::TrainConfig tc = base_train;
  tc.seed = seed;
  out.record = trainer::train(out.model, train_set, tc);
  out.report = evaluate_model(out.model, test_set, &out.pooled);
  out.record.final_metrics = out.report.to_map();
  return out;
}

}  // namespace

int cmd_train(const TrainOptions& opts) {
  const LoadedData data = load_data(opts.data_dir);
  const models::ModelConfig base_model =
      opts.model_given ? opts.model : default_model_for(data.train);
  const std::string prefix =
      opts.run_name.empty() ? variant_label(opts.loss) : opts.run_name;
  const auto out_dir = resolve_output_dir(opts.out, "mpgd_out/" + prefix);
  std::filesystem::create_directories(out_dir);

  std::vector<RunOutput> results(opts.seeds.size());
  parallel_for(opts.seeds.size(), [&](std::size_t i) {
    results[i] =
        run_one(data.train, data.test, base_model, opts.train, opts.seeds[i]);
  });

  for (std::size_t i = 0; i < opts.seeds.size(); ++i) {
    const std::uint64_t seed = opts.seeds[i];
    RunOutput& r = results[i];
    const std::string stem = prefix + "-seed" + std::to_string(seed);
    r.record.write_csv(out_dir / (stem + ".csv"));
    filter_metrics(r.record.final_metrics, opts.metrics_filter);
    write_json_file(run_json(r.record, base_model, r.pooled),
                    out_dir / (stem + ".json"));
    if (opts.save_model) models::save_model(r.model, out_dir / (stem + "-model"));
    std::cout << "[train] " << stem << " loss=" << format_double(r.record.steps.back().loss)
              << " me=" << format_double(r.report.me)
              << " nrmse=" << format_double(r.report.nrmse) << "\n";
  }
  return kExitOk;
}

int cmd_compare(const CompareOptions& opts) {
  const LoadedData data = load_data(opts.data_dir);
  const models::ModelConfig base_model =
      opts.model_given ? opts.model : default_model_for(data.train);
  const auto out_dir = resolve_output_dir(opts.out, "mpgd_out/compare");
  std::filesystem::create_directories(out_dir);

  struct Cell {
    std::map<std::string, double> values;
  };
  const std::size_t n_variants = opts.variants.size();
  const std::size_t n_seeds = opts.seeds.size();
  std::vector<Cell> cells(n_variants * n_seeds);
  parallel_for(cells.size(), [&](std::size_t i) {
    const std::size_t v = i / n_seeds;
    const std::size_t s = i % n_seeds;
    trainer::TrainConfig tc = opts.train;
    tc.loss = opts.variants[v];
    const RunOutput r =
        run_one(data.train, data.test, base_model, tc, opts.seeds[s]);
    cells[i].values = r.report.to_map();
  });

  // Table: one row per (variant, seed), then one mean row per variant.
  std::ofstream csv(out_dir / "compare.csv");
  if (!csv) throw Error("cannot write compare.csv");
  csv << "variant,seed";
  for (const char* col : kMetricColumns) csv << ',' << col;
  csv << '\n';
  json j;
  j["seeds"] = opts.seeds;
  json results = json::object();
  json means = json::object();
  json wins = json::object();
  for (const char* col : kMetricColumns) wins[col] = json::object();

  std::vector<std::map<std::string, double>> variant_means(n_variants);
  for (std::size_t v = 0; v < n_variants; ++v) {
    const std::string label = variant_label(opts.variants[v]);
    json per_seed = json::object();
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& values = cells[v * n_seeds + s].values;
      csv << label << ',' << opts.seeds[s];
      for (const char* col : kMetricColumns) csv << ',' << format_double(values.at(col));
      csv << '\n';
      per_seed[std::to_string(opts.seeds[s])] = values;
      for (const char* col : kMetricColumns) variant_means[v][col] += values.at(col);
    }
    for (auto& [name, value] : variant_means[v])
      value /= static_cast<double>(n_seeds);
    results[label] = per_seed;
    means[label] = variant_means[v];
  }
  for (std::size_t v = 0; v < n_variants; ++v) {
    csv << variant_label(opts.variants[v]) << ",mean";
    for (const char* col : kMetricColumns)
      csv << ',' << format_double(variant_means[v].at(col));
    csv << '\n';
  }
  if (!csv) throw Error("write failed for compare.csv");
  csv.close();

  // Win counts: per metric, how many seeds each variant was best on.
  for (const char* col : kMetricColumns) {
    std::map<std::string, std::size_t> counts;
    for (std::size_t v = 0; v < n_variants; ++v)
      counts[variant_label(opts.variants[v])] = 0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      double best = cells[s].values.at(col);
      for (std::size_t v = 1; v < n_variants; ++v) {
        const double value = cells[v * n_seeds + s].values.at(col);
        best = metric_higher_is_better(col) ? std::max(best, value)
                                            : std::min(best, value);
      }
      for (std::size_t v = 0; v < n_variants; ++v)
        if (cells[v * n_seeds + s].values.at(col) == best)
          ++counts[variant_label(opts.variants[v])];
    }
    for (const auto& [label, count] : counts) wins[col][label] = count;
  }
  j["results"] = results;
  j["means"] = means;
  j["wins"] = wins;
  write_json_file(j, out_dir / "compare.json");
  std::cout << "[compare] " << n_variants << " variants x " << n_seeds
            << " seeds -> " << (out_dir / "compare.csv").string() << "\n";
  return kExitOk;
}

int cmd_theory(const TheoryOptions& opts) {
  const auto out_dir = resolve_output_dir(opts.out, "mpgd_out/theory");
  std::filesystem::create_directories(out_dir);
  const bool demonstration = opts.step_scale != 1.0;

  json verdict;
  verdict["mode"] = demonstration ? "demonstration" : "verify";
  verdict["step_scale"] = opts.step_scale;
  verdict["epsilon"] = opts.epsilon;
  json problems = json::array();
  std::size_t descent_failures = 0, thm1_failures = 0, thm2_misses = 0;

  for (std::size_t i = 0; i < opts.problems; ++i) {
    const double cond = opts.conds[i % opts.conds.size()];
    const bool consistent = i % 2 == 0;
    const auto p = theory::make_quadratic(opts.d, opts.m, cond, consistent,
                                          opts.seed + i);
    json pj;
    pj["index"] = i;
    pj["d"] = opts.d;
    pj["m"] = opts.m;
    pj["cond"] = cond;
    pj["consistent"] = consistent;
    pj["seed"] = opts.seed + i;
    pj["L"] = p.L;
    pj["l_star"] = p.l_star;

    const auto descent =
        theory::check_descent_lemma(p, opts.steps, opts.step_scale);
    pj["descent_all_hold"] = descent.all_hold();
    if (!descent.all_hold()) {
      pj["descent_first_violation"] = descent.first_violation;
      ++descent_failures;
    }

    if (!demonstration) {
      const auto t1 = theory::check_theorem1(p, opts.steps);
      pj["theorem1"] = {{"min_grad_norm_sq", t1.min_grad_norm_sq},
                        {"bound", t1.bound},
                        {"holds", t1.holds}};
      if (!t1.holds) ++thm1_failures;

      const auto t2 =
          theory::check_theorem2(p, opts.k_fraction, opts.steps, opts.epsilon);
      pj["theorem2"] = {{"min_topk_grad_norm_sq", t2.min_topk_grad_norm_sq},
                        {"bound", t2.bound},
                        {"holds", t2.holds},
                        {"eta_max", t2.eta_max},
                        {"l0_topk_over_l0", t2.l0_topk / std::max(t2.l0_full, 1e-300)},
                        {"l_star_topk_estimate", t2.l_star_topk_estimate},
                        {"T_bound_mse", t2.run.T_bound_mse},
                        {"T_bound_mpgd", t2.run.T_bound_mpgd}};
      if (!t2.holds) ++thm2_misses;
      t2.run.write_csv(out_dir / ("problem_" + std::to_string(i) + ".csv"));

      const auto eta = theory::measure_eta(t2.run);
      pj["eta_summary"] = {{"min", eta.min},
                           {"median", eta.median},
                           {"max", eta.max},
                           {"fraction_ge_one", eta.fraction_ge_one}};
    }
    problems.push_back(pj);
    std::cout << "[theory] problem " << i << " cond=" << cond
              << (consistent ? " consistent" : " inconsistent")
              << " descent=" << (descent.all_hold() ? "ok" : "VIOLATED")
              << "\n";
  }
  verdict["problems"] = problems;
  verdict["descent_failures"] = descent_failures;
  verdict["theorem1_failures"] = thm1_failures;
  verdict["theorem2_misses"] = thm2_misses;
  write_json_file(verdict, out_dir / "verdict.json");

  if (!demonstration && (descent_failures > 0 || thm1_failures > 0))
    throw TheoryError("hard theory assertions failed: descent=" +
                      std::to_string(descent_failures) +
                      " theorem1=" + std::to_string(thm1_failures));
  std::cout << "[theory] " << opts.problems << " problems checked"
            << (demonstration ? " (demonstration mode)" : "") << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOptions& opts) {
  if (opts.data_dir.empty()) throw UsageError("--data is required");
  const std::filesystem::path root(opts.data_dir);
  const synth::Dataset data = synth::load_dataset(root / opts.split);
  const models::Model model = models::load_model(opts.model_dir);
  bool pooled = false;
  const metrics::MetricReport report = evaluate_model(model, data, &pooled);
  const auto out_dir = resolve_output_dir(opts.out, "mpgd_out/eval");
  std::filesystem::create_directories(out_dir);

  const auto values = report.to_map();
  std::ofstream csv(out_dir / "eval.csv");
  if (!csv) throw Error("cannot write eval.csv");
  for (std::size_t c = 0; c < std::size(kMetricColumns); ++c)
    csv << (c ? "," : "") << kMetricColumns[c];
  csv << '\n';
  for (std::size_t c = 0; c < std::size(kMetricColumns); ++c)
    csv << (c ? "," : "") << format_double(values.at(kMetricColumns[c]));
  csv << '\n';
  csv.close();

  json j;
  j["split"] = opts.split;
  j["metrics_pooled"] = pooled;
  j["metrics"] = values;
  write_json_file(j, out_dir / "eval.json");
  std::cout << "[eval] split=" << opts.split << " ssim=" << format_double(report.ssim)
            << " nrmse=" << format_double(report.nrmse)
            << " me=" << format_double(report.me) << "\n";
  return kExitOk;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TheoryError& e) {
    std::cerr << "theory assertion failed: " << e.what() << "\n";
    return kExitTheory;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mpgd::cli
