// SPDX-License-Identifier: Apache-2.0
#include "mpgd/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"
#include "mpgd/rng.hpp"

namespace mpgd::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSpikeSigma = 1.0;
constexpr std::size_t kSpikeMargin = 3;
constexpr std::size_t kMinSpikeSeparation = 5;  // chebyshev, keeps maxima distinct

std::uint64_t sample_seed(std::uint64_t base, std::size_t index) {
  return splitmix64(splitmix64(base) ^ (index + 1));
}

std::string pad5(std::size_t i) {
  std::string s = std::to_string(i);
  while (s.size() < 5) s.insert(s.begin(), '0');
  return s;
}

/// Low-frequency cosine mixture rescaled to [0, amplitude].
std::vector<double> base_field(std::size_t h, std::size_t w, double amplitude,
                               Rng& rng) {
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::vector<Wave> waves;
  for (int c = 0; c < 3; ++c) {
    double kx = 0.0, ky = 0.0;
    while (kx == 0.0 && ky == 0.0) {
      kx = static_cast<double>(rng.index(3));
      ky = static_cast<double>(rng.index(3));
    }
    waves.push_back({rng.uniform(0.5, 1.0), kx, ky, rng.uniform(0.0, 2.0 * kPi)});
  }
  std::vector<double> f(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.0;
      for (const Wave& wv : waves)
        v += wv.amp * std::cos(2.0 * kPi *
                                   (wv.kx * static_cast<double>(x) / static_cast<double>(w) +
                                    wv.ky * static_cast<double>(y) / static_cast<double>(h)) +
                               wv.phase);
      f[y * w + x] = v;
    }
  const auto [lo_it, hi_it] = std::minmax_element(f.begin(), f.end());
  const double lo = *lo_it, span = std::max(*hi_it - *lo_it, 1e-9);
  for (double& v : f) v = amplitude * (v - lo) / span;
  return f;
}

/// Separable truncated-Gaussian blur with edge renormalization.
std::vector<double> blur(const std::vector<double>& f, std::size_t h,
                         std::size_t w, std::size_t radius) {
  if (radius == 0) return f;
  const double sigma = std::max(static_cast<double>(radius) / 2.0, 0.5);
  std::vector<double> taps(2 * radius + 1);
  for (std::size_t j = 0; j < taps.size(); ++j) {
    const double d = static_cast<double>(j) - static_cast<double>(radius);
    taps[j] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const auto pass = [&](const std::vector<double>& in, bool horizontal) {
    std::vector<double> out(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0, wsum = 0.0;
        for (std::size_t j = 0; j < taps.size(); ++j) {
          const std::ptrdiff_t off =
              static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(radius);
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + (horizontal ? 0 : off);
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + (horizontal ? off : 0);
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
              xx >= static_cast<std::ptrdiff_t>(w))
            continue;
          acc += taps[j] * in[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          wsum += taps[j];
        }
        out[y * w + x] = acc / wsum;
      }
    return out;
  };
  return pass(pass(f, true), false);
}

}  // namespace

std::string to_string(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw Error("dataset: unknown split '" + name + "'");
}

void Dataset::validate() const {
  if (inputs.empty() || inputs.size() != targets.size())
    throw Error("dataset: empty or mismatched input/target lists");
  for (const Tensor& t : inputs)
    if (!t.same_shape(inputs.front()))
      throw Error("dataset: inputs do not share one shape");
  for (const Tensor& t : targets)
    if (!t.same_shape(targets.front()))
      throw Error("dataset: targets do not share one shape");
}

void SpikeTaskConfig::validate() const {
  if (grid_h < 2 * kSpikeMargin + 2 || grid_w < 2 * kSpikeMargin + 2)
    throw Error("spike task: grid too small");
  if (n_samples == 0) throw Error("spike task: n_samples must be positive");
  if (n_spikes == 0) throw Error("spike task: n_spikes must be at least 1");
  if (spike_amp <= smooth_scale)
    throw Error("spike task: spike_amp must exceed smooth_scale");
}

std::pair<Dataset, Dataset> gen_spike_task(const SpikeTaskConfig& config) {
  config.validate();
  const std::size_t h = config.grid_h, w = config.grid_w;

  Dataset all;
  all.name = "spike";
  all.seed = config.seed;
  for (std::size_t s = 0; s < config.n_samples; ++s) {
    Rng rng(sample_seed(config.seed, s));
    const std::vector<double> base = base_field(h, w, config.smooth_scale, rng);

    // Earlier placements can block every remaining cell, so a failed draw
    // restarts the whole instance layout rather than just the last spike.
    std::vector<std::pair<std::size_t, std::size_t>> centers;
    for (std::size_t restart = 0;; ++restart) {
      if (restart >= 200)
        throw Error("spike task: cannot place spikes, grid too crowded");
      centers.clear();
      bool layout_ok = true;
      while (centers.size() < config.n_spikes && layout_ok) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < 200; ++attempt) {
          const std::size_t cy = rng.index(h);
          const std::size_t cx = rng.index(w);
          if (cy < kSpikeMargin || cy >= h - kSpikeMargin || cx < kSpikeMargin ||
              cx >= w - kSpikeMargin)
            continue;  // bump support would exceed the grid: re-draw
          bool clash = false;
          for (const auto& [py, px] : centers) {
            const std::size_t dy = cy > py ? cy - py : py - cy;
            const std::size_t dx = cx > px ? cx - px : px - cx;
            if (std::max(dy, dx) < kMinSpikeSeparation) clash = true;
          }
          if (clash) continue;
          centers.emplace_back(cy, cx);
          placed = true;
          break;
        }
        layout_ok = placed;
      }
      if (layout_ok) break;
    }

    std::vector<double> target = blur(base, h, w, config.blur_radius);
    std::vector<double> markers(h * w, 0.0);
    for (const auto& [cy, cx] : centers) {
      markers[cy * w + cx] = 1.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - static_cast<double>(cy);
          const double dx = static_cast<double>(x) - static_cast<double>(cx);
          target[y * w + x] += config.spike_amp *
                               std::exp(-(dy * dy + dx * dx) /
                                        (2.0 * kSpikeSigma * kSpikeSigma));
        }
    }
    for (double& v : target) v = std::clamp(v, 0.0, config.spike_amp);

    std::vector<double> input(2 * h * w);
    std::copy(base.begin(), base.end(), input.begin());
    std::copy(markers.begin(), markers.end(), input.begin() + static_cast<std::ptrdiff_t>(h * w));
    all.inputs.emplace_back(std::vector<std::size_t>{2, h, w}, std::move(input));
    all.targets.emplace_back(std::vector<std::size_t>{1, h, w}, std::move(target));
  }

  const std::size_t n_train = (config.n_samples * 4) / 5;
  Dataset train, test;
  train.name = test.name = all.name;
  train.seed = test.seed = config.seed;
  train.split = Split::kTrain;
  test.split = Split::kTest;
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    Dataset& dst = i < n_train ? train : test;
    dst.inputs.push_back(std::move(all.inputs[i]));
    dst.targets.push_back(std::move(all.targets[i]));
  }
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> gen_scalar_task(std::size_t n_samples,
                                            std::size_t dim,
                                            double outlier_fraction,
                                            std::uint64_t seed) {
  if (n_samples < 2) throw Error("scalar task: need at least two samples");
  if (dim == 0) throw Error("scalar task: dim must be positive");
  if (outlier_fraction < 0.0 || outlier_fraction >= 0.5)
    throw Error("scalar task: outlier_fraction must lie in [0, 0.5)");

  Rng wrng(splitmix64(seed));
  std::vector<double> w_true(dim);
  for (double& v : w_true) v = wrng.uniform(-1.0, 1.0);

  Dataset all;
  all.name = "scalar";
  all.seed = seed;
  for (std::size_t s = 0; s < n_samples; ++s) {
    Rng rng(sample_seed(seed, s));
    std::vector<double> x(dim);
    double y = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      x[j] = rng.uniform(-1.0, 1.0);
      y += w_true[j] * x[j];
    }
    if (rng.unit() < outlier_fraction) {
      // Cauchy draw, clamped so downstream metrics stay finite.
      const double t = std::tan(kPi * (rng.unit() - 0.5));
      y += std::clamp(t, -25.0, 25.0);
    }
    all.inputs.emplace_back(std::vector<std::size_t>{dim}, std::move(x));
    all.targets.push_back(Tensor::scalar(y));
  }

  const std::size_t n_train = (n_samples * 4) / 5;
  Dataset train, test;
  train.name = test.name = all.name;
  train.seed = test.seed = seed;
  train.split = Split::kTrain;
  test.split = Split::kTest;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Dataset& dst = i < n_train ? train : test;
    dst.inputs.push_back(std::move(all.inputs[i]));
    dst.targets.push_back(std::move(all.targets[i]));
  }
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw Error("dataset: cannot write manifest in " + dir.string());
  out << "name = " << dataset.name << "\n";
  out << "seed = " << dataset.seed << "\n";
  out << "split = " << to_string(dataset.split) << "\n";
  out << "count = " << dataset.size() << "\n";
  if (!out) throw Error("dataset: manifest write failed in " + dir.string());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    dataset.inputs[i].save(dir / ("input_" + pad5(i) + ".mpgt"));
    dataset.targets[i].save(dir / ("target_" + pad5(i) + ".mpgt"));
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw Error("dataset: missing manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[std::string(trim(std::string_view(line).substr(0, eq)))] =
        std::string(trim(std::string_view(line).substr(eq + 1)));
  }
  Dataset dataset;
  dataset.name = kv.at("name");
  dataset.seed = parse_u64(kv.at("seed"));
  dataset.split = split_from_string(kv.at("split"));
  const std::size_t count = parse_u64(kv.at("count"));
  for (std::size_t i = 0; i < count; ++i) {
    dataset.inputs.push_back(Tensor::load(dir / ("input_" + pad5(i) + ".mpgt")));
    dataset.targets.push_back(Tensor::load(dir / ("target_" + pad5(i) + ".mpgt")));
  }
  dataset.validate();
  return dataset;
}

}  // namespace mpgd::synth
