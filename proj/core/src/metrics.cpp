// SPDX-License-Identifier: Apache-2.0
#include "mpgd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"

namespace mpgd::metrics {

namespace {

void require_same_shape(const Tensor& x, const Tensor& y, const char* op) {
  if (!x.same_shape(y)) throw Error(std::string(op) + ": shape mismatch");
  if (x.empty()) throw Error(std::string(op) + ": empty input");
}

double mean_of(const double* v, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += v[i];
  return acc / static_cast<double>(n);
}

double mse_of(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, double data_range) {
  require_same_shape(x, y, "ssim");
  const std::size_t n = x.size();
  const double mu_x = mean_of(x.data(), n);
  const double mu_y = mean_of(y.data(), n);
  double var_x = 0.0, var_y = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mu_x;
    const double dy = y[i] - mu_y;
    var_x += dx * dx;
    var_y += dy * dy;
    cov += dx * dy;
  }
  var_x /= static_cast<double>(n);
  var_y /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  return ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
         ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
}

double ssim(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "ssim");
  const double range = std::max(y.max_value() - y.min_value(), kDegenerateFloor);
  return ssim(x, y, range);
}

double nrmse(const Tensor& x, const Tensor& y, bool* degenerate) {
  require_same_shape(x, y, "nrmse");
  const double rmse = std::sqrt(mse_of(x.data(), y.data(), x.size()));
  const double range = y.max_value() - y.min_value();
  if (range <= kDegenerateFloor) {
    if (degenerate) *degenerate = true;
    return rmse;
  }
  if (degenerate) *degenerate = false;
  return rmse / range;
}

double peak_nrmse(const Tensor& x, const Tensor& y, double fraction,
                  bool* degenerate) {
  require_same_shape(x, y, "peak_nrmse");
  if (fraction <= 0.0 || fraction > 1.0)
    throw Error("peak_nrmse: fraction must lie in (0, 1]");
  const std::size_t n = y.size();
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&y](std::size_t a, std::size_t b) {
                      if (y[a] != y[b]) return y[a] > y[b];
                      return a < b;
                    });

  double acc = 0.0;
  double sel_max = y[idx[0]], sel_min = y[idx[0]];
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t i = idx[j];
    const double d = x[i] - y[i];
    acc += d * d;
    sel_max = std::max(sel_max, y[i]);
    sel_min = std::min(sel_min, y[i]);
  }
  const double rmse = std::sqrt(acc / static_cast<double>(k));
  const double range = sel_max - sel_min;
  if (range <= kDegenerateFloor) {
    if (degenerate) *degenerate = true;
    return rmse;
  }
  if (degenerate) *degenerate = false;
  return rmse / range;
}

double max_error(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "max_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, std::fabs(x[i] - y[i]));
  return worst / std::max(y.max_value(), kDegenerateFloor);
}

double r_squared(const Tensor& x, const Tensor& y, bool* degenerate) {
  require_same_shape(x, y, "r_squared");
  const std::size_t n = x.size();
  const double mu_y = mean_of(y.data(), n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = x[i] - y[i];
    const double d = y[i] - mu_y;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (degenerate) *degenerate = ss_tot <= kDegenerateFloor;
  return 1.0 - ss_res / std::max(ss_tot, kDegenerateFloor);
}

std::map<std::string, double> MetricReport::to_map() const {
  std::map<std::string, double> m;
  m["ssim"] = ssim;
  m["nrmse"] = nrmse;
  m["me"] = me;
  m["r2"] = r2;
  for (const auto& [fraction, value] : peak_nrmse)
    m["peak_nrmse_" + format_double(fraction)] = value;
  m["peak_nrmse_avg"] = peak_nrmse_avg;
  return m;
}

MetricReport evaluate(const Tensor& x, const Tensor& y) {
  MetricReport report;
  report.ssim = ssim(x, y);
  report.nrmse = nrmse(x, y);
  report.me = max_error(x, y);
  report.r2 = r_squared(x, y);
  double acc = 0.0;
  for (double fraction : kPeakFractions) {
    const double v = peak_nrmse(x, y, fraction);
    report.peak_nrmse[fraction] = v;
    acc += v;
  }
  report.peak_nrmse_avg = acc / static_cast<double>(kPeakFractions.size());
  return report;
}

MetricReport evaluate_mean(const std::vector<Tensor>& predictions,
                           const std::vector<Tensor>& targets) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw Error("metrics: prediction/target count mismatch");
  MetricReport total;
  for (double fraction : kPeakFractions) total.peak_nrmse[fraction] = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const MetricReport r = evaluate(predictions[i], targets[i]);
    total.ssim += r.ssim;
    total.nrmse += r.nrmse;
    total.me += r.me;
    total.r2 += r.r2;
    for (const auto& [fraction, value] : r.peak_nrmse)
      total.peak_nrmse[fraction] += value;
    total.peak_nrmse_avg += r.peak_nrmse_avg;
  }
  const double inv = 1.0 / static_cast<double>(predictions.size());
  total.ssim *= inv;
  total.nrmse *= inv;
  total.me *= inv;
  total.r2 *= inv;
  for (auto& [fraction, value] : total.peak_nrmse) value *= inv;
  total.peak_nrmse_avg *= inv;
  return total;
}

MetricReport evaluate_pooled(const std::vector<Tensor>& predictions,
                             const std::vector<Tensor>& targets) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw Error("metrics: prediction/target count mismatch");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!predictions[i].same_shape(targets[i]))
      throw Error("metrics: shape mismatch in pooled evaluation");
    xs.insert(xs.end(), predictions[i].values().begin(),
              predictions[i].values().end());
    ys.insert(ys.end(), targets[i].values().begin(), targets[i].values().end());
  }
  const std::vector<std::size_t> shape{xs.size()};
  return evaluate(Tensor(shape, std::move(xs)), Tensor(shape, std::move(ys)));
}

}  // namespace mpgd::metrics
