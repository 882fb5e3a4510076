// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <vector>

#include "mpgd/tensor.hpp"

namespace mpgd::metrics {

/// Ground-truth fractions at which peak NRMSE is reported.
constexpr std::array<double, 4> kPeakFractions = {0.005, 0.01, 0.02, 0.05};

/// Below this, a normalizing range or variance counts as degenerate.
constexpr double kDegenerateFloor = 1e-12;

/// Global (whole-image) structural similarity with the given dynamic range L;
/// c1 = (0.01 L)^2, c2 = (0.03 L)^2.
double ssim(const Tensor& x, const Tensor& y, double data_range);

/// data_range defaults to max(y) - min(y) of the ground truth, floored.
double ssim(const Tensor& x, const Tensor& y);

/// sqrt(MSE(x, y)) / (max y - min y). A constant ground truth is degenerate:
/// the raw RMSE is reported and *degenerate set.
double nrmse(const Tensor& x, const Tensor& y, bool* degenerate = nullptr);

/// NRMSE restricted to the k = max(1, floor(fraction * n)) entries with the
/// largest ground-truth values (ties broken by lower flat index), normalized
/// by the selected ground-truth range.
double peak_nrmse(const Tensor& x, const Tensor& y, double fraction,
                  bool* degenerate = nullptr);

/// max |x - y| / max y, with max y floored.
double max_error(const Tensor& x, const Tensor& y);

/// 1 - sum (x_i - y_i)^2 / sum (y_i - mean y)^2.
double r_squared(const Tensor& x, const Tensor& y, bool* degenerate = nullptr);

struct MetricReport {
  double ssim = 0.0;
  double nrmse = 0.0;
  double me = 0.0;
  double r2 = 0.0;
  std::map<double, double> peak_nrmse;  // fraction -> value
  double peak_nrmse_avg = 0.0;

  /// name -> value flattening used by RunRecord summaries and CSV tables.
  std::map<std::string, double> to_map() const;
};

/// All metrics on a single prediction/ground-truth pair.
MetricReport evaluate(const Tensor& x, const Tensor& y);

/// Per-instance reports averaged over a set of pairs.
MetricReport evaluate_mean(const std::vector<Tensor>& predictions,
                           const std::vector<Tensor>& targets);

/// Entries of all pairs pooled into one vector before evaluation; the right
/// interface when instances are single scalars.
MetricReport evaluate_pooled(const std::vector<Tensor>& predictions,
                             const std::vector<Tensor>& targets);

}  // namespace mpgd::metrics
