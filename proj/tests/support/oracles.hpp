// SPDX-License-Identifier: Apache-2.0
//
// Test-only oracles, independent of the implementation paths they check:
// a central finite-difference gradient oracle and a one-sided Jacobi SVD
// for small matrices.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mpgd/autodiff.hpp"
#include "mpgd/tensor.hpp"

namespace mpgd::testing {

/// Builds a scalar graph from parameter leaves. The same builder is used for
/// the analytic pass (ad::parameter leaves) and the numeric pass
/// (ad::constant leaves at perturbed values).
using GraphBuilder =
    std::function<ad::NodePtr(const std::vector<ad::NodePtr>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool ok = true;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
};

inline double forward_value(const GraphBuilder& build,
                            const std::vector<Tensor>& values) {
  std::vector<ad::NodePtr> leaves;
  leaves.reserve(values.size());
  for (const Tensor& v : values) leaves.push_back(ad::constant(v));
  return build(leaves)->value[0];
}

/// rel err = |analytic - central difference| / max(1, |analytic|).
inline GradCheckResult grad_check(const GraphBuilder& build,
                                  const std::vector<Tensor>& init,
                                  double h = 1e-5, double tol = 1e-5) {
  std::vector<ad::NodePtr> params;
  params.reserve(init.size());
  for (const Tensor& v : init) params.push_back(ad::parameter(v));
  ad::NodePtr root = build(params);
  ad::backward(root);

  GradCheckResult result;
  std::vector<Tensor> probe = init;
  for (std::size_t p = 0; p < init.size(); ++p) {
    for (std::size_t i = 0; i < init[p].size(); ++i) {
      const double saved = probe[p][i];
      probe[p][i] = saved + h;
      const double up = forward_value(build, probe);
      probe[p][i] = saved - h;
      const double down = forward_value(build, probe);
      probe[p][i] = saved;
      const double fd = (up - down) / (2.0 * h);
      // Parameters outside the graph never get a grad allocation.
      const double analytic =
          i < params[p]->grad.size() ? params[p]->grad[i] : 0.0;
      const double rel =
          std::fabs(analytic - fd) / std::max(1.0, std::fabs(analytic));
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = p;
        result.worst_entry = i;
      }
    }
  }
  result.ok = result.max_rel_err < tol;
  return result;
}

/// Singular values of a (row-major) m x d matrix by one-sided Jacobi
/// rotations on columns, descending. Independent of the theorylab
/// construction and power iteration.
inline std::vector<double> singular_values_jacobi(const Tensor& A) {
  const std::size_t m = A.shape()[0];
  const std::size_t d = A.shape()[1];
  std::vector<double> cols(m * d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) cols[j * m + i] = A[i * d + j];

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          app += cols[p * m + i] * cols[p * m + i];
          aqq += cols[q * m + i] * cols[q * m + i];
          apq += cols[p * m + i] * cols[q * m + i];
        }
        off = std::max(off, std::fabs(apq) / std::sqrt(std::max(app * aqq, 1e-300)));
        if (std::fabs(apq) <= 1e-15 * std::sqrt(app * aqq)) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double vp = cols[p * m + i];
          const double vq = cols[q * m + i];
          cols[p * m + i] = c * vp - s * vq;
          cols[q * m + i] = s * vp + c * vq;
        }
      }
    if (off < 1e-14) break;
  }

  std::vector<double> sigma(d);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += cols[j * m + i] * cols[j * m + i];
    sigma[j] = std::sqrt(acc);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

}  // namespace mpgd::testing
