// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mpgd/tensor.hpp"

namespace mpgd::theory {

/// Least-squares test bed l(w) = (1/m) ||A w - b||^2 with analytically known
/// gradient Lipschitz constant L = 2 lambda_max(A^T A) / m and minimum l*.
struct QuadraticProblem {
  Tensor A;   // m x d
  Tensor b;   // m
  std::size_t n_entries = 0;  // m
  double L = 0.0;
  double l_star = 0.0;
  Tensor w0;  // d

  double loss(const Tensor& w) const;
  Tensor residual(const Tensor& w) const;  // A w - b
  Tensor gradient(const Tensor& w) const;  // (2/m) A^T (A w - b)
};

/// A = U diag(sigma) V^T from random orthogonal factors with singular values
/// spaced geometrically from cond down to 1. consistent puts b in range(A)
/// so l* = 0 exactly; otherwise l* comes from the least-squares residual.
/// lambda_max is found by power iteration to relative tolerance 1e-10.
QuadraticProblem make_quadratic(std::size_t d, std::size_t m, double cond,
                                bool consistent, std::uint64_t seed);

/// Wraps an explicit system; L and l* are computed, w0 is taken as given.
QuadraticProblem make_quadratic_from(Tensor A, Tensor b, Tensor w0);

/// Per-step observations of a (top-k) gradient descent run. loss/grad norms
/// are measured at w_t before the update.
struct TraceStep {
  double loss_full = 0.0;
  double loss_topk = 0.0;
  double grad_norm_sq = 0.0;       // full gradient
  double topk_grad_norm_sq = 0.0;  // gradient of the top-k loss
  double eta = 1.0;                // topk_grad_norm_sq / grad_norm_sq
};

/// Gradient descent on the top-k loss (k largest per-entry squared residuals,
/// re-selected every step, ties to the lower index). The step is 1/L of the
/// objective being descended: the problem constant when k = m, else the
/// current selection's own Lipschitz constant 2 lambda_max(A_S^T A_S) / k.
/// step_scale and l_scale multiply into that step. k = m reproduces plain
/// gradient descent bit-for-bit.
std::vector<TraceStep> run_topk_gd(const QuadraticProblem& p, std::size_t k,
                                   std::size_t steps, double step_scale = 1.0,
                                   double l_scale = 1.0);

/// Checks l_t <= l_{t-1} - (1 / 2L) ||grad l_{t-1}||^2 at every step of a
/// plain GD run with step 1/L (times the overrides), with relative slack
/// 1e-9. l_scale > 1 emulates an overestimated Lipschitz constant.
struct DescentReport {
  std::vector<bool> holds;  // per optimization step, size == steps
  std::size_t first_violation = 0;

  bool all_hold() const;
};
DescentReport check_descent_lemma(const QuadraticProblem& p, std::size_t steps,
                                  double step_scale = 1.0, double l_scale = 1.0);

/// min_{t < T} ||grad l_t||^2 against the bound 2 L (l_0 - l*) / T.
struct Theorem1Report {
  double min_grad_norm_sq = 0.0;
  double bound = 0.0;
  bool holds = false;
};
Theorem1Report check_theorem1(const QuadraticProblem& p, std::size_t T);

/// Serializable trace plus the step-count bounds at the convergence
/// threshold epsilon.
struct TheoryRun {
  QuadraticProblem problem;
  double k_fraction = 1.0;
  double epsilon = 1e-8;
  double T_bound_mse = 0.0;   // 2 eta L (l_0 - l*) / epsilon
  double T_bound_mpgd = 0.0;  // 2 eta L (l_0 - l*_topK) / epsilon
  std::vector<TraceStep> steps;

  /// Columns: t,l_t,grad_norm_sq,topk_grad_norm_sq,eta (l_t = full loss).
  void write_csv(const std::filesystem::path& file) const;
};

/// Reported (not hard-asserted) bound for the top-k run:
/// min_t ||grad l_topK,t||^2 <= 2 eta_max L (l_0 - l*_topK) / T, with
/// l*_topK estimated as the smallest top-k loss over a 10x longer
/// reference run.
struct Theorem2Report {
  double min_topk_grad_norm_sq = 0.0;
  double bound = 0.0;
  bool holds = false;
  double eta_max = 1.0;
  double l0_full = 0.0;
  double l0_topk = 0.0;  // l_{0,topK}, for the l0 approximation ratio
  double l_star_topk_estimate = 0.0;
  TheoryRun run;
};
Theorem2Report check_theorem2(const QuadraticProblem& p, double k_fraction,
                              std::size_t T, double epsilon = 1e-8);

/// Descriptive statistics of a logged eta trajectory.
struct EtaSummary {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  double fraction_ge_one = 0.0;
  std::size_t count = 0;
};
EtaSummary measure_eta(const std::vector<double>& etas);
EtaSummary measure_eta(const TheoryRun& run);

}  // namespace mpgd::theory
