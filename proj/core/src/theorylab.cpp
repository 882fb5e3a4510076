// SPDX-License-Identifier: Apache-2.0
#include "mpgd/theorylab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"
#include "mpgd/rng.hpp"

namespace mpgd::theory {

namespace {

constexpr double kSlack = 1e-9;
constexpr double kPowerIterTol = 1e-10;
constexpr std::size_t kPowerIterCap = 100000;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm_sq(const Tensor& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * v[i];
  return acc;
}

/// Largest eigenvalue of the d x d SPD matrix M by power iteration.
double power_iteration_lambda_max(const std::vector<double>& M, std::size_t d,
                                  std::uint64_t seed) {
  Rng rng(splitmix64(seed) ^ 0x9E3779B97F4A7C15ULL);
  std::vector<double> v(d);
  double nv = 0.0;
  for (double& x : v) {
    x = rng.uniform(-1.0, 1.0);
    nv += x * x;
  }
  nv = std::sqrt(nv);
  for (double& x : v) x /= nv;

  double lambda_prev = 0.0;
  std::vector<double> u(d);
  for (std::size_t it = 0; it < kPowerIterCap; ++it) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += M[i * d + j] * v[j];
      u[i] = acc;
    }
    const double lambda = dot(v, u);  // Rayleigh quotient, ||v|| = 1
    const double nu = std::sqrt(dot(u, u));
    if (nu == 0.0) return 0.0;
    for (std::size_t i = 0; i < d; ++i) v[i] = u[i] / nu;
    if (std::fabs(lambda - lambda_prev) <= kPowerIterTol * std::max(std::fabs(lambda), 1e-300))
      return lambda;
    lambda_prev = lambda;
  }
  throw Error("theory: power iteration did not converge");
}

/// Largest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps.
/// Used for the per-selection Lipschitz constant of the top-k loss, where
/// power iteration could stall on clustered eigenvalues.
double sym_lambda_max(std::vector<double> M, std::size_t d) {
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = M[p * d + q];
        off = std::max(off, std::fabs(apq));
        if (std::fabs(apq) < 1e-14) continue;
        const double app = M[p * d + p], aqq = M[q * d + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < d; ++i) {
          const double mip = M[i * d + p], miq = M[i * d + q];
          M[i * d + p] = c * mip - s * miq;
          M[i * d + q] = s * mip + c * miq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double mpi = M[p * d + i], mqi = M[q * d + i];
          M[p * d + i] = c * mpi - s * mqi;
          M[q * d + i] = s * mpi + c * mqi;
        }
      }
    if (off < 1e-13) break;
  }
  double mx = M[0];
  for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, M[i * d + i]);
  return mx;
}

/// Cholesky solve of the SPD system M x = rhs (in place on copies).
std::vector<double> cholesky_solve(std::vector<double> M, std::vector<double> rhs,
                                   std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double diag = M[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= M[j * d + k] * M[j * d + k];
    if (diag <= 0.0) throw Error("theory: normal equations not positive definite");
    const double ljj = std::sqrt(diag);
    M[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double acc = M[i * d + j];
      for (std::size_t k = 0; k < j; ++k) acc -= M[i * d + k] * M[j * d + k];
      M[i * d + j] = acc / ljj;
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < d; ++i) {
    double acc = rhs[i];
    for (std::size_t k = 0; k < i; ++k) acc -= M[i * d + k] * rhs[k];
    rhs[i] = acc / M[i * d + i];
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double acc = rhs[ii];
    for (std::size_t k = ii + 1; k < d; ++k) acc -= M[k * d + ii] * rhs[k];
    rhs[ii] = acc / M[ii * d + ii];
  }
  return rhs;
}

/// Random matrix with orthonormal columns via modified Gram-Schmidt
/// (two passes).
std::vector<double> random_orthonormal(std::size_t rows, std::size_t cols,
                                       Rng& rng) {
  std::vector<double> Q(rows * cols);
  for (std::size_t c = 0; c < cols; ++c) {
    for (;;) {
      for (std::size_t i = 0; i < rows; ++i) Q[i * cols + c] = rng.normal();
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t k = 0; k < c; ++k) {
          double proj = 0.0;
          for (std::size_t i = 0; i < rows; ++i)
            proj += Q[i * cols + k] * Q[i * cols + c];
          for (std::size_t i = 0; i < rows; ++i)
            Q[i * cols + c] -= proj * Q[i * cols + k];
        }
      double nrm = 0.0;
      for (std::size_t i = 0; i < rows; ++i)
        nrm += Q[i * cols + c] * Q[i * cols + c];
      nrm = std::sqrt(nrm);
      if (nrm > 1e-8) {
        for (std::size_t i = 0; i < rows; ++i) Q[i * cols + c] /= nrm;
        break;
      }
    }
  }
  return Q;
}

void finalize_constants(QuadraticProblem& p, bool consistent, std::uint64_t seed) {
  const std::size_t m = p.A.shape()[0];
  const std::size_t d = p.A.shape()[1];
  std::vector<double> M(d * d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k)
        M[j * d + k] += p.A[i * d + j] * p.A[i * d + k];
  p.L = 2.0 * power_iteration_lambda_max(M, d, seed) / static_cast<double>(m);
  if (consistent) {
    p.l_star = 0.0;
    return;
  }
  std::vector<double> atb(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) atb[j] += p.A[i * d + j] * p.b[i];
  const std::vector<double> w_hat = cholesky_solve(M, atb, d);
  p.l_star = p.loss(Tensor({d}, w_hat));
}

std::vector<double> grad_over(const QuadraticProblem& p,
                              const std::vector<std::size_t>& indices,
                              const Tensor& r) {
  const std::size_t d = p.A.shape()[1];
  std::vector<double> g(d, 0.0);
  for (const std::size_t i : indices)
    for (std::size_t j = 0; j < d; ++j) g[j] += p.A[i * d + j] * r[i];
  const double scale = 2.0 / static_cast<double>(indices.size());
  for (double& v : g) v *= scale;
  return g;
}

double loss_over(const std::vector<std::size_t>& indices, const Tensor& r) {
  double acc = 0.0;
  for (const std::size_t i : indices) acc += r[i] * r[i];
  return acc / static_cast<double>(indices.size());
}

}  // namespace

double QuadraticProblem::loss(const Tensor& w) const {
  const Tensor r = residual(w);
  return norm_sq(r) / static_cast<double>(n_entries);
}

Tensor QuadraticProblem::residual(const Tensor& w) const {
  const std::size_t m = A.shape()[0];
  const std::size_t d = A.shape()[1];
  Tensor r({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += A[i * d + j] * w[j];
    r[i] = acc - b[i];
  }
  return r;
}

Tensor QuadraticProblem::gradient(const Tensor& w) const {
  const std::size_t m = A.shape()[0];
  const std::size_t d = A.shape()[1];
  const Tensor r = residual(w);
  Tensor g({d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) g[j] += A[i * d + j] * r[i];
  const double scale = 2.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < d; ++j) g[j] *= scale;
  return g;
}

QuadraticProblem make_quadratic(std::size_t d, std::size_t m, double cond,
                                bool consistent, std::uint64_t seed) {
  if (d < 1 || m < d) throw Error("theory: need m >= d >= 1");
  if (cond < 1.0) throw Error("theory: condition number must be >= 1");

  Rng rng(splitmix64(seed));
  const std::vector<double> U = random_orthonormal(m, d, rng);
  const std::vector<double> V = random_orthonormal(d, d, rng);
  std::vector<double> sigma(d, 1.0);
  for (std::size_t i = 0; i < d; ++i)
    sigma[i] = d == 1 ? 1.0
                      : std::pow(cond, static_cast<double>(d - 1 - i) /
                                           static_cast<double>(d - 1));

  QuadraticProblem p;
  p.n_entries = m;
  p.A = Tensor({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        acc += U[i * d + k] * sigma[k] * V[j * d + k];
      p.A[i * d + j] = acc;
    }

  Tensor w_true({d});
  for (std::size_t j = 0; j < d; ++j) w_true[j] = rng.uniform(-1.0, 1.0);
  p.b = Tensor({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += p.A[i * d + j] * w_true[j];
    p.b[i] = acc;
  }
  if (!consistent)
    for (std::size_t i = 0; i < m; ++i) p.b[i] += 0.5 * rng.normal();

  p.w0 = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) p.w0[j] = rng.uniform(-1.0, 1.0);

  finalize_constants(p, consistent, seed);
  return p;
}

QuadraticProblem make_quadratic_from(Tensor A, Tensor b, Tensor w0) {
  if (A.rank() != 2) throw Error("theory: A must be a matrix");
  const std::size_t m = A.shape()[0];
  const std::size_t d = A.shape()[1];
  if (m < d) throw Error("theory: need m >= d");
  if (b.size() != m || w0.size() != d)
    throw Error("theory: b/w0 sizes do not match A");
  QuadraticProblem p;
  p.A = std::move(A);
  p.b = std::move(b);
  p.w0 = std::move(w0);
  p.n_entries = m;
  finalize_constants(p, /*consistent=*/false, /*seed=*/0x5EEDULL);
  return p;
}

std::vector<TraceStep> run_topk_gd(const QuadraticProblem& p, std::size_t k,
                                   std::size_t steps, double step_scale,
                                   double l_scale) {
  const std::size_t m = p.n_entries;
  if (k == 0 || k > m) throw Error("theory: k must lie in [1, m]");
  const std::size_t d = p.A.shape()[1];

  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), 0);

  std::vector<TraceStep> trace;
  trace.reserve(steps);
  Tensor w = p.w0;
  std::vector<std::size_t> selected(all);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor r = p.residual(w);
    if (k == m) {
      selected = all;
    } else {
      std::vector<std::size_t> idx(all);
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                        idx.end(), [&r](std::size_t a, std::size_t b) {
                          const double ra = r[a] * r[a], rb = r[b] * r[b];
                          if (ra != rb) return ra > rb;
                          return a < b;
                        });
      idx.resize(k);
      std::sort(idx.begin(), idx.end());
      selected = std::move(idx);
    }

    const std::vector<double> g_full = grad_over(p, all, r);
    const std::vector<double> g_topk =
        k == m ? g_full : grad_over(p, selected, r);

    TraceStep s;
    s.loss_full = loss_over(all, r);
    s.loss_topk = k == m ? s.loss_full : loss_over(selected, r);
    s.grad_norm_sq = dot(g_full, g_full);
    s.topk_grad_norm_sq = k == m ? s.grad_norm_sq : dot(g_topk, g_topk);
    s.eta = s.grad_norm_sq > 0.0 ? s.topk_grad_norm_sq / s.grad_norm_sq : 1.0;
    trace.push_back(s);

    // Step 1/L of the objective being descended. For the full loss that is
    // the problem constant; the k-mean over a selection is a different
    // (much steeper) function, so its own constant is recomputed per step.
    double L_obj;
    if (k == m) {
      L_obj = p.L;
    } else {
      std::vector<double> gram(d * d, 0.0);
      for (const std::size_t i : selected)
        for (std::size_t a = 0; a < d; ++a)
          for (std::size_t b = 0; b < d; ++b)
            gram[a * d + b] += p.A[i * d + a] * p.A[i * d + b];
      L_obj = 2.0 * sym_lambda_max(std::move(gram), d) / static_cast<double>(k);
    }
    const double step = step_scale / (l_scale * L_obj);
    for (std::size_t j = 0; j < d; ++j) w[j] -= step * g_topk[j];
  }
  return trace;
}

bool DescentReport::all_hold() const {
  for (bool h : holds)
    if (!h) return false;
  return true;
}

DescentReport check_descent_lemma(const QuadraticProblem& p, std::size_t steps,
                                  double step_scale, double l_scale) {
  if (steps == 0) throw Error("theory: descent check needs at least one step");
  const double L_used = l_scale * p.L;
  const auto trace = run_topk_gd(p, p.n_entries, steps + 1, step_scale, l_scale);
  DescentReport report;
  report.holds.reserve(steps);
  report.first_violation = steps;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double prev = trace[t - 1].loss_full;
    const double bound =
        prev - trace[t - 1].grad_norm_sq / (2.0 * L_used) + kSlack * std::max(1.0, prev);
    const bool ok = trace[t].loss_full <= bound;
    if (!ok && report.first_violation == steps) report.first_violation = t;
    report.holds.push_back(ok);
  }
  return report;
}

Theorem1Report check_theorem1(const QuadraticProblem& p, std::size_t T) {
  if (T == 0) throw Error("theory: T must be positive");
  const auto trace = run_topk_gd(p, p.n_entries, T);
  Theorem1Report report;
  report.min_grad_norm_sq = trace[0].grad_norm_sq;
  for (const TraceStep& s : trace)
    report.min_grad_norm_sq = std::min(report.min_grad_norm_sq, s.grad_norm_sq);
  report.bound =
      2.0 * p.L * (trace[0].loss_full - p.l_star) / static_cast<double>(T);
  report.holds = report.min_grad_norm_sq <= report.bound * (1.0 + kSlack);
  return report;
}

Theorem2Report check_theorem2(const QuadraticProblem& p, double k_fraction,
                              std::size_t T, double epsilon) {
  if (T == 0) throw Error("theory: T must be positive");
  if (k_fraction <= 0.0 || k_fraction > 1.0)
    throw Error("theory: k_fraction must lie in (0, 1]");
  if (epsilon <= 0.0) throw Error("theory: epsilon must be positive");
  const std::size_t m = p.n_entries;
  const std::size_t k = std::min<std::size_t>(
      m, std::max<std::size_t>(
             1, static_cast<std::size_t>(
                    std::ceil(k_fraction * static_cast<double>(m)))));

  Theorem2Report report;
  report.run.problem = p;
  report.run.k_fraction = k_fraction;
  report.run.epsilon = epsilon;
  report.run.steps = run_topk_gd(p, k, T);

  // l*_topK has no closed form; use the smallest top-k loss seen over a 10x
  // longer reference run as the oracle.
  const auto reference = run_topk_gd(p, k, 10 * T);
  report.l_star_topk_estimate = reference[0].loss_topk;
  for (const TraceStep& s : reference)
    report.l_star_topk_estimate = std::min(report.l_star_topk_estimate, s.loss_topk);

  report.l0_full = report.run.steps[0].loss_full;
  report.l0_topk = report.run.steps[0].loss_topk;
  report.min_topk_grad_norm_sq = report.run.steps[0].topk_grad_norm_sq;
  report.eta_max = 0.0;
  for (const TraceStep& s : report.run.steps) {
    report.min_topk_grad_norm_sq =
        std::min(report.min_topk_grad_norm_sq, s.topk_grad_norm_sq);
    report.eta_max = std::max(report.eta_max, s.eta);
  }
  report.bound = 2.0 * report.eta_max * p.L *
                 (report.l0_full - report.l_star_topk_estimate) /
                 static_cast<double>(T);
  report.holds = report.min_topk_grad_norm_sq <= report.bound * (1.0 + kSlack);

  report.run.T_bound_mse =
      2.0 * report.eta_max * p.L * (report.l0_full - p.l_star) / epsilon;
  report.run.T_bound_mpgd = 2.0 * report.eta_max * p.L *
                            (report.l0_full - report.l_star_topk_estimate) /
                            epsilon;
  return report;
}

void TheoryRun::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error("theory: cannot write " + file.string());
  out << "t,l_t,grad_norm_sq,topk_grad_norm_sq,eta\n";
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const TraceStep& s = steps[t];
    out << t << ',' << format_double(s.loss_full) << ','
        << format_double(s.grad_norm_sq) << ','
        << format_double(s.topk_grad_norm_sq) << ',' << format_double(s.eta)
        << '\n';
  }
  if (!out) throw Error("theory: write failed for " + file.string());
}

EtaSummary measure_eta(const std::vector<double>& etas) {
  if (etas.empty()) throw Error("theory: no eta data to summarize");
  std::vector<double> sorted(etas);
  std::sort(sorted.begin(), sorted.end());
  EtaSummary s;
  s.count = sorted.size();
  s.min = sorted.front();
  s.max = sorted.back();
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 == 1 ? sorted[mid]
                                    : 0.5 * (sorted[mid - 1] + sorted[mid]);
  std::size_t ge_one = 0;
  for (double e : sorted)
    if (e >= 1.0) ++ge_one;
  s.fraction_ge_one = static_cast<double>(ge_one) / static_cast<double>(s.count);
  return s;
}

EtaSummary measure_eta(const TheoryRun& run) {
  std::vector<double> etas;
  etas.reserve(run.steps.size());
  for (const TraceStep& s : run.steps) etas.push_back(s.eta);
  return measure_eta(etas);
}

}  // namespace mpgd::theory
