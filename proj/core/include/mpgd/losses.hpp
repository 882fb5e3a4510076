// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpgd/autodiff.hpp"

namespace mpgd::losses {

enum class LossKind { kMse, kAmse, kMaxError, kShrinkage, kBiased };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

/// Normalized-error threshold used by in-data active sampling.
constexpr double kDefaultLambda = 0.007;

/// Floor applied to max(target) when normalizing absolute errors, so all-zero
/// targets degrade to near-MSE selection instead of dividing by zero.
constexpr double kTargetMaxFloor = 1e-12;

struct LossSpec {
  LossKind kind = LossKind::kMse;
  std::optional<double> lambda;  // AMSE only, in (0, 1)
  std::optional<double> a;       // shrinkage/biased steepness, > 0
  std::optional<double> c;       // shrinkage/biased offset, > 0

  void validate() const;
  std::string name() const { return to_string(kind); }

  static LossSpec mse();
  static LossSpec amse(double lambda = kDefaultLambda);
  static LossSpec max_error();
  static LossSpec shrinkage(double a, double c);
  static LossSpec biased(double a, double c);

  /// Config round-trip under the keys loss.kind / loss.lambda / loss.a / loss.c.
  std::map<std::string, std::string> to_kv() const;
  static LossSpec from_kv(const std::map<std::string, std::string>& kv);

  /// Parses "amse(lambda=0.007)", "shrinkage(a=10,c=0.2)", or a bare kind.
  static LossSpec parse(const std::string& text);
};

bool operator==(const LossSpec& a, const LossSpec& b);

/// Critical-entry index set for one instance. Always nonempty: when no entry
/// clears the threshold the set falls back to every index.
struct CriticalSet {
  std::vector<std::size_t> indices;  // strictly ascending flat indices
  bool fallback_all = false;
};

/// Mean squared error over all entries.
ad::NodePtr mse(const ad::NodePtr& y, const Tensor& target);

/// Largest absolute entrywise error; gradient reaches only the first arg-max
/// entry in flat order.
ad::NodePtr max_error_loss(const ad::NodePtr& y, const Tensor& target);

/// Per entry l = |y_i - t_i| weighted by 1 / (1 + exp(a * (c - l))), averaged.
ad::NodePtr shrinkage_loss(const ad::NodePtr& y, const Tensor& target, double a,
                           double c);

/// Like shrinkage but the weight uses the instance-wide target maximum:
/// 1 / (1 + exp(a * (c - max target))).
ad::NodePtr biased_loss(const ad::NodePtr& y, const Tensor& target, double a,
                        double c);

/// Selects indices whose normalized absolute error |y - t| / max(t) strictly
/// exceeds lambda; empty selections fall back to all indices. The prediction
/// is a detached tensor: no gradient flows through selection.
CriticalSet ias_sample(const Tensor& y, const Tensor& target, double lambda);

/// Mean squared error restricted to the critical entries.
ad::NodePtr amse(const ad::NodePtr& y, const Tensor& target,
                 const CriticalSet& crit);

struct LossResult {
  ad::NodePtr loss;
  std::optional<CriticalSet> critical;  // present for AMSE only
};

/// Dispatch on spec.kind; AMSE first runs ias_sample on the detached
/// prediction.
LossResult compute_loss(const LossSpec& spec, const ad::NodePtr& y,
                        const Tensor& target);

}  // namespace mpgd::losses
