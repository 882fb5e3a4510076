// SPDX-License-Identifier: Apache-2.0
#include "mpgd/losses.hpp"

#include <cmath>

#include "mpgd/error.hpp"
#include "mpgd/format.hpp"

namespace mpgd::losses {

namespace {

constexpr double kExpClamp = 500.0;

void require_same_shape(const ad::NodePtr& y, const Tensor& target,
                        const char* op) {
  if (!y->value.same_shape(target))
    throw Error(std::string(op) + ": prediction/target shape mismatch");
}

// clamp(x) = min(max(x, -500), 500) built from the max-with-scalar primitive;
// the upper clamp is -max(-x, -500).
ad::NodePtr clamp_exponent(const ad::NodePtr& x) {
  auto lo = ad::max_with_scalar(x, -kExpClamp);
  return ad::mul(ad::max_with_scalar(ad::mul(lo, -1.0), -kExpClamp), -1.0);
}

double clamped_exp(double x) {
  if (x > kExpClamp) x = kExpClamp;
  if (x < -kExpClamp) x = -kExpClamp;
  return std::exp(x);
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse";
    case LossKind::kAmse: return "amse";
    case LossKind::kMaxError: return "maxerror";
    case LossKind::kShrinkage: return "shrinkage";
    case LossKind::kBiased: return "biased";
  }
  throw Error("loss: unknown kind");
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "amse") return LossKind::kAmse;
  if (name == "maxerror") return LossKind::kMaxError;
  if (name == "shrinkage") return LossKind::kShrinkage;
  if (name == "biased") return LossKind::kBiased;
  throw Error("loss: unknown kind '" + name + "'");
}

void LossSpec::validate() const {
  const bool needs_lambda = kind == LossKind::kAmse;
  const bool needs_ac = kind == LossKind::kShrinkage || kind == LossKind::kBiased;
  if (lambda.has_value() != needs_lambda)
    throw Error("loss: lambda must be present exactly for amse");
  if (a.has_value() != needs_ac || c.has_value() != needs_ac)
    throw Error("loss: a/c must be present exactly for shrinkage and biased");
  if (lambda && (*lambda <= 0.0 || *lambda >= 1.0))
    throw Error("loss: lambda must lie in (0, 1)");
  if (a && *a <= 0.0) throw Error("loss: a must be positive");
  if (c && *c <= 0.0) throw Error("loss: c must be positive");
}

LossSpec LossSpec::mse() { return LossSpec{LossKind::kMse, {}, {}, {}}; }
LossSpec LossSpec::amse(double lambda) {
  return LossSpec{LossKind::kAmse, lambda, {}, {}};
}
LossSpec LossSpec::max_error() { return LossSpec{LossKind::kMaxError, {}, {}, {}}; }
LossSpec LossSpec::shrinkage(double a, double c) {
  return LossSpec{LossKind::kShrinkage, {}, a, c};
}
LossSpec LossSpec::biased(double a, double c) {
  return LossSpec{LossKind::kBiased, {}, a, c};
}

std::map<std::string, std::string> LossSpec::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["loss.kind"] = name();
  if (lambda) kv["loss.lambda"] = format_double(*lambda);
  if (a) kv["loss.a"] = format_double(*a);
  if (c) kv["loss.c"] = format_double(*c);
  return kv;
}

LossSpec LossSpec::from_kv(const std::map<std::string, std::string>& kv) {
  const auto kind_it = kv.find("loss.kind");
  if (kind_it == kv.end()) throw Error("loss: missing loss.kind");
  LossSpec spec;
  spec.kind = loss_kind_from_string(kind_it->second);
  if (auto it = kv.find("loss.lambda"); it != kv.end())
    spec.lambda = parse_double(it->second);
  if (auto it = kv.find("loss.a"); it != kv.end()) spec.a = parse_double(it->second);
  if (auto it = kv.find("loss.c"); it != kv.end()) spec.c = parse_double(it->second);
  spec.validate();
  return spec;
}

LossSpec LossSpec::parse(const std::string& text) {
  const auto open = text.find('(');
  std::string kind_name = text;
  std::map<std::string, std::string> kv;
  if (open != std::string::npos) {
    if (text.back() != ')') throw Error("loss: malformed spec '" + text + "'");
    kind_name = std::string(trim(std::string_view(text).substr(0, open)));
    const auto inner = text.substr(open + 1, text.size() - open - 2);
    for (const auto& item : split_list(inner)) {
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw Error("loss: malformed spec parameter '" + item + "'");
      const auto key = std::string(trim(std::string_view(item).substr(0, eq)));
      const auto val = std::string(trim(std::string_view(item).substr(eq + 1)));
      kv["loss." + key] = val;
    }
  } else {
    kind_name = std::string(trim(text));
  }
  kv["loss.kind"] = kind_name;
  return from_kv(kv);
}

bool operator==(const LossSpec& a, const LossSpec& b) {
  return a.kind == b.kind && a.lambda == b.lambda && a.a == b.a && a.c == b.c;
}

ad::NodePtr mse(const ad::NodePtr& y, const Tensor& target) {
  require_same_shape(y, target, "mse");
  return ad::mean(ad::square(ad::sub(y, ad::constant(target))));
}

ad::NodePtr max_error_loss(const ad::NodePtr& y, const Tensor& target) {
  require_same_shape(y, target, "max_error_loss");
  return ad::max(ad::abs(ad::sub(y, ad::constant(target))));
}

ad::NodePtr shrinkage_loss(const ad::NodePtr& y, const Tensor& target, double a,
                           double c) {
  require_same_shape(y, target, "shrinkage_loss");
  if (a <= 0.0 || c <= 0.0) throw Error("shrinkage_loss: a and c must be positive");
  auto l = ad::abs(ad::sub(y, ad::constant(target)));
  // a * (c - l), clamped so exp never overflows
  auto expo = clamp_exponent(ad::mul(ad::add(ad::mul(l, -1.0), c), a));
  auto denom = ad::add(ad::exp(expo), 1.0);
  return ad::mean(ad::div(ad::square(l), denom));
}

ad::NodePtr biased_loss(const ad::NodePtr& y, const Tensor& target, double a,
                        double c) {
  require_same_shape(y, target, "biased_loss");
  if (a <= 0.0 || c <= 0.0) throw Error("biased_loss: a and c must be positive");
  // The reweighting term depends only on the ground truth, so it is a plain
  // scalar factor on the squared-error mean.
  const double weight = 1.0 / (1.0 + clamped_exp(a * (c - target.max_value())));
  return ad::mul(ad::mean(ad::square(ad::sub(y, ad::constant(target)))), weight);
}

CriticalSet ias_sample(const Tensor& y, const Tensor& target, double lambda) {
  if (!y.same_shape(target)) throw Error("ias_sample: shape mismatch");
  if (lambda <= 0.0 || lambda >= 1.0)
    throw Error("ias_sample: lambda must lie in (0, 1)");
  const double denom = std::max(target.max_value(), kTargetMaxFloor);
  CriticalSet crit;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d_ae = std::fabs(y[i] - target[i]) / denom;
    if (d_ae > lambda) crit.indices.push_back(i);
  }
  if (crit.indices.empty()) {
    crit.fallback_all = true;
    crit.indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) crit.indices[i] = i;
  }
  return crit;
}

ad::NodePtr amse(const ad::NodePtr& y, const Tensor& target,
                 const CriticalSet& crit) {
  require_same_shape(y, target, "amse");
  if (crit.indices.empty()) throw Error("amse: empty critical set");
  return ad::gather_mean(ad::square(ad::sub(y, ad::constant(target))),
                         crit.indices);
}

LossResult compute_loss(const LossSpec& spec, const ad::NodePtr& y,
                        const Tensor& target) {
  spec.validate();
  switch (spec.kind) {
    case LossKind::kMse:
      return {mse(y, target), {}};
    case LossKind::kMaxError:
      return {max_error_loss(y, target), {}};
    case LossKind::kShrinkage:
      return {shrinkage_loss(y, target, *spec.a, *spec.c), {}};
    case LossKind::kBiased:
      return {biased_loss(y, target, *spec.a, *spec.c), {}};
    case LossKind::kAmse: {
      CriticalSet crit = ias_sample(y->value, target, *spec.lambda);
      auto loss = amse(y, target, crit);
      return {std::move(loss), std::move(crit)};
    }
  }
  throw Error("loss: unknown kind");
}

}  // namespace mpgd::losses
