#pragma once

// Distributions of a single CUSUM increment Y together with the quantities
// that depend only on Y: the MGF m(lambda), its positive root lambda*, the
// Cramer rate function and the discrepancy E(1 - e^{lambda Y})^+.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cusum/error.hpp"
#include "cusum/normal.hpp"
#include "cusum/numeric.hpp"

namespace cusum {

/// Log-likelihood-ratio increment of a normal mean shift of delta standard
/// deviations, observed under the pre-change law: Y ~ Normal(-delta^2/2, delta)
/// with delta the standard deviation (not the variance).
struct NormalLlr {
  double delta;
};

/// Y ~ Normal(mean, sigma), sigma a standard deviation.
struct ShiftedNormal {
  double mean;
  double sigma;
};

/// P(Y = +1) = p, P(Y = -1) = 1 - p.
struct BernoulliPm {
  double p;
};

struct Atom {
  double value;
  double prob;
};

/// Finite-support law. `llr` marks tables that are log-likelihood ratios
/// observed under the pre-change law, so that E e^Y = 1.
struct DiscreteTable {
  std::vector<double> support;
  std::vector<double> probs;
  bool llr = false;
};

class IncrementModel {
 public:
  using Kind = std::variant<NormalLlr, ShiftedNormal, BernoulliPm, DiscreteTable>;

  static IncrementModel normal_llr(double delta) { return IncrementModel(NormalLlr{delta}); }
  static IncrementModel shifted_normal(double mean, double sigma) {
    return IncrementModel(ShiftedNormal{mean, sigma});
  }
  static IncrementModel bernoulli_pm(double p) { return IncrementModel(BernoulliPm{p}); }
  static IncrementModel table(std::vector<double> support, std::vector<double> probs,
                              bool llr = false) {
    return IncrementModel(DiscreteTable{std::move(support), std::move(probs), llr});
  }

  /// Parses `normal-llr:delta=D`, `shifted-normal:a=A,sigma=S`,
  /// `bernoulli-pm:p=P` or `table:y=v1;v2;...,p=p1;p2;...[,llr]`.
  static IncrementModel parse(std::string_view spec);

  explicit IncrementModel(Kind kind) : kind_(std::move(kind)) { validate(); }

  const Kind& kind() const noexcept { return kind_; }
  bool is_normal() const noexcept {
    return std::holds_alternative<NormalLlr>(kind_) || std::holds_alternative<ShiftedNormal>(kind_);
  }
  bool is_normal_llr() const noexcept { return std::holds_alternative<NormalLlr>(kind_); }
  bool is_discrete() const noexcept { return !is_normal(); }

  /// Mean and standard deviation of Y for the two normal kinds.
  double normal_mean() const noexcept { return normal_mean_; }
  double normal_sigma() const noexcept { return normal_sigma_; }

  /// Support points with positive probability, ascending (discrete kinds only).
  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  bool integer_support() const noexcept { return integer_support_; }

  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return variance_; }
  double prob_positive() const noexcept { return prob_positive_; }

  /// sup{lambda : m(lambda) < inf}; infinite for every supported kind.
  double mgf_domain_sup() const noexcept { return std::numeric_limits<double>::infinity(); }
  /// Right end A_0 of the rate-function domain: max support, or +inf.
  double upper_support() const noexcept {
    return is_normal() ? std::numeric_limits<double>::infinity() : atoms_.back().value;
  }

  /// True when e^Y is a likelihood ratio, i.e. E e^Y = 1.
  bool is_llr() const noexcept { return llr_; }

  double log_mgf(double lambda) const;
  /// First and second derivatives of log m at lambda (tilted mean/variance).
  double tilted_mean(double lambda) const;
  double tilted_variance(double lambda) const;

  std::string to_string() const;

 private:
  void validate();

  Kind kind_;
  std::vector<Atom> atoms_;
  double normal_mean_ = 0.0;
  double normal_sigma_ = 0.0;
  double mean_ = 0.0;
  double variance_ = 0.0;
  double prob_positive_ = 0.0;
  bool integer_support_ = false;
  bool llr_ = false;
};

namespace detail {

inline double parse_double(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw Error(ErrorCode::ParseError,
                "cannot parse '" + std::string(text) + "' as a number for " + std::string(what));
  }
  return value;
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline std::vector<double> parse_list(std::string_view text, std::string_view what) {
  std::vector<double> out;
  for (auto item : split(text, ';')) out.push_back(parse_double(item, what));
  return out;
}

/// Shortest text that parses back to exactly v.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline IncrementModel IncrementModel::parse(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::ParseError, "model spec '" + std::string(spec) + "' lacks ':'");
  }
  const auto name = spec.substr(0, colon);
  double delta = NAN, a = NAN, sigma = NAN, p = NAN;
  std::vector<double> ys, ps;
  bool llr = false;
  for (auto field : detail::split(spec.substr(colon + 1), ',')) {
    if (field == "llr") {
      llr = true;
      continue;
    }
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "malformed field '" + std::string(field) + "'");
    }
    const auto key = field.substr(0, eq);
    const auto val = field.substr(eq + 1);
    if (key == "delta") delta = detail::parse_double(val, key);
    else if (key == "a") a = detail::parse_double(val, key);
    else if (key == "sigma") sigma = detail::parse_double(val, key);
    else if (key == "p" && name == "table") ps = detail::parse_list(val, key);
    else if (key == "p") p = detail::parse_double(val, key);
    else if (key == "y") ys = detail::parse_list(val, key);
    else throw Error(ErrorCode::ParseError, "unknown field '" + std::string(key) + "'");
  }
  auto require = [&](double v, const char* key) {
    if (std::isnan(v)) {
      throw Error(ErrorCode::ParseError,
                  std::string("model '") + std::string(name) + "' requires " + key);
    }
  };
  if (name == "normal-llr") {
    require(delta, "delta");
    return normal_llr(delta);
  }
  if (name == "shifted-normal") {
    require(a, "a");
    require(sigma, "sigma");
    return shifted_normal(a, sigma);
  }
  if (name == "bernoulli-pm") {
    require(p, "p");
    return bernoulli_pm(p);
  }
  if (name == "table") {
    if (ys.empty() || ps.empty()) throw Error(ErrorCode::ParseError, "table requires y and p");
    return table(std::move(ys), std::move(ps), llr);
  }
  throw Error(ErrorCode::ParseError, "unknown model kind '" + std::string(name) + "'");
}

inline void IncrementModel::validate() {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidModel, why); };
  if (const auto* m = std::get_if<NormalLlr>(&kind_)) {
    if (!(m->delta > 0.0) || !std::isfinite(m->delta)) fail("normal-llr delta must be positive");
    normal_mean_ = -0.5 * m->delta * m->delta;
    normal_sigma_ = m->delta;
    llr_ = true;
  } else if (const auto* m = std::get_if<ShiftedNormal>(&kind_)) {
    if (!(m->sigma > 0.0) || !std::isfinite(m->sigma) || !std::isfinite(m->mean)) {
      fail("shifted-normal requires finite mean and positive sigma");
    }
    normal_mean_ = m->mean;
    normal_sigma_ = m->sigma;
  } else if (const auto* m = std::get_if<BernoulliPm>(&kind_)) {
    if (!(m->p >= 0.0 && m->p <= 1.0)) fail("bernoulli-pm p must lie in [0, 1]");
    if (m->p < 1.0) atoms_.push_back({-1.0, 1.0 - m->p});
    if (m->p > 0.0) atoms_.push_back({1.0, m->p});
  } else {
    const auto& t = std::get<DiscreteTable>(kind_);
    if (t.support.size() != t.probs.size() || t.support.empty()) {
      fail("table support and probabilities must be non-empty and of equal length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < t.support.size(); ++i) {
      if (!(t.probs[i] >= 0.0 && t.probs[i] <= 1.0)) fail("table probabilities must lie in [0, 1]");
      if (!std::isfinite(t.support[i])) fail("table support values must be finite");
      total += t.probs[i];
      if (t.probs[i] > 0.0) atoms_.push_back({t.support[i], t.probs[i]});
    }
    if (std::fabs(total - 1.0) > 1e-12) fail("table probabilities must sum to 1");
    std::sort(atoms_.begin(), atoms_.end(),
              [](const Atom& l, const Atom& r) { return l.value < r.value; });
    for (std::size_t i = 1; i < atoms_.size(); ++i) {
      if (atoms_[i].value == atoms_[i - 1].value) fail("table support values must be distinct");
    }
  }

  if (is_normal()) {
    mean_ = normal_mean_;
    variance_ = normal_sigma_ * normal_sigma_;
    prob_positive_ = normal_sf(-normal_mean_ / normal_sigma_);
    if (!llr_) llr_ = std::fabs(log_mgf(1.0)) <= 1e-9;
    return;
  }
  integer_support_ = true;
  for (const auto& at : atoms_) {
    mean_ += at.prob * at.value;
    if (at.value > 0.0) prob_positive_ += at.prob;
    if (at.value != std::nearbyint(at.value) || std::fabs(at.value) > 1e9) integer_support_ = false;
  }
  for (const auto& at : atoms_) variance_ += at.prob * (at.value - mean_) * (at.value - mean_);
  const bool near_llr = std::fabs(std::expm1(log_mgf(1.0))) <= 1e-9;
  if (const auto* t = std::get_if<DiscreteTable>(&kind_); t && t->llr && !near_llr) {
    fail("table flagged llr must satisfy E e^Y = 1");
  }
  llr_ = near_llr;
}

inline double IncrementModel::log_mgf(double lambda) const {
  if (is_normal()) {
    if (is_normal_llr()) {
      // -lambda d^2/2 + lambda^2 d^2/2, exactly zero at lambda = 0 and 1.
      return 0.5 * normal_sigma_ * normal_sigma_ * lambda * (lambda - 1.0);
    }
    return lambda * normal_mean_ + 0.5 * lambda * lambda * normal_sigma_ * normal_sigma_;
  }
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& at : atoms_) top = std::max(top, lambda * at.value);
  double s = 0.0;
  for (const auto& at : atoms_) s += at.prob * std::exp(lambda * at.value - top);
  return top + std::log(s);
}

inline double IncrementModel::tilted_mean(double lambda) const {
  if (is_normal()) return normal_mean_ + lambda * normal_sigma_ * normal_sigma_;
  const double lm = log_mgf(lambda);
  double s = 0.0;
  for (const auto& at : atoms_) s += at.prob * at.value * std::exp(lambda * at.value - lm);
  return s;
}

inline double IncrementModel::tilted_variance(double lambda) const {
  if (is_normal()) return normal_sigma_ * normal_sigma_;
  const double lm = log_mgf(lambda);
  const double mu = tilted_mean(lambda);
  double s = 0.0;
  for (const auto& at : atoms_) {
    s += at.prob * (at.value - mu) * (at.value - mu) * std::exp(lambda * at.value - lm);
  }
  return s;
}

inline std::string IncrementModel::to_string() const {
  using detail::format_double;
  if (const auto* m = std::get_if<NormalLlr>(&kind_)) {
    return "normal-llr:delta=" + format_double(m->delta);
  }
  if (const auto* m = std::get_if<ShiftedNormal>(&kind_)) {
    return "shifted-normal:a=" + format_double(m->mean) + ",sigma=" + format_double(m->sigma);
  }
  if (const auto* m = std::get_if<BernoulliPm>(&kind_)) {
    return "bernoulli-pm:p=" + format_double(m->p);
  }
  const auto& t = std::get<DiscreteTable>(kind_);
  std::string ys, ps;
  for (std::size_t i = 0; i < t.support.size(); ++i) {
    if (i) {
      ys += ';';
      ps += ';';
    }
    ys += format_double(t.support[i]);
    ps += format_double(t.probs[i]);
  }
  return "table:y=" + ys + ",p=" + ps + (t.llr ? ",llr" : "");
}

// ---------------------------------------------------------------------------

/// m(lambda) = E e^{lambda Y}; +inf when the value overflows.
inline double mgf(const IncrementModel& model, double lambda) {
  return std::exp(model.log_mgf(lambda));
}

/// Positive root of m(lambda) = 1.
inline double lambda_star(const IncrementModel& model) {
  if (!(model.mean() < 0.0)) {
    throw Error(ErrorCode::NoPositiveRoot, "E Y = " + detail::format_double(model.mean()) +
                                               " is not negative");
  }
  if (model.prob_positive() <= 0.0) {
    throw Error(ErrorCode::NoPositiveRoot, "P(Y > 0) = 0, so m(lambda) < 1 for all lambda > 0");
  }
  if (model.is_normal_llr()) return 1.0;
  if (model.is_normal()) {
    const double s = model.normal_sigma();
    return -2.0 * model.normal_mean() / (s * s);
  }
  auto kappa = [&](double l) { return model.log_mgf(l); };
  double hi = 1.0;
  while (!(kappa(hi) > 0.0)) {
    hi *= 2.0;
    if (hi > 1e12) throw Error(ErrorCode::NoPositiveRoot, "m(lambda) stays below 1");
  }
  double lo = hi;
  while (!(kappa(lo) < 0.0)) {
    lo *= 0.5;
    if (lo < 1e-300) throw Error(ErrorCode::NoPositiveRoot, "cannot bracket the root");
  }
  const auto root = safeguarded_newton(
      kappa, [&](double l) { return model.tilted_mean(l); }, lo, hi, 1e-13);
  return root.x;
}

struct RatePoint {
  double rate;    // I(x)
  double lambda;  // maximiser lambda(x)
};

/// Cramer rate function I(x) = sup_lambda {lambda x - log m(lambda)} on
/// [E Y, A_0), with lambda(x) found by monotone root search.
inline RatePoint rate_function(const IncrementModel& model, double x) {
  const double ey = model.mean();
  if (x == ey) return {0.0, 0.0};
  if (!(x > ey) || !(x < model.upper_support())) {
    throw Error(ErrorCode::OutOfDomain, "x = " + detail::format_double(x) +
                                            " outside (E Y, A_0)");
  }
  auto g = [&](double l) { return model.tilted_mean(l) - x; };
  double hi = 1.0;
  while (!(g(hi) > 0.0)) {
    hi *= 2.0;
    if (hi > 1e12) throw Error(ErrorCode::OutOfDomain, "lambda(x) unbounded; x too close to A_0");
  }
  const auto root = safeguarded_newton(
      g, [&](double l) { return model.tilted_variance(l); }, 0.0, hi, 1e-12);
  const double l = root.x;
  return {l * x - model.log_mgf(l), l};
}

/// E(1 - e^{lambda Y})^+, the Doob-Meyer compensator increment bound.
inline double tilted_discrepancy(const IncrementModel& model, double lambda) {
  if (model.is_normal()) {
    const double a = model.normal_mean();
    const double s = model.normal_sigma();
    if (model.is_normal_llr() && lambda == 1.0) {
      return std::erf(0.5 * s / std::numbers::sqrt2);  // 2 Phi(delta/2) - 1
    }
    return normal_cdf(-a / s) - std::exp(model.log_mgf(lambda)) * normal_cdf(-a / s - lambda * s);
  }
  double d = 0.0;
  for (const auto& at : model.atoms()) {
    if (at.value < 0.0) d -= at.prob * std::expm1(lambda * at.value);
  }
  return d;
}

/// Total-variation discrepancy D_{F,G} = E_F(1 - e^Y)^+ of a likelihood-ratio
/// increment.
inline double tv_discrepancy(const IncrementModel& model) {
  if (!model.is_llr()) {
    throw Error(ErrorCode::NotAnLLRModel, model.to_string() + " does not satisfy E e^Y = 1");
  }
  return tilted_discrepancy(model, 1.0);
}

}  // namespace cusum
