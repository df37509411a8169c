#pragma once

// Moments of the rectified partial sums S_n^+ = max(S_n, 0): the inputs to
// every Spitzer-type formula for the CUSUM process. Normal kinds use closed
// forms; finite-support kinds use the exact law of S_n obtained by repeated
// convolution on a value-keyed lattice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/normal.hpp"

namespace cusum {

/// Exact law of S_n for a finite-support increment, optionally under the
/// exponentially tilted measure q(y) = p(y) e^{theta y} / m(theta). Atoms whose
/// values agree after rounding to a 1e-12 grid are merged (integer supports
/// are keyed exactly); atoms whose probability underflows to zero are dropped.
class PartialSumLaw {
 public:
  explicit PartialSumLaw(const IncrementModel& model, double tilt = 0.0)
      : integer_(model.integer_support()), atoms_{{0.0, 1.0}} {
    if (!model.is_discrete()) {
      throw Error(ErrorCode::NotSupportedModel, "partial-sum lattice needs a finite support");
    }
    const double log_m = tilt == 0.0 ? 0.0 : model.log_mgf(tilt);
    for (const auto& a : model.atoms()) {
      const double p = tilt == 0.0 ? a.prob : std::exp(std::log(a.prob) + tilt * a.value - log_m);
      if (p > 0.0) increments_.push_back({a.value, p});
    }
  }

  std::size_t steps() const noexcept { return steps_; }
  std::span<const Atom> atoms() const noexcept { return atoms_; }

  /// Advances from the law of S_n to that of S_{n+1}.
  void step() {
    scratch_.clear();
    scratch_.reserve(atoms_.size() * increments_.size());
    for (const auto& s : atoms_) {
      for (const auto& y : increments_) {
        const double v = s.value + y.value;
        scratch_.push_back({key(v), v, s.prob * y.prob});
      }
    }
    std::sort(scratch_.begin(), scratch_.end(),
              [](const Keyed& l, const Keyed& r) { return l.key < r.key; });
    atoms_.clear();
    for (std::size_t i = 0; i < scratch_.size();) {
      const auto k = scratch_[i].key;
      const double v = scratch_[i].value;
      double p = 0.0;
      for (; i < scratch_.size() && scratch_[i].key == k; ++i) p += scratch_[i].prob;
      if (p > 0.0) atoms_.push_back({v, p});
    }
    ++steps_;
  }

  std::int64_t key(double v) const {
    if (integer_) return static_cast<std::int64_t>(std::llround(v));
    return std::llround(v * 1e12);
  }

 private:
  struct Keyed {
    std::int64_t key;
    double value;
    double prob;
  };

  std::vector<Atom> increments_;
  bool integer_;
  std::vector<Atom> atoms_;
  std::vector<Keyed> scratch_;
  std::size_t steps_ = 0;
};

namespace detail {

/// E e^{lambda S^+} for S ~ Normal(n a, s sqrt(n)).
inline double normal_rectified_exp(const IncrementModel& model, double lambda, std::size_t n) {
  const double nn = static_cast<double>(n);
  const double mu = nn * model.normal_mean();
  const double sd = model.normal_sigma() * std::sqrt(nn);
  const double log_mgf_sum = nn * model.log_mgf(lambda);
  return normal_cdf(-mu / sd) + std::exp(log_mgf_sum + normal_log_cdf(mu / sd + lambda * sd));
}

// P(S <= 0) + m(lambda)^n Q(S > 0), with Q the lambda-tilted law of S_n.
inline double lattice_rectified_exp(std::span<const Atom> plain, std::span<const Atom> tilted,
                                    double log_mgf_sum) {
  double lower = 0.0, upper = 0.0;
  for (const auto& at : plain) {
    if (at.value <= 0.0) lower += at.prob;
  }
  for (const auto& at : tilted) {
    if (at.value > 0.0) upper += at.prob;
  }
  return lower + (upper > 0.0 ? std::exp(log_mgf_sum + std::log(upper)) : 0.0);
}

inline void check_finite(double v, double lambda, std::size_t n) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::DivergentMoment,
                "E exp(lambda S_n^+) overflows at lambda = " + format_double(lambda) +
                    ", n = " + std::to_string(n));
  }
}

}  // namespace detail

/// x_k = E e^{lambda S_k^+} for k = 0..N, with x_0 = 1.
struct RectifiedSeries {
  double lambda = 0.0;
  std::vector<double> values;

  std::size_t horizon() const noexcept { return values.empty() ? 0 : values.size() - 1; }
  double operator[](std::size_t k) const { return values[k]; }
};

inline RectifiedSeries rectified_exp_series(const IncrementModel& model, double lambda,
                                            std::size_t horizon) {
  RectifiedSeries out{lambda, std::vector<double>(horizon + 1, 1.0)};
  if (lambda == 0.0) return out;
  if (model.is_normal()) {
    for (std::size_t k = 1; k <= horizon; ++k) {
      out.values[k] = detail::normal_rectified_exp(model, lambda, k);
      detail::check_finite(out.values[k], lambda, k);
    }
    return out;
  }
  PartialSumLaw plain(model), tilted(model, lambda);
  const double log_m = model.log_mgf(lambda);
  for (std::size_t k = 1; k <= horizon; ++k) {
    plain.step();
    tilted.step();
    out.values[k] =
        detail::lattice_rectified_exp(plain.atoms(), tilted.atoms(), static_cast<double>(k) * log_m);
    detail::check_finite(out.values[k], lambda, k);
  }
  return out;
}

/// x_n = E e^{lambda S_n^+}.
inline double rectified_exp_moment(const IncrementModel& model, double lambda, std::size_t n) {
  if (n == 0 || lambda == 0.0) return 1.0;
  if (model.is_normal()) {
    const double v = detail::normal_rectified_exp(model, lambda, n);
    detail::check_finite(v, lambda, n);
    return v;
  }
  return rectified_exp_series(model, lambda, n).values.back();
}

struct RectifiedMoments {
  double mean_plus;  // E S_n^+
  double var_plus;   // Var S_n^+
};

/// E S_k^+ and E (S_k^+)^2 for k = 0..N.
struct RectifiedMomentSeries {
  std::vector<double> mean_plus;
  std::vector<double> second_plus;

  std::size_t horizon() const noexcept { return mean_plus.empty() ? 0 : mean_plus.size() - 1; }
  double var_plus(std::size_t k) const {
    return std::max(0.0, second_plus[k] - mean_plus[k] * mean_plus[k]);
  }
};

namespace detail {

inline RectifiedMoments normal_rectified_moments(const IncrementModel& model, std::size_t n,
                                                 double* second = nullptr) {
  const double nn = static_cast<double>(n);
  const double mu = nn * model.normal_mean();
  const double sd = model.normal_sigma() * std::sqrt(nn);
  const double t = mu / sd;
  const double cdf = normal_cdf(t);
  const double pdf = normal_pdf(t);
  const double m1 = mu * cdf + sd * pdf;
  const double m2 = (mu * mu + sd * sd) * cdf + mu * sd * pdf;
  if (second) *second = m2;
  return {std::max(0.0, m1), std::max(0.0, m2 - m1 * m1)};
}

}  // namespace detail

inline RectifiedMomentSeries rectified_moment_series(const IncrementModel& model,
                                                     std::size_t horizon) {
  RectifiedMomentSeries out{std::vector<double>(horizon + 1, 0.0),
                            std::vector<double>(horizon + 1, 0.0)};
  if (model.is_normal()) {
    for (std::size_t k = 1; k <= horizon; ++k) {
      double m2 = 0.0;
      out.mean_plus[k] = detail::normal_rectified_moments(model, k, &m2).mean_plus;
      out.second_plus[k] = std::max(0.0, m2);
    }
    return out;
  }
  PartialSumLaw law(model);
  for (std::size_t k = 1; k <= horizon; ++k) {
    law.step();
    double m1 = 0.0, m2 = 0.0;
    for (const auto& at : law.atoms()) {
      if (at.value > 0.0) {
        m1 += at.prob * at.value;
        m2 += at.prob * at.value * at.value;
      }
    }
    out.mean_plus[k] = m1;
    out.second_plus[k] = m2;
  }
  return out;
}

inline RectifiedMoments rectified_moments(const IncrementModel& model, std::size_t n) {
  if (n == 0) return {0.0, 0.0};
  if (model.is_normal()) return detail::normal_rectified_moments(model, n);
  const auto series = rectified_moment_series(model, n);
  return {series.mean_plus[n], series.var_plus(n)};
}

}  // namespace cusum
