#pragma once

// Bounds on E e^{lambda* W_n} and on P(max_{t<=n} W_t >= h), and the
// detection thresholds derived from them.
//
// Models whose critical exponent lambda* differs from 1 are handled by
// working with the rescaled increments lambda* Y, for which E e^{Y} = 1;
// thresholds for W are the rescaled thresholds divided by lambda*.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/moments.hpp"
#include "cusum/normal.hpp"

namespace cusum {

enum class UpperVariant { Ub1, Ub2, Ub3 };
enum class LowerVariant { Lb1, Lb2 };

inline std::string_view to_string(UpperVariant v) {
  switch (v) {
    case UpperVariant::Ub1: return "ub1";
    case UpperVariant::Ub2: return "ub2";
    case UpperVariant::Ub3: return "ub3";
  }
  return "?";
}

inline std::string_view to_string(LowerVariant v) {
  return v == LowerVariant::Lb1 ? "lb1" : "lb2";
}

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::InvalidAlpha, "alpha must lie in (0, 1), got " + format_double(alpha));
  }
}

}  // namespace detail

/// 1 + n E(1 - e^{lambda* Y})^+, an upper bound on M_n(lambda*).
inline double exp_moment_upper(const IncrementModel& model, std::size_t n) {
  const double ls = lambda_star(model);
  return 1.0 + static_cast<double>(n) * tilted_discrepancy(model, ls);
}

/// min{e^{-lambda* h} (1 + n E(1 - e^{lambda* Y})^+), 1} >= P(max_{t<=n} W_t >= h).
inline double max_tail_upper(const IncrementModel& model, std::size_t n, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "h must be positive");
  const double ls = lambda_star(model);
  return std::min(std::exp(-ls * h) * exp_moment_upper(model, n), 1.0);
}

/// Threshold h with P(max_{t<=n} W_t >= h) <= alpha.
///   ub1: log(M_n(lambda*) / alpha) / lambda*
///   ub2: log((n + 1) / alpha) / lambda*
///   ub3: log((1 + n D) / alpha) / lambda*, D = E(1 - e^{lambda* Y})^+
/// `exact_moment` may supply a precomputed M_n(lambda*) for ub1.
inline double threshold_ub(const IncrementModel& model, std::size_t n, double alpha,
                           UpperVariant variant, std::optional<double> exact_moment = {}) {
  detail::check_alpha(alpha);
  const double ls = lambda_star(model);
  const double nn = static_cast<double>(n);
  switch (variant) {
    case UpperVariant::Ub1: {
      const double mn = exact_moment ? *exact_moment : cusum_mgf_recursive(model, ls, n).values.back();
      return std::log(mn / alpha) / ls;
    }
    case UpperVariant::Ub2:
      return std::log((nn + 1.0) / alpha) / ls;
    case UpperVariant::Ub3:
      return std::log((1.0 + nn * tilted_discrepancy(model, ls)) / alpha) / ls;
  }
  return NAN;
}

/// Segment lower bound for the normal log-likelihood-ratio walk: splitting
/// [0, n] into floor(n/k) blocks of length k,
///   P(max W >= h) >= 1 - Phi((h + k d^2/2) / (d sqrt k))^{floor(n/k)}.
inline double segment_tail_lower(double delta, std::size_t n, std::size_t k, double h) {
  const double blocks = static_cast<double>(n / k);
  const double kk = static_cast<double>(k);
  const double z = (h + 0.5 * kk * delta * delta) / (delta * std::sqrt(kk));
  // 1 - Phi(z)^m = -expm1(m log1p(-Q(z)))
  return -std::expm1(blocks * std::log1p(-normal_sf(z)));
}

/// Smallest h that the segment bound still certifies for block length k:
///   d sqrt(k) Phi^{-1}((1 - alpha)^{1/floor(n/k)}) - k d^2/2.
inline double segment_threshold(double delta, std::size_t n, std::size_t k, double alpha) {
  const double blocks = static_cast<double>(n / k);
  const double kk = static_cast<double>(k);
  // 1 - (1 - alpha)^{1/m} without cancellation
  const double upper_mass = -std::expm1(std::log1p(-alpha) / blocks);
  return delta * std::sqrt(kk) * normal_upper_quantile(upper_mass) - 0.5 * kk * delta * delta;
}

struct LowerBoundDetail {
  double h;            // best bound over k
  std::size_t k;       // maximising block length
  double heuristic_k;  // root x of x exp{(x + d^2/2)^2 / (2 d^2)} = n
  double heuristic_h;  // bound at k = max(1, round(heuristic_k))
};

namespace detail {

inline double heuristic_block_length(double delta, std::size_t n) {
  const double d2 = delta * delta;
  auto g = [&](double x) { return std::log(x) + (x + 0.5 * d2) * (x + 0.5 * d2) / (2.0 * d2) -
                                  std::log(static_cast<double>(n)); };
  double lo = 1e-300, hi = 1.0;
  if (g(lo) >= 0.0) return 0.0;
  while (g(hi) < 0.0) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double require_normal_llr(const IncrementModel& model) {
  if (!model.is_normal_llr()) {
    throw Error(ErrorCode::NotSupportedModel,
                "lower threshold bounds are available for normal-llr models only");
  }
  return std::get<NormalLlr>(model.kind()).delta;
}

}  // namespace detail

inline LowerBoundDetail threshold_lb_detail(const IncrementModel& model, std::size_t n,
                                            double alpha) {
  detail::check_alpha(alpha);
  const double delta = detail::require_normal_llr(model);
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n must be positive");
  LowerBoundDetail out{segment_threshold(delta, n, 1, alpha), 1, 0.0, 0.0};
  for (std::size_t k = 2; k <= n; ++k) {
    const double h = segment_threshold(delta, n, k, alpha);
    if (h > out.h) {
      out.h = h;
      out.k = k;
    }
  }
  out.heuristic_k = detail::heuristic_block_length(delta, n);
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(std::max(1.0, out.heuristic_k))), 1, n);
  out.heuristic_h = segment_threshold(delta, n, k, alpha);
  return out;
}

/// lb2: the k = 1 segment bound. lb1: the segment bound maximised over k in [1, n].
/// No threshold below the returned value can keep the false-alarm
/// probability at or under alpha.
inline double threshold_lb(const IncrementModel& model, std::size_t n, double alpha,
                           LowerVariant variant) {
  detail::check_alpha(alpha);
  const double delta = detail::require_normal_llr(model);
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n must be positive");
  if (variant == LowerVariant::Lb2) return segment_threshold(delta, n, 1, alpha);
  return threshold_lb_detail(model, n, alpha).h;
}

// ---------------------------------------------------------------------------

struct Regime {
  enum class Kind { Subcritical, Critical, Supercritical };
  Kind kind;
  double omega = 0.0;   // lambda / lambda* (subcritical)
  double growth = 1.0;  // m(lambda) (supercritical)
};

inline std::string_view to_string(Regime::Kind k) {
  switch (k) {
    case Regime::Kind::Subcritical: return "subcritical";
    case Regime::Kind::Critical: return "critical";
    case Regime::Kind::Supercritical: return "supercritical";
  }
  return "?";
}

/// Growth type of M_n(lambda) in n: at most c n^{lambda/lambda*} below
/// lambda*, linear at lambda*, at least m(lambda)^n above.
inline Regime regime(const IncrementModel& model, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  const double ls = lambda_star(model);
  if (std::fabs(lambda - ls) <= 1e-12 * ls) return {Regime::Kind::Critical, 1.0, 1.0};
  if (lambda < ls) return {Regime::Kind::Subcritical, lambda / ls, mgf(model, lambda)};
  return {Regime::Kind::Supercritical, lambda / ls, mgf(model, lambda)};
}

/// min{(1 + D E T) e^{-h}, 1} for a stopping time T with mean E T. This is
/// the bound on the compensator at T; it bounds the maximum of W over
/// [0, T] for likelihood-ratio increments.
inline double stopped_tail_bound(double discrepancy, double expected_stop, double h) {
  if (!(discrepancy >= 0.0 && discrepancy <= 1.0) || !(expected_stop >= 0.0) ||
      !std::isfinite(expected_stop) || !(h >= 0.0) || !std::isfinite(h)) {
    throw Error(ErrorCode::InvalidArgument, "stopped bound needs D in [0,1], E T >= 0, h >= 0");
  }
  return std::min((1.0 + discrepancy * expected_stop) * std::exp(-h), 1.0);
}

/// Probability that a Lindley queue with increment Y = service - interarrival
/// reaches level h at least once within n steps. A queue whose increments are
/// never positive never leaves 0, so the bound is 0 there.
inline double queue_tail_bound(const IncrementModel& increments, std::size_t n, double h) {
  if (!(increments.mean() < 0.0)) {
    throw Error(ErrorCode::UnstableQueue, "E Y = " + detail::format_double(increments.mean()) +
                                              " >= 0: utilisation is not below 1");
  }
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "h must be positive");
  if (increments.prob_positive() <= 0.0) return 0.0;
  return max_tail_upper(increments, n, h);
}

// ---------------------------------------------------------------------------

/// Monte Carlo estimate of an upper quantile with its order-statistic standard error.
struct QuantileEstimate {
  double value;
  double std_error;
};

struct ThresholdReport {
  IncrementModel model;
  std::size_t n;
  double alpha;
  double lambda_star;
  double ub1, ub2, ub3;
  std::optional<double> lb1, lb2;
  std::optional<LowerBoundDetail> lb_detail;
  std::optional<QuantileEstimate> mc_quantile;
  double exact_moment;  // M_n(lambda*)
  double discrepancy;   // E(1 - e^{lambda* Y})^+
};

/// All analytic thresholds for (model, n, alpha). Lower bounds are filled
/// for normal-llr models only; the Monte Carlo quantile is left empty.
inline ThresholdReport threshold_report(const IncrementModel& model, std::size_t n, double alpha) {
  detail::check_alpha(alpha);
  const double ls = lambda_star(model);
  const double mn = cusum_mgf_recursive(model, ls, n).values.back();
  ThresholdReport r{model,
                    n,
                    alpha,
                    ls,
                    threshold_ub(model, n, alpha, UpperVariant::Ub1, mn),
                    threshold_ub(model, n, alpha, UpperVariant::Ub2),
                    threshold_ub(model, n, alpha, UpperVariant::Ub3),
                    std::nullopt,
                    std::nullopt,
                    std::nullopt,
                    std::nullopt,
                    mn,
                    tilted_discrepancy(model, ls)};
  if (model.is_normal_llr() && n > 0) {
    const auto detail = threshold_lb_detail(model, n, alpha);
    r.lb_detail = detail;
    r.lb1 = detail.h;
    r.lb2 = threshold_lb(model, n, alpha, LowerVariant::Lb2);
  }
  return r;
}

}  // namespace cusum
