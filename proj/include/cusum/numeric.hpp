#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

#include "cusum/error.hpp"

namespace cusum {

/// Pairwise (cascade) summation; result is independent of how the input
/// was produced, which keeps parallel reductions reproducible.
inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

struct RootResult {
  double x;
  double residual;
  int iterations;
};

/// Root of an increasing function on [lo, hi] with f(lo) < 0 < f(hi).
/// Bisection keeps the bracket; a Newton step is taken whenever it lands
/// strictly inside the current bracket. Stops once |f| <= tol or the
/// bracket collapses to adjacent doubles.
inline RootResult safeguarded_newton(const std::function<double(double)>& f,
                                     const std::function<double(double)>& df,
                                     double lo, double hi, double tol,
                                     int max_iter = 500) {
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < max_iter; ++it) {
    const double fx = f(x);
    if (std::fabs(fx) <= tol) return {x, fx, it};
    if (fx < 0.0) lo = x; else hi = x;
    if (!(hi - lo > 0.0) || std::nextafter(lo, hi) >= hi) return {x, fx, it};
    const double d = df(x);
    double next = (d > 0.0 && std::isfinite(d)) ? x - fx / d : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  throw Error(ErrorCode::NoConvergence, "root search exceeded iteration cap");
}

}  // namespace cusum
