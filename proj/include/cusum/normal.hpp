#pragma once

// Standard normal density, distribution and quantile functions.
//
// The quantile follows Wichura's algorithm AS 241 (PPND16), which is
// accurate to about 1e-16 relative over the whole open unit interval.
// Tail-sensitive callers should use normal_upper_quantile(q), which takes
// the upper-tail probability directly and so avoids forming 1 - q.

#include <cmath>
#include <limits>
#include <numbers>

namespace cusum {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double normal_sf(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

/// log Phi(x), finite for all finite x.
inline double normal_log_cdf(double x) {
  if (x > 5.0) return std::log1p(-normal_sf(x));
  if (x > -35.0) return std::log(normal_cdf(x));
  // Asymptotic Mills-ratio series; the first omitted term is below 1e-12.
  const double t = 1.0 / (x * x);
  const double series =
      1.0 - t * (1.0 - t * (3.0 - t * (15.0 - t * (105.0 - t * 945.0))));
  return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log(series);
}

namespace detail {

// AS 241 core: returns z with Phi(z) = p for p in (0, 1), where
// q = p - 0.5 and r = min(p, 1 - p) are supplied by the caller so that the
// tail branch never recomputes 1 - p.
inline double ppnd16(double q, double r) {
  if (std::fabs(q) <= 0.425) {
    const double s = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * s + 33430.575583588128105) * s +
                 67265.770927008700853) * s + 45921.953931549871457) * s +
               13731.693765509461125) * s + 1971.5909503065514427) * s +
             133.14166789178437745) * s + 3.387132872796366608) /
           (((((((5226.495278852545925 * s + 28729.085735721942674) * s +
                 39307.89580009271061) * s + 21213.794301586595867) * s +
               5394.1960214247511077) * s + 687.1870074920579083) * s +
             42.313330701600911252) * s + 1.0);
  }
  double s = std::sqrt(-std::log(r));
  double z;
  if (s <= 5.0) {
    s -= 1.6;
    z = (((((((7.7454501427834140764e-4 * s + 0.0227238449892691845833) * s +
              0.24178072517745061177) * s + 1.27045825245236838258) * s +
            3.64784832476320460504) * s + 5.7694972214606914055) * s +
          4.6303378461565452959) * s + 1.42343711074968357734) /
        (((((((1.05075007164441684324e-9 * s + 5.475938084995344946e-4) * s +
              0.0151986665636164571966) * s + 0.14810397642748007459) * s +
            0.68976733498510000455) * s + 1.6763848301838038494) * s +
          2.05319162663775882187) * s + 1.0);
  } else {
    s -= 5.0;
    z = (((((((2.01033439929228813265e-7 * s + 2.71155556874348757815e-5) * s +
              0.0012426609473880784386) * s + 0.026532189526576123093) * s +
            0.29656057182850489123) * s + 1.7848265399172913358) * s +
          5.4637849111641143699) * s + 6.6579046435011037772) /
        (((((((2.04426310338993978564e-15 * s + 1.4215117583164458887e-7) * s +
              1.8463183175100546818e-5) * s + 7.868691311456132591e-4) * s +
            0.0148753612908506148525) * s + 0.13692988092273580531) * s +
          0.59983220655588793769) * s + 1.0);
  }
  return q < 0.0 ? -z : z;
}

}  // namespace detail

/// Phi^{-1}(p). Returns -inf / +inf at the endpoints and NaN outside [0, 1].
inline double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) return std::numeric_limits<double>::quiet_NaN();
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return detail::ppnd16(p - 0.5, p < 0.5 ? p : 1.0 - p);
}

/// Phi^{-1}(1 - q), computed from the upper-tail mass q without cancellation.
inline double normal_upper_quantile(double q) {
  if (!(q >= 0.0 && q <= 1.0)) return std::numeric_limits<double>::quiet_NaN();
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  if (q == 1.0) return -std::numeric_limits<double>::infinity();
  return -detail::ppnd16(q - 0.5, q < 0.5 ? q : 1.0 - q);
}

}  // namespace cusum
