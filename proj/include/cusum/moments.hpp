#pragma once

// CUSUM moments E W_n, Var W_n and M_n(lambda) = E e^{lambda W_n} computed
// from the moments of rectified sums. Four algebraically equivalent routes
// exist for M_n: the convolution recursion, the unit lower-triangular
// system, the integer-partition sum, and rescaled Bell polynomials.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/rectified.hpp"

namespace cusum {

// ---------------------------------------------------------------------------
// Mean and variance

/// E_0..E_N via E_n = E_{n-1} + E S_n^+ / n.
inline std::vector<double> cusum_mean(const RectifiedMomentSeries& rs) {
  const std::size_t horizon = rs.horizon();
  std::vector<double> means(horizon + 1, 0.0);
  for (std::size_t n = 1; n <= horizon; ++n) {
    means[n] = means[n - 1] + rs.mean_plus[n] / static_cast<double>(n);
  }
  return means;
}

inline std::vector<double> cusum_mean(const IncrementModel& model, std::size_t horizon) {
  return cusum_mean(rectified_moment_series(model, horizon));
}

/// How the two recursive variance formulas compare with the direct sum.
struct VarianceDiagnostics {
  /// max_n |V_n(direct) - V_n(recursion with increment Var S_n^+/n + sum_k m_k m_{n+1-k})|,
  /// the naive recursion, which disagrees already at n = 1.
  double naive_recursion_max_abs_diff = 0.0;
  /// Same comparison against the increment derived from the direct sum.
  double derived_recursion_max_abs_diff = 0.0;
  /// Set when the derived recursion strays from the direct sum by more than 1e-9.
  bool formula_mismatch = false;
};

struct VarianceResult {
  std::vector<double> values;
  VarianceDiagnostics diagnostics;
};

/// V_0..V_N from the direct sum
///   V_n = sum_k Var S_k^+/k + sum_k (E S_k^+)^2/k - sum_{k1,k2<=n, k1+k2>n} m_{k1} m_{k2},
/// with m_k = E S_k^+/k. The inner sum over k2 uses prefix sums, so the
/// whole table costs O(N^2).
inline VarianceResult cusum_variance(const RectifiedMomentSeries& rs) {
  const std::size_t horizon = rs.horizon();
  std::vector<double> m(horizon + 1, 0.0), prefix(horizon + 1, 0.0);
  for (std::size_t k = 1; k <= horizon; ++k) {
    m[k] = rs.mean_plus[k] / static_cast<double>(k);
    prefix[k] = prefix[k - 1] + m[k];
  }

  VarianceResult out{std::vector<double>(horizon + 1, 0.0), {}};
  double diag_sum = 0.0;  // sum_k [Var S_k^+ + (E S_k^+)^2] / k
  double naive = 0.0, derived = 0.0;
  for (std::size_t n = 1; n <= horizon; ++n) {
    const double dn = static_cast<double>(n);
    diag_sum += (rs.var_plus(n) + rs.mean_plus[n] * rs.mean_plus[n]) / dn;
    double cross = 0.0;
    for (std::size_t k1 = 1; k1 <= n; ++k1) cross += m[k1] * (prefix[n] - prefix[n - k1]);
    const double direct = diag_sum - cross;
    out.values[n] = direct;

    double naive_inc = rs.var_plus(n) / dn;
    for (std::size_t k = 1; k <= n; ++k) naive_inc += m[k] * m[n + 1 - k];
    double conv = 0.0;
    for (std::size_t k = 1; k < n; ++k) conv += m[k] * m[n - k];
    const double derived_inc = rs.var_plus(n) / dn + (dn - 1.0) * m[n] * m[n] + conv -
                               2.0 * m[n] * prefix[n - 1];
    naive += naive_inc;
    derived += derived_inc;
    auto& d = out.diagnostics;
    d.naive_recursion_max_abs_diff =
        std::max(d.naive_recursion_max_abs_diff, std::fabs(naive - direct));
    d.derived_recursion_max_abs_diff =
        std::max(d.derived_recursion_max_abs_diff, std::fabs(derived - direct));
  }
  out.diagnostics.formula_mismatch = out.diagnostics.derived_recursion_max_abs_diff > 1e-9;
  return out;
}

inline VarianceResult cusum_variance(const IncrementModel& model, std::size_t horizon) {
  return cusum_variance(rectified_moment_series(model, horizon));
}

struct MomentTable {
  std::size_t horizon = 0;
  std::vector<double> means;
  std::vector<double> variances;
  VarianceDiagnostics diagnostics;
};

inline MomentTable moment_table(const IncrementModel& model, std::size_t horizon) {
  const auto rs = rectified_moment_series(model, horizon);
  auto var = cusum_variance(rs);
  return {horizon, cusum_mean(rs), std::move(var.values), var.diagnostics};
}

// ---------------------------------------------------------------------------
// Moment generating function

struct MgfSeries {
  double lambda = 0.0;
  std::vector<double> values;  // M_0..M_N

  std::size_t horizon() const noexcept { return values.empty() ? 0 : values.size() - 1; }
  double operator[](std::size_t n) const { return values[n]; }
};

/// Rescaled Bell polynomials B~_0..B~_N of x_1..x_N, B~_0 = 1,
/// B~_{n+1} = (1/(n+1)) sum_{k=0}^{n} B~_k x_{n-k+1}.
inline std::vector<double> rescaled_bell(std::span<const double> xs) {
  const std::size_t horizon = xs.size();
  std::vector<double> b(horizon + 1, 0.0);
  b[0] = 1.0;
  for (std::size_t n = 0; n < horizon; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k <= n; ++k) s += b[k] * xs[n - k];
    b[n + 1] = s / static_cast<double>(n + 1);
  }
  return b;
}

/// M_{n+1} = (1/(n+1)) sum_{k=0}^{n} M_k x_{n-k+1}, M_0 = 1.
inline MgfSeries cusum_mgf_recursive(const RectifiedSeries& xs) {
  const std::size_t horizon = xs.horizon();
  MgfSeries out{xs.lambda, std::vector<double>(horizon + 1, 0.0)};
  auto& mv = out.values;
  mv[0] = 1.0;
  for (std::size_t n = 0; n < horizon; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k <= n; ++k) s += mv[k] * xs[n - k + 1];
    mv[n + 1] = s / static_cast<double>(n + 1);
  }
  return out;
}

inline MgfSeries cusum_mgf_recursive(const IncrementModel& model, double lambda,
                                     std::size_t horizon) {
  return cusum_mgf_recursive(rectified_exp_series(model, lambda, horizon));
}

/// Strictly lower-triangular A with A[i][j] = x_{i-j}/i (j < i), so that
/// M = A M + e with e = (1, 0, ..., 0). Stored packed by rows.
class TriangularSystem {
 public:
  explicit TriangularSystem(const RectifiedSeries& xs)
      : size_(xs.horizon() + 1), entries_(size_ * (size_ - 1) / 2) {
    for (std::size_t i = 1; i < size_; ++i) {
      const double inv = 1.0 / static_cast<double>(i);
      for (std::size_t j = 0; j < i; ++j) entries_[offset(i) + j] = xs[i - j] * inv;
    }
  }

  std::size_t size() const noexcept { return size_; }
  double coefficient(std::size_t i, std::size_t j) const {
    return j < i ? entries_[offset(i) + j] : 0.0;
  }
  double rhs(std::size_t i) const noexcept { return i == 0 ? 1.0 : 0.0; }

  /// Forward substitution for (I - A) M = e.
  std::vector<double> solve() const {
    std::vector<double> mv(size_, 0.0);
    for (std::size_t i = 0; i < size_; ++i) {
      double s = rhs(i);
      const double* row = entries_.data() + (i ? offset(i) : 0);
      for (std::size_t j = 0; j < i; ++j) s += row[j] * mv[j];
      mv[i] = s;
    }
    return mv;
  }

 private:
  static std::size_t offset(std::size_t i) { return i * (i - 1) / 2; }

  std::size_t size_;
  std::vector<double> entries_;
};

inline MgfSeries cusum_mgf_matrix(const RectifiedSeries& xs) {
  return {xs.lambda, TriangularSystem(xs).solve()};
}

inline MgfSeries cusum_mgf_matrix(const IncrementModel& model, double lambda,
                                  std::size_t horizon) {
  return cusum_mgf_matrix(rectified_exp_series(model, lambda, horizon));
}

inline constexpr std::size_t kMaxPartitionOrder = 12;

/// M_n as the sum over partitions of n, encoded as multiplicities
/// (k_1..k_n) with sum_j j k_j = n, of prod_r x_r^{k_r} / (r^{k_r} k_r!).
/// Partitions are visited in lexicographic order of the multiplicity vector.
inline double cusum_mgf_partitions(const RectifiedSeries& xs, std::size_t n) {
  if (n > kMaxPartitionOrder) {
    throw Error(ErrorCode::TooLarge, "partition sum limited to n <= 12, got " + std::to_string(n));
  }
  if (xs.horizon() < n) throw Error(ErrorCode::InvalidArgument, "rectified series too short");
  if (n == 0) return 1.0;

  // factor(r, k) = x_r^k / (r^k k!)
  auto factor = [&](std::size_t r, std::size_t k) {
    double f = 1.0;
    for (std::size_t i = 1; i <= k; ++i) f *= xs[r] / (static_cast<double>(r) * static_cast<double>(i));
    return f;
  };

  std::vector<std::size_t> mult(n + 1, 0);
  double total = 0.0;
  // Enumerate k_1 first (outermost), giving lexicographic order over (k_1, ..., k_n).
  auto visit = [&](auto&& self, std::size_t r, std::size_t remaining) -> void {
    if (r > n) {
      if (remaining != 0) return;
      bool huge = false;
      double prod = 1.0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (!mult[j]) continue;
        const double f = factor(j, mult[j]);
        if (f > 1e300) huge = true;
        prod *= f;
      }
      if (huge) {
        double log_prod = 0.0;
        for (std::size_t j = 1; j <= n; ++j) {
          const auto k = mult[j];
          if (!k) continue;
          log_prod += static_cast<double>(k) * (std::log(xs[j]) - std::log(static_cast<double>(j))) -
                      std::lgamma(static_cast<double>(k) + 1.0);
        }
        prod = std::exp(log_prod);
      }
      total += prod;
      return;
    }
    for (std::size_t k = 0; k * r <= remaining; ++k) {
      mult[r] = k;
      self(self, r + 1, remaining - k * r);
    }
    mult[r] = 0;
  };
  visit(visit, 1, n);
  return total;
}

inline double cusum_mgf_partitions(const IncrementModel& model, double lambda, std::size_t n) {
  if (n > kMaxPartitionOrder) {
    throw Error(ErrorCode::TooLarge, "partition sum limited to n <= 12, got " + std::to_string(n));
  }
  return cusum_mgf_partitions(rectified_exp_series(model, lambda, n), n);
}

// ---------------------------------------------------------------------------
// Slant asymptote at lambda*

struct Asymptote {
  double slope;
  double intercept;
  std::size_t terms;
};

struct AsymptoteOptions {
  double tol = 1e-10;
  std::size_t max_terms = 20000;
};

/// Slope a = lim_n (M_n(lambda*) - M_{n-1}(lambda*)) = sum_k D_k with
/// D_k = B~_k(x_1 - 2, ..., x_k - 2), x_k = E e^{lambda* S_k^+}, and
/// intercept b = lim_n (M_n - a n). Terms are accumulated until
/// |D_k| < tol (1 - rho) where rho is the observed ratio |D_k / D_{k-1}|
/// capped at 0.9.
inline Asymptote asymptote_slope(const IncrementModel& model, double lambda_star_value,
                                 AsymptoteOptions options = {}) {
  if (model.prob_positive() <= 0.0) {
    throw Error(ErrorCode::DegenerateModel,
                "P(Y > 0) = 0: W_n is identically 0 and M_n has the horizontal asymptote 1");
  }
  if (!(lambda_star_value > 0.0) || std::fabs(std::expm1(model.log_mgf(lambda_star_value))) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "lambda* must satisfy E exp(lambda* Y) = 1");
  }

  // The series is generated in blocks so x_k need not be recomputed.
  std::size_t cap = 256;
  std::vector<double> diff;  // D_0, D_1, ...
  RectifiedSeries xs;
  std::vector<double> shifted;
  std::size_t stop = 0;
  while (true) {
    cap = std::min(cap, options.max_terms);
    xs = rectified_exp_series(model, lambda_star_value, cap);
    shifted.assign(cap, 0.0);
    for (std::size_t k = 1; k <= cap; ++k) shifted[k - 1] = xs[k] - 2.0;
    diff = rescaled_bell(shifted);
    for (std::size_t k = 2; k <= cap; ++k) {
      const double prev = std::fabs(diff[k - 1]);
      const double rho = prev > 0.0 ? std::min(std::fabs(diff[k]) / prev, 0.9) : 0.9;
      if (std::fabs(diff[k]) < options.tol * (1.0 - rho) && std::fabs(diff[k - 1]) < options.tol) {
        stop = k;
        break;
      }
    }
    if (stop) break;
    if (cap >= options.max_terms) {
      throw Error(ErrorCode::NoConvergence,
                  "second differences did not contract within " + std::to_string(cap) + " terms");
    }
    cap *= 4;
  }

  double slope = 0.0;
  for (std::size_t k = 0; k <= stop; ++k) slope += diff[k];
  // First differences F_k = sum_{j<=k} D_j; M_n = sum_{k<=n} F_k, so
  // b = lim (M_n - a n) = a + sum_k (F_k - a).
  double intercept = slope, first = 0.0;
  for (std::size_t k = 0; k <= stop; ++k) {
    first += diff[k];
    intercept += first - slope;
  }
  return {slope, intercept, stop + 1};
}

}  // namespace cusum
