#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cusum/moments.hpp"
#include "oracles.hpp"

using namespace cusum;

namespace {

const double kP = 1.0 / (1.0 + std::numbers::e);

std::vector<oracle::Atom> atoms_of(const IncrementModel& m) {
  std::vector<oracle::Atom> out;
  for (const auto& a : m.atoms()) out.push_back({a.value, a.prob});
  return out;
}

double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

}  // namespace

TEST(Mean, SmallHorizons) {
  const auto m = IncrementModel::normal_llr(1.0);
  EXPECT_EQ(cusum_mean(m, 0), std::vector<double>{0.0});
  EXPECT_NEAR(cusum_mean(m, 1)[1], 0.19780, 1e-5);
  const double ref = oracle::normal_expectation([](double y) { return std::max(y, 0.0); }, -0.5, 1.0);
  EXPECT_NEAR(cusum_mean(m, 1)[1], ref, 1e-14);
}

TEST(Mean, RecursionIsTheDirectSum) {
  const auto m = IncrementModel::normal_llr(0.8);
  const auto rs = rectified_moment_series(m, 300);
  const auto means = cusum_mean(rs);
  double direct = 0.0;
  for (std::size_t n = 1; n <= 300; ++n) {
    direct += rs.mean_plus[n] / static_cast<double>(n);
    EXPECT_EQ(means[n], direct);
    EXPECT_GE(means[n], means[n - 1]);
  }
}

TEST(MeanVariance, MatchPathEnumeration) {
  const std::vector<IncrementModel> models = {IncrementModel::bernoulli_pm(kP),
                                              IncrementModel::table({-2.0, 0.5, 1.0}, {0.5, 0.3, 0.2})};
  for (const auto& m : models) {
    const auto t = moment_table(m, 10);
    EXPECT_EQ(t.means[0], 0.0);
    EXPECT_EQ(t.variances[0], 0.0);
    for (std::size_t n = 1; n <= 10; ++n) {
      const auto ref = oracle::path_moments(atoms_of(m), n, 1.0);
      EXPECT_NEAR(t.means[n], ref.mean_w, 1e-12) << m.to_string() << " n=" << n;
      EXPECT_NEAR(t.variances[n], ref.var_w, 1e-12) << m.to_string() << " n=" << n;
    }
  }
}

TEST(Variance, FirstStepIsVarianceOfPositivePart) {
  const auto m = IncrementModel::normal_llr(1.3);
  EXPECT_NEAR(cusum_variance(m, 1).values[1], rectified_moments(m, 1).var_plus, 1e-15);
}

TEST(Variance, DirectFormAgainstCubicEvaluation) {
  const auto m = IncrementModel::shifted_normal(-0.3, 1.1);
  const std::size_t N = 60;
  const auto rs = rectified_moment_series(m, N);
  const auto v = cusum_variance(rs).values;
  for (std::size_t n = 1; n <= N; ++n) {
    double s = 0.0;
    for (std::size_t k = 1; k <= n; ++k) s += rs.second_plus[k] / k;
    for (std::size_t k1 = 1; k1 <= n; ++k1) {
      for (std::size_t k2 = 1; k2 <= n; ++k2) {
        if (k1 + k2 > n) s -= rs.mean_plus[k1] / k1 * rs.mean_plus[k2] / k2;
      }
    }
    EXPECT_NEAR(v[n], s, 1e-12) << n;
    EXPECT_GE(v[n], 0.0);
  }
}

TEST(Variance, DiagnosticsFlagThePrintedRecursion) {
  const auto r = cusum_variance(IncrementModel::bernoulli_pm(kP), 12);
  EXPECT_GT(r.diagnostics.naive_recursion_max_abs_diff, 1e-3);
  EXPECT_LT(r.diagnostics.derived_recursion_max_abs_diff, 1e-12);
  EXPECT_FALSE(r.diagnostics.formula_mismatch);
}

TEST(MgfRecursive, SpecValues) {
  const auto m = IncrementModel::normal_llr(1.0);
  EXPECT_EQ(cusum_mgf_recursive(m, 1.0, 0).values, std::vector<double>{1.0});
  const auto s = cusum_mgf_recursive(m, 1.0, 2);
  const double x1 = 2 * oracle::normal_cdf(0.5), x2 = 2 * oracle::normal_cdf(std::sqrt(2.0) / 2);
  EXPECT_NEAR(s[1], x1, 1e-14);
  EXPECT_NEAR(s[2], (x2 + x1 * x1) / 2, 1e-14);
  EXPECT_NEAR(s[2], 1.71650, 1e-5);

  const auto b = cusum_mgf_recursive(IncrementModel::bernoulli_pm(kP), 1.0, 2);
  const double e = std::numbers::e, q = 1 - kP;
  EXPECT_NEAR(b[2], kP * kP * e * e + kP * q * e + q, 1e-14);
  EXPECT_NEAR(b[2], 1.79995, 1e-5);
}

TEST(MgfRecursive, MatchesPathEnumeration) {
  const auto m = IncrementModel::table({-1.5, -0.25, 0.5, 1.25}, {0.4, 0.3, 0.2, 0.1});
  for (double l : {0.5, 1.0, 2.5}) {
    const auto s = cusum_mgf_recursive(m, l, 8);
    for (std::size_t n = 1; n <= 8; ++n) {
      EXPECT_NEAR(rel(s[n], oracle::path_moments(atoms_of(m), n, l).mgf_w), 0.0, 1e-12);
    }
  }
}

TEST(MgfMethods, AgreeAcrossRoutes) {
  const std::vector<IncrementModel> models = {
      IncrementModel::normal_llr(0.5), IncrementModel::normal_llr(2.0),
      IncrementModel::shifted_normal(-0.2, 0.7), IncrementModel::bernoulli_pm(kP),
      IncrementModel::table({-2.0, 0.5, 1.0}, {0.5, 0.3, 0.2})};
  for (const auto& m : models) {
    for (double l : {0.3, 1.0, 1.4}) {
      const auto xs = rectified_exp_series(m, l, 120);
      const auto rec = cusum_mgf_recursive(xs);
      const auto mat = cusum_mgf_matrix(xs);
      const auto bell = rescaled_bell(std::span<const double>(xs.values).subspan(1));
      for (std::size_t n = 0; n <= 120; ++n) {
        EXPECT_LE(rel(mat[n], rec[n]), 1e-12) << m.to_string() << " n=" << n;
        EXPECT_LE(rel(bell[n], rec[n]), 1e-12);
        if (n <= kMaxPartitionOrder) {
          EXPECT_LE(rel(cusum_mgf_partitions(xs, n), rec[n]), 1e-12);
        }
      }
    }
  }
}

TEST(MgfMatrix, SmallCases) {
  const auto m = IncrementModel::normal_llr(1.0);
  EXPECT_EQ(cusum_mgf_matrix(m, 1.0, 0).values, std::vector<double>{1.0});
  const auto xs = rectified_exp_series(m, 1.0, 3);
  TriangularSystem sys(xs);
  EXPECT_EQ(sys.coefficient(0, 0), 0.0);
  EXPECT_EQ(sys.coefficient(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(sys.coefficient(2, 0), xs[2] / 2);
  EXPECT_DOUBLE_EQ(sys.coefficient(3, 1), xs[2] / 3);
  EXPECT_EQ(sys.rhs(0), 1.0);
  EXPECT_EQ(sys.rhs(2), 0.0);
  const auto b = IncrementModel::bernoulli_pm(kP);
  const auto rec = cusum_mgf_recursive(b, 1.0, 10), mat = cusum_mgf_matrix(b, 1.0, 10);
  for (std::size_t n = 0; n <= 10; ++n) EXPECT_LE(rel(mat[n], rec[n]), 1e-12);
}

TEST(MgfPartitions, SmallOrdersAndGuard) {
  const auto m = IncrementModel::normal_llr(1.0);
  const auto xs = rectified_exp_series(m, 1.0, 12);
  EXPECT_EQ(cusum_mgf_partitions(xs, 0), 1.0);
  EXPECT_DOUBLE_EQ(cusum_mgf_partitions(xs, 1), xs[1]);
  EXPECT_DOUBLE_EQ(cusum_mgf_partitions(xs, 2), xs[2] / 2 + xs[1] * xs[1] / 2);
  EXPECT_LE(rel(cusum_mgf_partitions(m, 1.0, 6), cusum_mgf_recursive(m, 1.0, 6)[6]), 1e-12);
  try {
    cusum_mgf_partitions(m, 1.0, 13);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooLarge);
  }
}

TEST(MgfPartitions, LargeFactorsUseLogSpace) {
  // lambda far above lambda* makes x_k huge
  const auto m = IncrementModel::shifted_normal(-0.1, 3.0);
  const auto xs = rectified_exp_series(m, 3.6, 12);
  const auto rec = cusum_mgf_recursive(xs);
  ASSERT_GT(xs[12], 1e300);
  EXPECT_LE(rel(cusum_mgf_partitions(xs, 12), rec[12]), 1e-11);
}

TEST(RescaledBell, Identities) {
  EXPECT_EQ(rescaled_bell(std::vector<double>{3.5})[1], 3.5);
  const auto twos = rescaled_bell(std::vector<double>(50, 2.0));
  for (std::size_t n = 0; n <= 50; ++n) EXPECT_NEAR(twos[n], n + 1.0, 1e-12 * (n + 1));
  const auto zeros = rescaled_bell(std::vector<double>(10, 0.0));
  EXPECT_EQ(zeros[0], 1.0);
  for (std::size_t n = 1; n <= 10; ++n) EXPECT_EQ(zeros[n], 0.0);
}

TEST(RescaledBell, MatchesCompleteBellPolynomials) {
  std::vector<double> xs;
  for (int i = 1; i <= 18; ++i) xs.push_back(std::sin(i) + 0.3 * i);
  const auto got = rescaled_bell(xs);
  const auto ref = oracle::rescaled_bell(xs);
  for (std::size_t n = 0; n <= xs.size(); ++n) {
    EXPECT_NEAR(got[n], static_cast<double>(ref[n]), 1e-12 * std::fabs(static_cast<double>(ref[n])));
  }
}

TEST(MgfProperties, GrowthAndBounds) {
  const std::vector<IncrementModel> models = {IncrementModel::normal_llr(0.5), IncrementModel::normal_llr(3.0),
                                              IncrementModel::bernoulli_pm(kP), IncrementModel::bernoulli_pm(0.2),
                                              IncrementModel::table({-2.0, 0.5, 1.0}, {0.5, 0.3, 0.2})};
  for (const auto& m : models) {
    const double ls = lambda_star(m);
    const double d = tilted_discrepancy(m, ls);
    const auto crit = cusum_mgf_recursive(m, ls, 300);
    for (double l : {0.3 * ls, 0.9 * ls, 1.2 * ls}) {
      const auto s = cusum_mgf_recursive(m, l, 300);
      for (std::size_t n = 1; n <= 300; ++n) {
        EXPECT_GE(s[n], s[n - 1] * (1 - 1e-14));
        EXPECT_GE(s[n] * (1 + 1e-12), std::pow(mgf(m, l), double(n)));
        if (l < ls) {
          EXPECT_LE(s[n], std::pow(crit[n], l / ls) * (1 + 1e-12));
        }
      }
    }
    for (std::size_t n = 1; n <= 300; ++n) {
      EXPECT_GE(crit[n], 1.0);
      EXPECT_LE(crit[n], (1.0 + n * d) * (1 + 1e-12));
      EXPECT_LE(1.0 + n * d, n + 1.0);
    }
  }
}

TEST(Asymptote, RejectsDegenerateModels) {
  const auto m = IncrementModel::table({-1.0, -0.5}, {0.5, 0.5});
  try {
    asymptote_slope(m, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateModel);
  }
  EXPECT_THROW(asymptote_slope(IncrementModel::normal_llr(1.0), 0.5), Error);
}

TEST(Asymptote, SlopeMatchesEmpiricalSlope) {
  for (const auto& m : {IncrementModel::normal_llr(1.0), IncrementModel::bernoulli_pm(kP),
                        IncrementModel::bernoulli_pm(0.2)}) {
    const double ls = lambda_star(m);
    const auto a = asymptote_slope(m, ls);
    const auto s = cusum_mgf_recursive(m, ls, 2000);
    const double empirical = (s[2000] - s[1000]) / 1000.0;
    EXPECT_LT(rel(a.slope, empirical), 0.01) << m.to_string();
    EXPECT_GT(a.slope, 0.0);
    // first differences converge to the slope and M_n approaches a n + b
    EXPECT_NEAR(s[2000] - s[1999], a.slope, 1e-6 * a.slope);
    EXPECT_NEAR(s[2000], a.slope * 2000 + a.intercept, 1e-6 * s[2000]);
  }
}

TEST(Moments, CauchyInHorizon) {
  const auto t = moment_table(IncrementModel::normal_llr(2.0), 2000);
  EXPECT_LT(std::fabs(t.means[2000] - t.means[1000]), 1e-6);
  EXPECT_LT(std::fabs(t.variances[2000] - t.variances[1000]), 1e-6);
}
