// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "cusum/bounds.hpp"
#include "cusum/detector.hpp"
#include "cusum/exact.hpp"
#include "cusum/moments.hpp"
#include "cusum/simulate.hpp"

using namespace cusum;

namespace {

const double kP = 1.0 / (1.0 + std::numbers::e);
constexpr std::uint64_t kSeed = kDefaultSeed;

struct Verdict {
  bool pass;
  std::string detail;
};

double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

IncrementModel three_atom() { return IncrementModel::table({-2.0, 0.5, 1.0}, {0.5, 0.3, 0.2}); }

const std::vector<double> kCrossDeltas = {0.1, 0.5, 1.0, 2.0, 5.0};
const std::vector<double> kFig4Deltas = {0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
const std::vector<std::size_t> kFig4Ns = {50, 200, 500, 1000};

// Threshold-chain quantiles, reused by criterion 9.
std::vector<std::vector<QuantileEstimate>> g_fig4;

Verdict oracle_equivalence() {
  double worst = 0.0;
  for (const auto& m : {IncrementModel::bernoulli_pm(kP), three_atom()}) {
    const auto tab = moment_table(m, 14);
    std::vector<MgfSeries> mgfs;
    for (double l : {0.5, 1.0, 1.3}) mgfs.push_back(cusum_mgf_recursive(m, l, 14));
    for (std::size_t n = 1; n <= 14; ++n) {
      const auto d = exact_enumerate(m, n);
      worst = std::max(worst, std::fabs(d.mean_w() - tab.means[n]));
      worst = std::max(worst, std::fabs(d.variance_w() - tab.variances[n]));
      const double ls[] = {0.5, 1.0, 1.3};
      for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::fabs(d.mgf_w(ls[i]) - mgfs[i][n]));
    }
  }
  return {worst <= 1e-10, fmt("max |engine - enumeration| = %.3g (tol 1e-10)", worst)};
}

Verdict cross_method() {
  double worst = 0.0;
  for (double delta : kCrossDeltas) {
    const auto xs = rectified_exp_series(IncrementModel::normal_llr(delta), 1.0, 500);
    const auto rec = cusum_mgf_recursive(xs);
    const auto mat = cusum_mgf_matrix(xs);
    const auto bell = rescaled_bell(std::span<const double>(xs.values).subspan(1));
    for (std::size_t n = 0; n <= 500; ++n) {
      worst = std::max({worst, rel(mat[n], rec[n]), rel(bell[n], rec[n])});
      if (n <= kMaxPartitionOrder) worst = std::max(worst, rel(cusum_mgf_partitions(xs, n), rec[n]));
    }
  }
  return {worst <= 1e-12, fmt("max relative spread across four methods = %.3g (tol 1e-12)", worst)};
}

Verdict linearity() {
  double worst_diff = 0.0, worst_slope = 0.0;
  for (double delta : {0.5, 1.0}) {
    const auto m = IncrementModel::normal_llr(delta);
    const auto s = cusum_mgf_recursive(m, 1.0, 2000);
    worst_diff = std::max(worst_diff, rel(s[2000] - s[1999], s[1000] - s[999]));
    const double empirical = (s[2000] - s[1000]) / 1000.0;
    worst_slope = std::max(worst_slope, rel(asymptote_slope(m, 1.0).slope, empirical));
  }
  return {worst_diff < 0.01 && worst_slope < 0.01,
          fmt("first differences n=1000 vs 2000 differ by %.3g, slope vs empirical by %.3g (tol 0.01)",
              worst_diff, worst_slope)};
}

Verdict stabilisation() {
  const auto t = moment_table(IncrementModel::normal_llr(1.0), 2000);
  const double de = std::fabs(t.means[2000] - t.means[1000]);
  const double dv = std::fabs(t.variances[2000] - t.variances[1000]);
  return {de < 1e-4 && dv < 1e-3,
          fmt("|E_2000 - E_1000| = %.3g (tol 1e-4), |V_2000 - V_1000| = %.3g (tol 1e-3)", de, dv)};
}

Verdict sandwich() {
  struct Case {
    IncrementModel model;
    std::size_t horizon;
  };
  std::vector<Case> cases = {{IncrementModel::bernoulli_pm(kP), 14}, {three_atom(), 14}};
  for (double d : kCrossDeltas) cases.push_back({IncrementModel::normal_llr(d), 500});
  for (double d : {0.5, 1.0}) cases.push_back({IncrementModel::normal_llr(d), 2000});
  std::size_t violations = 0, checked = 0;
  double tightest = INFINITY;
  for (const auto& c : cases) {
    const double ls = lambda_star(c.model);
    const double d = tilted_discrepancy(c.model, ls);
    const auto s = cusum_mgf_recursive(c.model, ls, c.horizon);
    for (std::size_t n = 1; n <= c.horizon; ++n) {
      const double upper = 1.0 + static_cast<double>(n) * d;
      // at n = 1 the middle inequality is an identity; allow rounding there
      const bool ok = s[n] >= 1.0 && s[n] <= upper * (1.0 + 1e-12) && upper <= n + 1.0;
      violations += !ok;
      ++checked;
      if (n > 1) tightest = std::min(tightest, (upper - s[n]) / upper);
    }
  }
  return {violations == 0, fmt("%zu violations in %zu checks; smallest relative gap for n > 1: %.3g",
                               violations, checked, tightest)};
}

Verdict regimes() {
  const auto m = IncrementModel::normal_llr(1.0);
  const auto crit = cusum_mgf_recursive(m, 1.0, 2000);
  const auto sub = cusum_mgf_recursive(m, 0.999, 2000);
  const auto sup = cusum_mgf_recursive(m, 1.001, 2000);
  const double v = mgf(m, 1.001);
  std::size_t bad_sub = 0, bad_sup = 0;
  for (std::size_t n = 0; n <= 2000; ++n) {
    bad_sub += !(sub[n] <= std::pow(crit[n], 0.999));
    bad_sup += !(sup[n] >= std::pow(v, static_cast<double>(n)));
  }
  return {bad_sub == 0 && bad_sup == 0,
          fmt("subcritical violations %zu, supercritical violations %zu over n = 0..2000", bad_sub, bad_sup)};
}

Verdict threshold_chain() {
  std::size_t violations = 0;
  std::string first;
  g_fig4.clear();
  for (double delta : kFig4Deltas) {
    const auto m = IncrementModel::normal_llr(delta);
    const auto mc = mc_quantile_max_profile(m, kFig4Ns, 0.05, 100000, kSeed, 0);
    g_fig4.push_back(mc);
    for (std::size_t i = 0; i < kFig4Ns.size(); ++i) {
      const auto r = threshold_report(m, kFig4Ns[i], 0.05);
      const double h = mc[i].value, se = mc[i].std_error;
      const bool ok = *r.lb2 <= *r.lb1 && *r.lb1 <= h + 3 * se && h <= r.ub1 + 3 * se && r.ub1 <= r.ub3 &&
                      r.ub3 <= r.ub2;
      if (!ok) {
        ++violations;
        if (first.empty()) {
          first = fmt("; first: delta=%g n=%zu lb2=%.4f lb1=%.4f mc=%.4f+-%.4f ub1=%.4f ub3=%.4f ub2=%.4f", delta,
                      kFig4Ns[i], *r.lb2, *r.lb1, h, se, r.ub1, r.ub3, r.ub2);
        }
      }
    }
  }
  return {violations == 0,
          fmt("%zu of %zu scenarios violate the chain", violations, kFig4Deltas.size() * kFig4Ns.size()) + first};
}

Verdict coverage() {
  const auto m = IncrementModel::normal_llr(0.5);
  const auto maxima = simulate_running_max(m, {500}, 100000, kSeed + 1, 0)[0];
  std::string detail;
  bool pass = true;
  for (auto variant : {UpperVariant::Ub1, UpperVariant::Ub3}) {
    const double h = threshold_ub(m, 500, 0.05, variant);
    const auto est = tail_fraction(maxima, h);
    pass = pass && est.p_hat <= 0.05 + est.ci_halfwidth;
    if (!detail.empty()) detail += "; ";
    detail += fmt("%s: h=%.4f rate=%.5f (limit %.5f)", std::string(to_string(variant)).c_str(), h, est.p_hat,
                  0.05 + est.ci_halfwidth);
  }
  return {pass, detail};
}

Verdict figure5_shape() {
  auto at = [](double delta) {
    for (std::size_t i = 0; i < g_fig4.size(); ++i) {
      if (kFig4Deltas[i] == delta) return g_fig4[i][3];
    }
    return mc_quantile_max(IncrementModel::normal_llr(delta), 1000, 0.05, 100000, kSeed, 0);
  };
  const auto lo = at(0.1), mid = at(1.0), hi = at(4.0);
  const double gap_lo = mid.value - lo.value, se_lo = std::hypot(mid.std_error, lo.std_error);
  const double gap_hi = mid.value - hi.value, se_hi = std::hypot(mid.std_error, hi.std_error);
  return {gap_lo > 3 * se_lo && gap_hi > 3 * se_hi,
          fmt("h(0.1)=%.4f h(1)=%.4f h(4)=%.4f; gaps %.4f (3se %.4f), %.4f (3se %.4f)", lo.value, mid.value,
              hi.value, gap_lo, 3 * se_lo, gap_hi, 3 * se_hi)};
}

Verdict growth_exponent() {
  const auto s = cusum_mgf_recursive(IncrementModel::normal_llr(1.0), 1.0, 2000);
  const double r500 = s[500] / std::pow(500.0, 0.9);
  const double r1000 = s[1000] / std::pow(1000.0, 0.9);
  const double r2000 = s[2000] / std::pow(2000.0, 0.9);
  return {r500 < r1000 && r1000 < r2000,
          fmt("M_n(1)/n^0.9 at n=500,1000,2000: %.6f, %.6f, %.6f", r500, r1000, r2000)};
}

Verdict detector_calibration() {
  const auto pair = HypothesisPair::normal_shift(0.0, 0.5, 1.0);
  const double h = threshold_ub(pair.increment_model(), 500, 0.05, UpperVariant::Ub3);
  const std::size_t runs = 10000;
  std::size_t hits = 0, mismatched = 0;
  for (std::size_t rep = 0; rep < runs; ++rep) {
    CounterRng rng(kSeed + 2, rep);
    std::vector<double> xs(500);
    for (auto& x : xs) x = normal_quantile(rng.uniform());
    const auto ys = llr_increments(pair, xs);
    const auto r = scan_offline(ys, h);
    hits += r.detected;
    if (rep < 100) {
      CusumState st;
      for (std::size_t t = 0; t < ys.size(); ++t) {
        st = monitor_step(st, ys[t], INFINITY).state;
        if (st.w != r.path[t + 1]) {
          ++mismatched;
          break;
        }
      }
    }
  }
  const double rate = static_cast<double>(hits) / runs;
  const double limit = 0.05 + 3 * std::sqrt(rate * (1 - rate) / runs);
  return {rate <= limit && mismatched == 0,
          fmt("h=%.4f null detection rate %.4f (limit %.4f); offline/streamed mismatches %zu of 100", h, rate, limit,
              mismatched)};
}

Verdict lower_envelope() {
  const auto est = mc_tail_max(IncrementModel::normal_llr(1.0), 500, 4.0, 100000, kSeed + 3, 0);
  bool pass = true;
  std::string detail = fmt("p_hat=%.5f (3se %.5f); envelope", est.p_hat, est.ci_halfwidth);
  for (std::size_t k : {1u, 5u, 10u, 20u}) {
    const double lb = segment_tail_lower(1.0, 500, k, 4.0);
    pass = pass && est.p_hat >= lb - est.ci_halfwidth;
    detail += fmt(" k=%zu:%.5f", k, lb);
  }
  return {pass, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double time_limit;  // seconds, 0 when unbounded
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", 10, oracle_equivalence},
      {2, "cross-method identity", 10, cross_method},
      {3, "linear growth at the critical exponent", 30, linearity},
      {4, "mean and variance stabilise", 0, stabilisation},
      {5, "bound sandwich", 0, sandwich},
      {6, "sub- and supercritical regimes", 0, regimes},
      {7, "threshold chain", 300, threshold_chain},
      {8, "coverage of ub1 and ub3", 0, coverage},
      {9, "threshold peaks in delta", 0, figure5_shape},
      {10, "growth faster than n^0.9", 0, growth_exponent},
      {11, "detector calibration", 0, detector_calibration},
      {12, "segment lower envelope", 0, lower_envelope},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.time_limit == 0 || secs < c.time_limit;
    const bool pass = v.pass && in_time;
    failures += !pass;
    std::printf("criterion %2d %s  %s: %s [%.2f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
