#pragma once

// Monte Carlo simulation of CUSUM paths.
//
// Every replication draws from its own counter-based stream keyed by
// (seed, replication index), and per-replication results are reduced with
// pairwise summation in index order, so the output does not depend on the
// number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <thread>
#include <vector>

#include "cusum/bounds.hpp"
#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/normal.hpp"
#include "cusum/numeric.hpp"

namespace cusum {

inline constexpr std::uint64_t kDefaultSeed = 20240607;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stateless generator: the i-th output of stream (seed, stream) is a hash
/// of (key, i). Streams can be created in any order on any thread.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(mix64(seed + 0x9e3779b97f4a7c15ULL) ^ (stream * 0xd1b54a32d192ed03ULL))) {}

  std::uint64_t next() noexcept {
    return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Draws increments of a model by inversion.
class IncrementSampler {
 public:
  explicit IncrementSampler(const IncrementModel& model) : normal_(model.is_normal()) {
    if (normal_) {
      mean_ = model.normal_mean();
      sigma_ = model.normal_sigma();
      return;
    }
    double c = 0.0;
    for (const auto& a : model.atoms()) {
      c += a.prob;
      values_.push_back(a.value);
      cumulative_.push_back(c);
    }
    cumulative_.back() = 1.0;
  }

  double operator()(CounterRng& rng) const noexcept {
    const double u = rng.uniform();
    if (normal_) return mean_ + sigma_ * normal_quantile(u);
    std::size_t i = 0;
    while (u > cumulative_[i]) ++i;
    return values_[i];
  }

 private:
  bool normal_;
  double mean_ = 0.0, sigma_ = 1.0;
  std::vector<double> values_;
  std::vector<double> cumulative_;
};

namespace detail {

inline unsigned resolve_workers(unsigned requested, std::size_t reps) {
  unsigned w = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  return static_cast<unsigned>(std::min<std::size_t>(w, std::max<std::size_t>(reps, 1)));
}

/// Calls fn(rep) for rep in [0, reps), split into contiguous blocks.
template <class Fn>
void parallel_reps(std::size_t reps, unsigned workers, Fn&& fn) {
  workers = resolve_workers(workers, reps);
  if (workers <= 1) {
    for (std::size_t r = 0; r < reps; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = reps * w / workers;
    const std::size_t hi = reps * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t r = lo; r < hi; ++r) fn(r);
    });
  }
  for (auto& t : pool) t.join();
}

inline double sample_variance(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return 0.0;
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - mean) * (xs[i] - mean);
  return pairwise_sum(sq) / static_cast<double>(xs.size() - 1);
}

inline double sample_mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace detail

struct SimConfig {
  IncrementModel model;
  std::size_t n = 0;
  std::size_t reps = 0;
  std::uint64_t seed = kDefaultSeed;
  unsigned parallel_streams = 1;  // 0: one per hardware thread
  double lambda = 1.0;            // exponent of the exp-moment estimate
};

struct PathRecord {
  double w_n;
  double max_w;
};

struct Estimate {
  double value;
  double std_error;
};

struct SimSummary {
  Estimate mean_w;
  double var_w;
  Estimate mean_max;
  Estimate exp_moment;  // E e^{lambda W_n}
};

struct SimResult {
  std::vector<PathRecord> records;
  SimSummary summary;
};

/// One replication's full path W_0..W_n and its increments Y_1..Y_n.
struct SimulatedPath {
  std::vector<double> increments;
  std::vector<double> w;
};

inline SimulatedPath simulate_path(const IncrementModel& model, std::size_t n, std::uint64_t seed,
                                   std::uint64_t rep) {
  IncrementSampler draw(model);
  CounterRng rng(seed, rep);
  SimulatedPath p{std::vector<double>(n), std::vector<double>(n + 1, 0.0)};
  for (std::size_t t = 0; t < n; ++t) {
    p.increments[t] = draw(rng);
    p.w[t + 1] = std::max(p.w[t] + p.increments[t], 0.0);
  }
  return p;
}

/// Running maxima max_{[0,n]} W_t at each checkpoint n, for every
/// replication: out[c][rep]. A replication's path at a smaller horizon is
/// the prefix of its longer path, so results for a given n do not depend
/// on which other checkpoints were requested.
inline std::vector<std::vector<double>> simulate_running_max(const IncrementModel& model,
                                                             std::vector<std::size_t> checkpoints,
                                                             std::size_t reps, std::uint64_t seed,
                                                             unsigned workers = 1) {
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end())) {
    throw Error(ErrorCode::InvalidArgument, "checkpoints must be sorted");
  }
  std::vector<std::vector<double>> out(checkpoints.size(), std::vector<double>(reps, 0.0));
  if (checkpoints.empty()) return out;
  const IncrementSampler draw(model);
  const std::size_t horizon = checkpoints.back();
  detail::parallel_reps(reps, workers, [&](std::size_t rep) {
    CounterRng rng(seed, rep);
    double w = 0.0, mx = 0.0;
    std::size_t c = 0;
    for (std::size_t t = 0; t <= horizon; ++t) {
      if (t > 0) {
        w = std::max(w + draw(rng), 0.0);
        mx = std::max(mx, w);
      }
      while (c < checkpoints.size() && checkpoints[c] == t) out[c++][rep] = mx;
    }
  });
  return out;
}

inline SimResult simulate_cusum(const SimConfig& config) {
  if (config.reps == 0) throw Error(ErrorCode::InvalidArgument, "reps must be at least 1");
  const IncrementSampler draw(config.model);
  std::vector<PathRecord> records(config.reps);
  detail::parallel_reps(config.reps, config.parallel_streams, [&](std::size_t rep) {
    CounterRng rng(config.seed, rep);
    double w = 0.0, mx = 0.0;
    for (std::size_t t = 0; t < config.n; ++t) {
      w = std::max(w + draw(rng), 0.0);
      mx = std::max(mx, w);
    }
    records[rep] = {w, mx};
  });

  const double reps = static_cast<double>(config.reps);
  std::vector<double> ws(config.reps), maxes(config.reps), exps(config.reps);
  for (std::size_t i = 0; i < config.reps; ++i) {
    ws[i] = records[i].w_n;
    maxes[i] = records[i].max_w;
    exps[i] = std::exp(config.lambda * records[i].w_n);
  }
  const double mw = detail::sample_mean(ws);
  const double vw = detail::sample_variance(ws, mw);
  const double mm = detail::sample_mean(maxes);
  const double me = detail::sample_mean(exps);
  SimSummary s{{mw, std::sqrt(vw / reps)},
               vw,
               {mm, std::sqrt(detail::sample_variance(maxes, mm) / reps)},
               {me, std::sqrt(detail::sample_variance(exps, me) / reps)}};
  return {std::move(records), s};
}

namespace detail {

inline void check_quantile_args(std::size_t reps, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidAlpha, "alpha must lie in (0, 1], got " + format_double(alpha));
  }
  if (alpha < 1.0 && static_cast<double>(reps) * alpha < 100.0) {
    throw Error(ErrorCode::InsufficientReps,
                "reps * alpha = " + format_double(static_cast<double>(reps) * alpha) +
                    " < 100; the upper quantile would rest on too few exceedances");
  }
}

}  // namespace detail

/// Upper-alpha quantile of a sample: the ceil(reps (1 - alpha))-th order
/// statistic. The standard error is half the width of the order-statistic
/// interval j = reps (1 - alpha) +- sqrt(reps alpha (1 - alpha)).
inline QuantileEstimate upper_quantile(std::vector<double> sample, double alpha) {
  detail::check_quantile_args(sample.size(), alpha);
  if (alpha == 1.0) return {0.0, 0.0};
  std::sort(sample.begin(), sample.end());
  const double reps = static_cast<double>(sample.size());
  auto at = [&](double rank) {
    const auto j = static_cast<std::size_t>(std::clamp(rank, 1.0, reps));
    return sample[j - 1];
  };
  const double centre = reps * (1.0 - alpha);
  const double spread = std::sqrt(reps * alpha * (1.0 - alpha));
  const double value = at(std::ceil(centre - 1e-9));
  const double lo = at(std::floor(centre - spread));
  const double hi = at(std::ceil(centre + spread));
  return {value, 0.5 * (hi - lo)};
}

/// Simulated upper-alpha quantile of max_{[0,n]} W_t.
inline QuantileEstimate mc_quantile_max(const IncrementModel& model, std::size_t n, double alpha,
                                        std::size_t reps, std::uint64_t seed,
                                        unsigned workers = 1) {
  detail::check_quantile_args(reps, alpha);
  if (alpha == 1.0) return {0.0, 0.0};
  return upper_quantile(std::move(simulate_running_max(model, {n}, reps, seed, workers)[0]),
                        alpha);
}

/// mc_quantile_max at several horizons from one set of paths.
inline std::vector<QuantileEstimate> mc_quantile_max_profile(const IncrementModel& model,
                                                             const std::vector<std::size_t>& ns,
                                                             double alpha, std::size_t reps,
                                                             std::uint64_t seed,
                                                             unsigned workers = 1) {
  detail::check_quantile_args(reps, alpha);
  std::vector<std::size_t> sorted = ns;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::vector<double>> maxima;
  if (alpha < 1.0) maxima = simulate_running_max(model, sorted, reps, seed, workers);
  std::vector<QuantileEstimate> out;
  for (std::size_t n : ns) {
    if (alpha == 1.0) {
      out.push_back({0.0, 0.0});
      continue;
    }
    const auto c = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), n) - sorted.begin());
    out.push_back(upper_quantile(maxima[c], alpha));
  }
  return out;
}

struct TailEstimate {
  double p_hat;
  double ci_halfwidth;  // 3 binomial standard errors
};

inline TailEstimate tail_fraction(std::span<const double> maxima, double h) {
  std::size_t hits = 0;
  for (double m : maxima) hits += (m >= h);
  const double reps = static_cast<double>(maxima.size());
  const double p = static_cast<double>(hits) / reps;
  return {p, 3.0 * std::sqrt(p * (1.0 - p) / reps)};
}

/// Fraction of replications whose running max over [0, n] reaches h.
inline TailEstimate mc_tail_max(const IncrementModel& model, std::size_t n, double h,
                                std::size_t reps, std::uint64_t seed, unsigned workers = 1) {
  if (reps == 0) throw Error(ErrorCode::InvalidArgument, "reps must be at least 1");
  const auto maxima = simulate_running_max(model, {n}, reps, seed, workers);
  return tail_fraction(maxima[0], h);
}

inline void attach_mc_quantile(ThresholdReport& report, std::size_t reps, std::uint64_t seed,
                               unsigned workers = 1) {
  report.mc_quantile = mc_quantile_max(report.model, report.n, report.alpha, reps, seed, workers);
}

// ---------------------------------------------------------------------------

struct StoppingStats {
  Estimate p_cross;    // P(T_h < tau_k)
  Estimate mean_tau1;  // E tau_1
  Estimate mean_tauk;  // E tau_k
  std::size_t k;
  double h;
  double discrepancy;  // E(1 - e^{lambda* Y})^+
  double bound;        // min{(1 + D k E tau_1) e^{-lambda* h}, 1}
  bool bound_holds;    // p_hat <= bound + 3 stderr
  std::size_t used_reps;
  std::size_t capped_reps;  // excursions cut at max_steps, excluded
};

/// Runs each replication until the k-th return of W to zero, recording
/// whether W reached h first and the first and k-th return times.
inline StoppingStats stopping_stats(const IncrementModel& model, double h, std::size_t k,
                                    std::size_t reps, std::uint64_t seed,
                                    std::size_t max_steps = 10'000'000, unsigned workers = 1) {
  if (!(model.mean() < 0.0)) {
    throw Error(ErrorCode::InvalidModel, "returns to zero need E Y < 0");
  }
  if (k == 0 || reps == 0) throw Error(ErrorCode::InvalidArgument, "k and reps must be positive");
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "h must be positive");
  const double ls = lambda_star(model);
  const double disc = tilted_discrepancy(model, ls);
  const IncrementSampler draw(model);

  struct Rep {
    bool capped, crossed;
    double tau1, tauk;
  };
  std::vector<Rep> out(reps);
  detail::parallel_reps(reps, workers, [&](std::size_t rep) {
    CounterRng rng(seed, rep);
    double w = 0.0, tau1 = 0.0;
    bool crossed = false;
    std::size_t zeros = 0;
    for (std::size_t t = 1; t <= max_steps; ++t) {
      w = std::max(w + draw(rng), 0.0);
      if (w >= h) crossed = true;
      if (w == 0.0) {
        if (++zeros == 1) tau1 = static_cast<double>(t);
        if (zeros == k) {
          out[rep] = {false, crossed, tau1, static_cast<double>(t)};
          return;
        }
      }
    }
    out[rep] = {true, crossed, 0.0, 0.0};
  });

  std::vector<double> cross, t1, tk;
  std::size_t capped = 0;
  for (const auto& r : out) {
    if (r.capped) {
      ++capped;
      continue;
    }
    cross.push_back(r.crossed ? 1.0 : 0.0);
    t1.push_back(r.tau1);
    tk.push_back(r.tauk);
  }
  if (cross.empty()) {
    throw Error(ErrorCode::HorizonExceeded,
                "every replication exceeded " + std::to_string(max_steps) + " steps");
  }
  const double used = static_cast<double>(cross.size());
  auto estimate = [&](const std::vector<double>& xs) {
    const double m = detail::sample_mean(xs);
    return Estimate{m, std::sqrt(detail::sample_variance(xs, m) / used)};
  };
  StoppingStats s{};
  s.p_cross = estimate(cross);
  s.p_cross.std_error = std::sqrt(s.p_cross.value * (1.0 - s.p_cross.value) / used);
  s.mean_tau1 = estimate(t1);
  s.mean_tauk = estimate(tk);
  s.k = k;
  s.h = h;
  s.discrepancy = disc;
  s.bound = std::min(
      (1.0 + disc * static_cast<double>(k) * s.mean_tau1.value) * std::exp(-ls * h), 1.0);
  s.bound_holds = s.p_cross.value <= s.bound + 3.0 * s.p_cross.std_error;
  s.used_reps = cross.size();
  s.capped_reps = capped;
  return s;
}

}  // namespace cusum
