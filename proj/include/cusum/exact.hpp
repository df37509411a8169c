#pragma once

// Exact joint law of (W_n, max_{t<=n} W_t) for finite-support increments,
// by dynamic programming over the attainable states.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/numeric.hpp"

namespace cusum {

struct JointAtom {
  double w;
  double m;
  double prob;
};

class ExactDistribution {
 public:
  ExactDistribution(std::size_t horizon, std::vector<JointAtom> atoms)
      : horizon_(horizon), atoms_(std::move(atoms)) {}

  std::size_t horizon() const noexcept { return horizon_; }
  const std::vector<JointAtom>& atoms() const noexcept { return atoms_; }

  double total_probability() const {
    return sum([](const JointAtom&) { return 1.0; });
  }
  double mean_w() const {
    return sum([](const JointAtom& a) { return a.w; });
  }
  double variance_w() const {
    const double m = mean_w();
    return sum([m](const JointAtom& a) { return (a.w - m) * (a.w - m); });
  }
  double mean_max() const {
    return sum([](const JointAtom& a) { return a.m; });
  }
  /// E e^{lambda W_n}.
  double mgf_w(double lambda) const {
    return sum([lambda](const JointAtom& a) { return std::exp(lambda * a.w); });
  }
  /// P(max_{t<=n} W_t >= h).
  double tail_max(double h) const {
    return sum([h](const JointAtom& a) { return a.m >= h ? 1.0 : 0.0; });
  }
  /// P(W_n = w) for every attainable w, sorted by w.
  std::vector<Atom> marginal_w() const {
    std::vector<Atom> out;
    std::vector<JointAtom> sorted = atoms_;
    std::sort(sorted.begin(), sorted.end(),
              [](const JointAtom& l, const JointAtom& r) { return l.w < r.w; });
    for (const auto& a : sorted) {
      if (!out.empty() && out.back().value == a.w) {
        out.back().prob += a.prob;
      } else {
        out.push_back({a.w, a.prob});
      }
    }
    return out;
  }

 private:
  template <class F>
  double sum(F f) const {
    std::vector<double> terms(atoms_.size());
    for (std::size_t i = 0; i < atoms_.size(); ++i) terms[i] = atoms_[i].prob * f(atoms_[i]);
    return pairwise_sum(terms);
  }

  std::size_t horizon_;
  std::vector<JointAtom> atoms_;
};

namespace detail {

/// State keys: exact integers for integer supports, else a 1e-12 grid.
/// Two values sharing a grid cell but further apart than accumulated
/// floating-point error are distinct states, which is reported.
struct StateKeyer {
  bool integer;

  std::int64_t operator()(double v) const {
    return integer ? static_cast<std::int64_t>(v) : std::llround(v * 1e12);
  }
  void check_same(double a, double b) const {
    if (!integer && std::fabs(a - b) > 1e-13 * std::max(1.0, std::fabs(a))) {
      throw Error(ErrorCode::InvalidModel,
                  "state grid collision between " + format_double(a) + " and " + format_double(b));
    }
  }
};

}  // namespace detail

inline ExactDistribution exact_enumerate(const IncrementModel& model, std::size_t n,
                                         std::size_t state_budget = 10'000'000) {
  if (!model.is_discrete()) {
    throw Error(ErrorCode::NotSupportedModel, "exact enumeration needs a finite support");
  }
  const auto steps = model.atoms();
  const detail::StateKeyer key{model.integer_support()};

  struct State {
    std::int64_t kw, km;
    double w, m, prob;
  };
  std::vector<State> states{{0, 0, 0.0, 0.0, 1.0}};
  std::vector<State> next;
  for (std::size_t t = 0; t < n; ++t) {
    if (states.size() * steps.size() > state_budget) {
      throw Error(ErrorCode::StateBudgetExceeded,
                  std::to_string(states.size() * steps.size()) + " candidate states at step " +
                      std::to_string(t + 1) + " exceed the budget of " +
                      std::to_string(state_budget));
    }
    next.clear();
    next.reserve(states.size() * steps.size());
    for (const auto& s : states) {
      for (const auto& y : steps) {
        double w = std::max(s.w + y.value, 0.0);
        if (!key.integer && std::fabs(w) < 1e-12) w = 0.0;  // rounding residue of a return to 0
        const double m = std::max(s.m, w);
        next.push_back({key(w), key(m), w, m, s.prob * y.prob});
      }
    }
    std::sort(next.begin(), next.end(), [](const State& l, const State& r) {
      return l.kw != r.kw ? l.kw < r.kw : l.km < r.km;
    });
    states.clear();
    for (std::size_t i = 0; i < next.size();) {
      State merged = next[i];
      for (++i; i < next.size() && next[i].kw == merged.kw && next[i].km == merged.km; ++i) {
        key.check_same(merged.w, next[i].w);
        key.check_same(merged.m, next[i].m);
        merged.prob += next[i].prob;
      }
      states.push_back(merged);
    }
  }
  std::vector<JointAtom> atoms;
  atoms.reserve(states.size());
  for (const auto& s : states) atoms.push_back({s.w, s.m, s.prob});
  return ExactDistribution(n, std::move(atoms));
}

}  // namespace cusum
