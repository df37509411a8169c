#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"
#include "oracles.hpp"

namespace testing_util {

inline const double kP = 1.0 / (1.0 + std::numbers::e);

inline std::vector<oracle::Atom> atoms_of(const cusum::IncrementModel& m) {
  std::vector<oracle::Atom> out;
  for (const auto& a : m.atoms()) out.push_back({a.value, a.prob});
  return out;
}

inline double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

/// Code of the cusum::Error thrown by fn, or nullopt when nothing is thrown.
template <class Fn>
std::optional<cusum::ErrorCode> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const cusum::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace testing_util
