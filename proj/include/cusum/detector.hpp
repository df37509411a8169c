#pragma once

// Change detection on data: log-likelihood-ratio increments from a pair of
// densities, the offline CUSUM and maximum-CUSUM scans, and a streaming
// monitor that alarms at W >= h and restarts from zero.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cusum/error.hpp"
#include "cusum/increment_model.hpp"

namespace cusum {

struct NormalDensity {
  double mean;
  double sd;
};

struct DiscreteDensity {
  std::vector<double> support;
  std::vector<double> probs;
};

using Density = std::variant<NormalDensity, DiscreteDensity>;

namespace detail {

inline Density parse_density(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::ParseError, "density spec '" + std::string(spec) + "' lacks ':'");
  }
  const auto name = spec.substr(0, colon);
  double mean = NAN, sd = NAN;
  std::vector<double> ys, ps;
  for (auto field : split(spec.substr(colon + 1), ',')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "malformed field '" + std::string(field) + "'");
    }
    const auto key = field.substr(0, eq);
    const auto val = field.substr(eq + 1);
    if (key == "mean") mean = parse_double(val, key);
    else if (key == "sd") sd = parse_double(val, key);
    else if (key == "y") ys = parse_list(val, key);
    else if (key == "p") ps = parse_list(val, key);
    else throw Error(ErrorCode::ParseError, "unknown field '" + std::string(key) + "'");
  }
  if (name == "normal") {
    if (std::isnan(mean) || std::isnan(sd)) {
      throw Error(ErrorCode::ParseError, "normal density requires mean and sd");
    }
    if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean)) {
      throw Error(ErrorCode::InvalidModel, "normal density needs finite mean and positive sd");
    }
    return NormalDensity{mean, sd};
  }
  if (name == "table") {
    if (ys.empty() || ys.size() != ps.size()) {
      throw Error(ErrorCode::ParseError, "table density requires y and p of equal length");
    }
    double total = 0.0;
    for (double p : ps) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidModel, "probabilities in [0,1]");
      total += p;
    }
    if (std::fabs(total - 1.0) > 1e-12) {
      throw Error(ErrorCode::InvalidModel, "table probabilities sum to " + format_double(total));
    }
    return DiscreteDensity{std::move(ys), std::move(ps)};
  }
  throw Error(ErrorCode::ParseError, "unknown density kind '" + std::string(name) + "'");
}

inline std::string density_to_string(const Density& d) {
  if (const auto* n = std::get_if<NormalDensity>(&d)) {
    return "normal:mean=" + format_double(n->mean) + ",sd=" + format_double(n->sd);
  }
  const auto& t = std::get<DiscreteDensity>(d);
  std::string y, p;
  for (std::size_t i = 0; i < t.support.size(); ++i) {
    y += (i ? ";" : "") + format_double(t.support[i]);
    p += (i ? ";" : "") + format_double(t.probs[i]);
  }
  return "table:y=" + y + ",p=" + p;
}

inline bool same_point(double a, double b) {
  return std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(a));
}

}  // namespace detail

/// Default density f and disturbed density g. Discrete pairs share one
/// support; normal pairs may differ in mean and sd.
class HypothesisPair {
 public:
  HypothesisPair(Density f, Density g) : f_(std::move(f)), g_(std::move(g)) {
    if (f_.index() != g_.index()) {
      throw Error(ErrorCode::InvalidModel, "f and g must be of the same kind");
    }
    if (const auto* fd = std::get_if<DiscreteDensity>(&f_)) {
      const auto& gd = std::get<DiscreteDensity>(g_);
      if (fd->support.size() != gd.support.size() ||
          !std::equal(fd->support.begin(), fd->support.end(), gd.support.begin(),
                      detail::same_point)) {
        throw Error(ErrorCode::InvalidModel, "discrete f and g must share one support");
      }
    }
  }

  static HypothesisPair parse(std::string_view f_spec, std::string_view g_spec) {
    return {detail::parse_density(f_spec), detail::parse_density(g_spec)};
  }

  /// Normal mean shift theta0 -> theta1 with common sd sigma.
  static HypothesisPair normal_shift(double theta0, double theta1, double sigma) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidModel, "sigma must be positive");
    return {NormalDensity{theta0, sigma}, NormalDensity{theta1, sigma}};
  }

  const Density& f() const noexcept { return f_; }
  const Density& g() const noexcept { return g_; }

  /// log g(x) - log f(x).
  double llr(double x) const {
    if (const auto* fn = std::get_if<NormalDensity>(&f_)) {
      const auto& gn = std::get<NormalDensity>(g_);
      if (!std::isfinite(x)) {
        throw Error(ErrorCode::UnsupportedValue, "non-finite observation " + detail::format_double(x));
      }
      if (fn->sd == gn.sd) {
        const double d = gn.mean - fn->mean;
        return d * (x - 0.5 * (fn->mean + gn.mean)) / (fn->sd * fn->sd);
      }
      const double zf = (x - fn->mean) / fn->sd;
      const double zg = (x - gn.mean) / gn.sd;
      return std::log(fn->sd / gn.sd) + 0.5 * (zf * zf - zg * zg);
    }
    const auto& fd = std::get<DiscreteDensity>(f_);
    const auto& gd = std::get<DiscreteDensity>(g_);
    for (std::size_t i = 0; i < fd.support.size(); ++i) {
      if (detail::same_point(fd.support[i], x)) {
        if (fd.probs[i] <= 0.0) break;
        return std::log(gd.probs[i]) - std::log(fd.probs[i]);
      }
    }
    throw Error(ErrorCode::UnsupportedValue,
                "observation " + detail::format_double(x) + " has zero density under f");
  }

  /// Law of Y = log(g/f)(X) for X ~ f. An equal-sd normal pair gives
  /// normal-llr with delta = |theta1 - theta0| / sigma; a discrete pair
  /// gives a table flagged llr (E e^Y = 1 is checked on construction).
  IncrementModel increment_model() const {
    if (const auto* fn = std::get_if<NormalDensity>(&f_)) {
      const auto& gn = std::get<NormalDensity>(g_);
      if (fn->sd != gn.sd) {
        throw Error(ErrorCode::NotSupportedModel,
                    "normal pairs with unequal sd give non-normal increments");
      }
      if (fn->mean == gn.mean) throw Error(ErrorCode::DegenerateModel, "f and g coincide");
      return IncrementModel::normal_llr(std::fabs(gn.mean - fn->mean) / fn->sd);
    }
    const auto& fd = std::get<DiscreteDensity>(f_);
    const auto& gd = std::get<DiscreteDensity>(g_);
    std::map<double, double> law;
    for (std::size_t i = 0; i < fd.support.size(); ++i) {
      if (fd.probs[i] <= 0.0) continue;
      if (gd.probs[i] <= 0.0) {
        throw Error(ErrorCode::NotSupportedModel,
                    "g vanishes where f does not; the increment is unbounded below");
      }
      law[std::log(gd.probs[i]) - std::log(fd.probs[i])] += fd.probs[i];
    }
    if (law.size() == 1) throw Error(ErrorCode::DegenerateModel, "f and g coincide");
    std::vector<double> ys, ps;
    for (const auto& [y, p] : law) {
      ys.push_back(y);
      ps.push_back(p);
    }
    return IncrementModel::table(std::move(ys), std::move(ps), true);
  }

  std::string to_string() const {
    return "f=" + detail::density_to_string(f_) + " g=" + detail::density_to_string(g_);
  }

 private:
  Density f_, g_;
};

inline std::vector<double> llr_increments(const HypothesisPair& pair, std::span<const double> data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (double x : data) out.push_back(pair.llr(x));
  return out;
}

// ---------------------------------------------------------------------------

enum class ScanMode { Abrupt, Transient };

inline std::string_view to_string(ScanMode m) {
  return m == ScanMode::Abrupt ? "abrupt" : "transient";
}

struct ChangeInterval {
  std::size_t a_hat;  // change starts after observation a_hat
  std::size_t b_hat;  // and is last seen at observation b_hat
};

struct DetectionReport {
  ScanMode mode;
  double statistic;  // W_n (abrupt) or max_{t<=n} W_t (transient)
  double w_n;
  double max_w;
  double threshold;
  bool detected;
  std::optional<ChangeInterval> change_interval;
  std::vector<double> path;  // W_0..W_n
};

/// W_0 = 0, W_t = max(W_{t-1} + y_t, 0).
inline std::vector<double> cusum_path(std::span<const double> increments) {
  std::vector<double> w(increments.size() + 1, 0.0);
  for (std::size_t t = 0; t < increments.size(); ++t) {
    w[t + 1] = std::max(w[t] + increments[t], 0.0);
  }
  return w;
}

/// Offline scan. The change interval maximises S_b - S_a over a < b, with
/// the smallest maximising b and then the largest a; in abrupt mode b is
/// fixed at n.
inline DetectionReport scan_offline(std::span<const double> increments, double h,
                                    ScanMode mode = ScanMode::Transient) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "h must be positive");
  DetectionReport r{mode, 0.0, 0.0, 0.0, h, false, std::nullopt, cusum_path(increments)};
  const auto& w = r.path;
  const std::size_t n = increments.size();
  std::size_t b = 0;
  for (std::size_t t = 1; t <= n; ++t) {
    if (w[t] > w[b]) b = t;
  }
  r.w_n = w[n];
  r.max_w = w[b];
  if (mode == ScanMode::Abrupt) b = n;
  r.statistic = w[b];
  r.detected = r.statistic >= h;
  if (r.detected) {
    std::size_t a = b;
    while (a > 0 && w[a] > 0.0) --a;
    r.change_interval = ChangeInterval{a, b};
  }
  return r;
}

// ---------------------------------------------------------------------------

struct Alarm {
  std::size_t t;
  double w;
};

struct CusumState {
  double w = 0.0;
  std::size_t t = 0;
  double running_max = 0.0;
  std::vector<Alarm> alarms;
};

/// One step of the monitor, in place. At w >= h the alarm is recorded and
/// w restarts from 0.
inline std::optional<Alarm> advance(CusumState& s, double y, double h) {
  s.w = std::max(s.w + y, 0.0);
  ++s.t;
  s.running_max = std::max(s.running_max, s.w);
  if (s.w >= h) {
    Alarm a{s.t, s.w};
    s.alarms.push_back(a);
    s.w = 0.0;
    return a;
  }
  return std::nullopt;
}

struct MonitorStep {
  CusumState state;
  std::optional<Alarm> alarm;
};

inline MonitorStep monitor_step(CusumState state, double y, double h) {
  auto alarm = advance(state, y, h);
  return {std::move(state), alarm};
}

inline void to_json(nlohmann::json& j, const Alarm& a) { j = {{"t", a.t}, {"w", a.w}}; }
inline void from_json(const nlohmann::json& j, Alarm& a) {
  a.t = j.at("t").get<std::size_t>();
  a.w = j.at("w").get<double>();
}

inline void to_json(nlohmann::json& j, const CusumState& s) {
  j = {{"w", s.w}, {"t", s.t}, {"running_max", s.running_max}, {"alarms", s.alarms}};
}

inline void from_json(const nlohmann::json& j, CusumState& s) {
  s.w = j.at("w").get<double>();
  s.t = j.at("t").get<std::size_t>();
  s.running_max = j.at("running_max").get<double>();
  s.alarms = j.at("alarms").get<std::vector<Alarm>>();
  if (!(s.w >= 0.0) || !(s.running_max >= s.w)) {
    throw Error(ErrorCode::InvalidArgument, "state needs 0 <= w <= running_max");
  }
}

// ---------------------------------------------------------------------------

enum class DataFormat { Csv, Jsonl };

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool try_parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return !text.empty() && ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace detail

/// One observation per line. CSV: the first line may be a header, in which
/// case `field` names the column (default: the first). JSONL: each line is
/// an object and `field` names the numeric member (default "x"). Any other
/// non-numeric row is an error.
inline std::vector<double> read_observations(std::istream& in, DataFormat format,
                                             std::string field = {}) {
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t column = 0;
  auto bad_row = [&](const std::string& why) {
    return Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + why);
  };
  if (format == DataFormat::Jsonl && field.empty()) field = "x";
  while (std::getline(in, line)) {
    ++lineno;
    if (format == DataFormat::Jsonl) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw bad_row("not a JSON object");
      }
      if (!j.is_object() || !j.contains(field) || !j[field].is_number()) {
        throw bad_row("no numeric field '" + field + "'");
      }
      out.push_back(j[field].get<double>());
      continue;
    }
    const auto cells = detail::split(line, ',');
    if (lineno == 1) {
      double probe = 0.0;
      if (!detail::try_parse_double(cells[0], probe)) {
        if (!field.empty()) {
          const auto it = std::find_if(cells.begin(), cells.end(),
                                       [&](std::string_view c) { return detail::trim(c) == field; });
          if (it == cells.end()) throw bad_row("header has no column '" + field + "'");
          column = static_cast<std::size_t>(it - cells.begin());
        }
        continue;
      }
      if (!field.empty()) throw bad_row("column '" + field + "' requested but no header");
    }
    double v = 0.0;
    if (column >= cells.size() || !detail::try_parse_double(cells[column], v)) {
      throw bad_row("non-numeric observation '" + line + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace cusum
