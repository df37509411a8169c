#pragma once

// The `cusum` command line. run() takes the arguments without the program
// name and writes to the given streams, so it is testable in process.
//
// Exit codes: 0 success, 2 usage error, 1 computation error.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cusum/bounds.hpp"
#include "cusum/detector.hpp"
#include "cusum/error.hpp"
#include "cusum/exact.hpp"
#include "cusum/increment_model.hpp"
#include "cusum/moments.hpp"
#include "cusum/simulate.hpp"

namespace cusum::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kSeedEnv = "CUSUM_SEED";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string csv_number(std::optional<double> v) { return v ? csv_number(*v) : ""; }

/// Label used in figure column names, e.g. 0.5 -> "0.5".
inline std::string short_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// A CSV cell: a number, a count or a label; empty when nothing is known.
struct Cell {
  std::optional<double> num;
  std::string text;

  Cell() = default;
  Cell(double v) : num(v) {}
  Cell(std::optional<double> v) : num(v) {}
  Cell(std::size_t k) : num(static_cast<double>(k)), text(std::to_string(k)) {}
  Cell(std::string s) : text(std::move(s)) {}

  std::string csv() const { return text.empty() ? csv_number(num) : text; }
  Json json() const {
    if (num) return *num;
    if (text.empty()) return nullptr;
    return text;
  }
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

struct Outcome {
  Json config;
  Json result;
  Table table;
};

inline std::uint64_t default_seed() {
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw UsageError(std::string(kSeedEnv) + " must be an unsigned integer, got '" + env + "'");
    }
    return v;
  }
  return kDefaultSeed;
}

/// Every flag of every subcommand; each subcommand registers its subset.
struct Options {
  std::string format;
  std::string output = "-";
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 0;

  std::string model;
  std::size_t n = 0;
  std::vector<std::size_t> ns;
  std::vector<double> deltas;
  double lambda = 1.0;
  std::vector<double> lambdas;
  std::string method = "recursive";
  double alpha = 0.05;
  std::size_t mc_reps = 100000;
  std::size_t reps = 10000;
  std::string raw;
  std::vector<double> hs;
  std::optional<double> tail_h;
  std::optional<double> quantile_alpha;

  std::string f, g;
  std::optional<double> theta0, theta1, sigma;
  std::string variant = "ub3";
  std::optional<double> h;
  std::string mode = "transient";
  std::string input = "-";
  std::string input_format;
  std::string field;
  bool emit_path = false;
  std::string state;
  std::size_t horizon = 0;

  int which = 0;
};

namespace detail {

inline IncrementModel model_from(const Options& o) {
  if (o.model.empty()) throw UsageError("--model is required");
  return IncrementModel::parse(o.model);
}

inline Json mean_var_json(const Estimate& e) {
  return Json{{"value", e.value}, {"stderr", e.std_error}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// subcommands

inline Outcome cmd_moments(const Options& o) {
  const auto model = detail::model_from(o);
  const auto table = moment_table(model, o.n);
  Outcome out;
  out.config = {{"model", model.to_string()}, {"n", o.n}};
  const auto& d = table.diagnostics;
  out.result = {{"mean", table.means},
                {"variance", table.variances},
                {"diagnostics",
                 {{"naive_recursion_max_abs_diff", d.naive_recursion_max_abs_diff},
                  {"derived_recursion_max_abs_diff", d.derived_recursion_max_abs_diff},
                  {"formula_mismatch", d.formula_mismatch}}}};
  out.table.header = {"n", "mean", "variance"};
  for (std::size_t k = 0; k <= o.n; ++k) {
    out.table.rows.push_back({k, table.means[k], table.variances[k]});
  }
  return out;
}

inline Outcome cmd_mgf(const Options& o) {
  const auto model = detail::model_from(o);
  const auto xs = rectified_exp_series(model, o.lambda, o.n);
  std::vector<double> values;
  if (o.method == "recursive") {
    values = cusum_mgf_recursive(xs).values;
  } else if (o.method == "matrix") {
    values = cusum_mgf_matrix(xs).values;
  } else if (o.method == "bell") {
    values = rescaled_bell(std::span<const double>(xs.values).subspan(1));
  } else {
    for (std::size_t k = 0; k <= o.n; ++k) values.push_back(cusum_mgf_partitions(xs, k));
  }
  Outcome out;
  out.config = {{"model", model.to_string()}, {"lambda", o.lambda}, {"n", o.n},
                {"method", o.method}};
  out.result = {{"values", values}};
  out.table.header = {"n", "value"};
  for (std::size_t k = 0; k < values.size(); ++k) {
    out.table.rows.push_back({k, values[k]});
  }
  return out;
}

namespace detail {

inline Json report_json(const ThresholdReport& r) {
  Json j{{"model", r.model.to_string()},
         {"n", r.n},
         {"alpha", r.alpha},
         {"lambda_star", r.lambda_star},
         {"exact_moment", r.exact_moment},
         {"discrepancy", r.discrepancy},
         {"ub1", r.ub1},
         {"ub2", r.ub2},
         {"ub3", r.ub3}};
  j["lb1"] = r.lb1 ? Json(*r.lb1) : Json(nullptr);
  j["lb2"] = r.lb2 ? Json(*r.lb2) : Json(nullptr);
  if (r.lb_detail) {
    j["lb1_k"] = r.lb_detail->k;
    j["lb1_heuristic_k"] = r.lb_detail->heuristic_k;
    j["lb1_heuristic_h"] = r.lb_detail->heuristic_h;
  }
  if (r.mc_quantile) {
    j["mc_quantile"] = {{"value", r.mc_quantile->value}, {"stderr", r.mc_quantile->std_error}};
  } else {
    j["mc_quantile"] = nullptr;
  }
  return j;
}

inline std::vector<Cell> threshold_csv_row(const ThresholdReport& r) {
  std::optional<double> delta;
  if (r.model.is_normal_llr()) delta = std::get<NormalLlr>(r.model.kind()).delta;
  std::optional<double> mc, mc_se;
  if (r.mc_quantile) {
    mc = r.mc_quantile->value;
    mc_se = r.mc_quantile->std_error;
  }
  return {delta, r.n, r.alpha, r.lb2, r.lb1, mc, r.ub1, r.ub3, r.ub2, mc_se};
}

inline const std::vector<std::string> kThresholdHeader = {
    "delta", "n", "alpha", "lb2", "lb1", "mc", "ub1", "ub3", "ub2", "mc_stderr"};

/// Reports for every (model, n), one simulation per model shared by all n.
inline std::vector<ThresholdReport> threshold_grid(const std::vector<IncrementModel>& models,
                                                   const std::vector<std::size_t>& ns,
                                                   double alpha, std::size_t mc_reps,
                                                   std::uint64_t seed, unsigned threads) {
  std::vector<ThresholdReport> out;
  for (const auto& model : models) {
    std::vector<QuantileEstimate> mc;
    if (mc_reps > 0) mc = mc_quantile_max_profile(model, ns, alpha, mc_reps, seed, threads);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      auto r = threshold_report(model, ns[i], alpha);
      if (mc_reps > 0) r.mc_quantile = mc[i];
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline std::vector<IncrementModel> models_from(const Options& o) {
  if (!o.model.empty() && !o.deltas.empty()) {
    throw UsageError("--model and --delta are mutually exclusive");
  }
  std::vector<IncrementModel> models;
  if (!o.model.empty()) {
    models.push_back(IncrementModel::parse(o.model));
  } else if (!o.deltas.empty()) {
    for (double d : o.deltas) models.push_back(IncrementModel::normal_llr(d));
  } else {
    throw UsageError("either --model or --delta is required");
  }
  return models;
}

}  // namespace detail

inline Outcome cmd_threshold(const Options& o) {
  const auto models = detail::models_from(o);
  if (o.ns.empty()) throw UsageError("--n is required");
  const auto reports = detail::threshold_grid(models, o.ns, o.alpha, o.mc_reps, o.seed, o.threads);
  Outcome out;
  Json model_names = Json::array();
  for (const auto& m : models) model_names.push_back(m.to_string());
  out.config = {{"model", o.model.empty() ? Json(nullptr) : model_names[0]},
                {"delta", o.deltas},
                {"n", o.ns},
                {"alpha", o.alpha},
                {"mc-reps", o.mc_reps},
                {"seed", o.seed}};
  Json reps = Json::array();
  out.table.header = detail::kThresholdHeader;
  for (const auto& r : reports) {
    reps.push_back(detail::report_json(r));
    out.table.rows.push_back(detail::threshold_csv_row(r));
  }
  out.result = {{"reports", reps}};
  return out;
}

inline Outcome cmd_simulate(const Options& o, std::ostream* raw_out) {
  const auto model = detail::model_from(o);
  SimConfig cfg{model, o.n, o.reps, o.seed, o.threads, o.lambda};
  const auto sim = simulate_cusum(cfg);
  Outcome out;
  out.config = {{"model", model.to_string()}, {"n", o.n},   {"reps", o.reps},
                {"seed", o.seed},             {"lambda", o.lambda}};
  if (o.tail_h) out.config["tail-h"] = *o.tail_h;
  if (o.quantile_alpha) out.config["quantile-alpha"] = *o.quantile_alpha;
  const auto& s = sim.summary;
  out.result = {{"mean_w", detail::mean_var_json(s.mean_w)},
                {"var_w", s.var_w},
                {"mean_max", detail::mean_var_json(s.mean_max)},
                {"exp_moment", detail::mean_var_json(s.exp_moment)}};
  std::vector<double> maxima(sim.records.size());
  for (std::size_t i = 0; i < maxima.size(); ++i) maxima[i] = sim.records[i].max_w;
  if (o.tail_h) {
    const auto t = tail_fraction(maxima, *o.tail_h);
    out.result["tail_max"] = {{"h", *o.tail_h}, {"p_hat", t.p_hat}, {"ci_halfwidth", t.ci_halfwidth}};
  }
  if (o.quantile_alpha) {
    const auto q = upper_quantile(maxima, *o.quantile_alpha);
    out.result["quantile_max"] = {
        {"alpha", *o.quantile_alpha}, {"value", q.value}, {"stderr", q.std_error}};
  }
  out.table.header = {"rep", "w_n", "max_w"};
  for (std::size_t i = 0; i < sim.records.size(); ++i) {
    out.table.rows.push_back({i, sim.records[i].w_n, sim.records[i].max_w});
  }
  if (raw_out) {
    *raw_out << "rep,w_n,max_w\n";
    for (const auto& row : out.table.rows) {
      *raw_out << row[0].csv() << ',' << row[1].csv() << ',' << row[2].csv() << '\n';
    }
  }
  return out;
}

inline Outcome cmd_regimes(const Options& o) {
  const auto model = detail::model_from(o);
  const auto lambdas = o.lambdas.empty() ? std::vector<double>{o.lambda} : o.lambdas;
  Outcome out;
  out.config = {{"model", model.to_string()}, {"lambda", lambdas}, {"n", o.n}};
  const double ls = lambda_star(model);
  Json items = Json::array();
  out.table.header = {"lambda", "regime", "omega", "growth", "m_n"};
  for (double lam : lambdas) {
    const auto r = regime(model, lam);
    Json item{{"lambda", lam}, {"regime", std::string(to_string(r.kind))}};
    std::optional<double> omega, growth, mn;
    if (r.kind == Regime::Kind::Subcritical) {
      item["omega"] = r.omega;
      omega = r.omega;
    }
    if (r.kind == Regime::Kind::Supercritical) {
      item["growth"] = r.growth;
      growth = r.growth;
    }
    if (o.n > 0) {
      mn = cusum_mgf_recursive(model, lam, o.n).values.back();
      item["m_n"] = *mn;
    }
    items.push_back(item);
    out.table.rows.push_back({lam, std::string(to_string(r.kind)), omega, growth, mn});
  }
  out.result = {{"lambda_star", ls}, {"regimes", items}};
  return out;
}

inline Outcome cmd_queue_bound(const Options& o) {
  const auto model = detail::model_from(o);
  if (o.hs.empty()) throw UsageError("--h is required");
  Outcome out;
  out.config = {{"model", model.to_string()}, {"n", o.n}, {"h", o.hs}};
  Json items = Json::array();
  out.table.header = {"n", "h", "bound"};
  for (double h : o.hs) {
    const double b = queue_tail_bound(model, o.n, h);
    items.push_back({{"h", h}, {"bound", b}});
    out.table.rows.push_back({o.n, h, b});
  }
  out.result = {{"bounds", items}};
  if (model.prob_positive() > 0.0) {
    const double ls = lambda_star(model);
    out.result["lambda_star"] = ls;
    out.result["discrepancy"] = tilted_discrepancy(model, ls);
  }
  return out;
}

namespace detail {

inline HypothesisPair pair_from(const Options& o) {
  const bool shorthand = o.theta0 || o.theta1 || o.sigma;
  if (shorthand && (!o.f.empty() || !o.g.empty())) {
    throw UsageError("use either --f/--g or --theta0/--theta1/--sigma");
  }
  if (shorthand) {
    if (!o.theta0 || !o.theta1) throw UsageError("--theta0 and --theta1 are both required");
    return HypothesisPair::normal_shift(*o.theta0, *o.theta1, o.sigma.value_or(1.0));
  }
  if (o.f.empty() || o.g.empty()) throw UsageError("--f and --g (or --theta0/--theta1) are required");
  return HypothesisPair::parse(o.f, o.g);
}

inline std::vector<double> read_input(const Options& o, std::istream& stdin_stream) {
  DataFormat format = DataFormat::Csv;
  if (o.input_format == "jsonl" ||
      (o.input_format.empty() && o.input.size() >= 6 &&
       o.input.compare(o.input.size() - 6, 6, ".jsonl") == 0)) {
    format = DataFormat::Jsonl;
  }
  if (o.input == "-") return read_observations(stdin_stream, format, o.field);
  std::ifstream file(o.input);
  if (!file) throw Error(ErrorCode::InvalidArgument, "cannot open input '" + o.input + "'");
  return read_observations(file, format, o.field);
}

}  // namespace detail

inline Outcome cmd_detect(const Options& o, std::istream& stdin_stream) {
  const auto pair = detail::pair_from(o);
  const auto data = detail::read_input(o, stdin_stream);
  const auto ys = llr_increments(pair, data);

  CusumState state;
  if (o.mode == "monitor" && !o.state.empty()) {
    std::ifstream sf(o.state);
    if (sf) {
      try {
        state = nlohmann::json::parse(sf).get<CusumState>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, "state file '" + o.state + "': " + e.what());
      }
    }
  }

  const std::size_t horizon = o.horizon > 0 ? o.horizon
                              : o.mode == "monitor" ? state.t + ys.size()
                                                    : ys.size();
  double h = 0.0;
  if (o.variant == "custom") {
    if (!o.h) throw UsageError("--threshold-variant custom needs --h");
    h = *o.h;
  } else {
    if (o.h) throw UsageError("--h is only valid with --threshold-variant custom");
    const auto variant = o.variant == "ub1"   ? UpperVariant::Ub1
                         : o.variant == "ub2" ? UpperVariant::Ub2
                                              : UpperVariant::Ub3;
    h = threshold_ub(pair.increment_model(), horizon, o.alpha, variant);
  }

  Outcome out;
  out.config = {{"f", cusum::detail::density_to_string(pair.f())},
                {"g", cusum::detail::density_to_string(pair.g())},
                {"alpha", o.alpha},
                {"threshold-variant", o.variant},
                {"h", o.h ? Json(*o.h) : Json(nullptr)},
                {"mode", o.mode},
                {"input", o.input},
                {"horizon", horizon},
                {"emit-path", o.emit_path}};
  if (!o.state.empty()) out.config["state"] = o.state;
  out.table.header = {"t", "w"};

  if (o.mode == "monitor") {
    const std::size_t start = state.t;
    const std::size_t first_alarm = state.alarms.size();
    std::vector<double> path{state.w};
    for (double y : ys) {
      advance(state, y, h);
      path.push_back(state.w);
    }
    Json alarms = Json::array();
    for (std::size_t i = first_alarm; i < state.alarms.size(); ++i) {
      alarms.push_back({{"t", state.alarms[i].t}, {"w", state.alarms[i].w}});
    }
    out.result = {{"statistic", state.w},
                  {"threshold", h},
                  {"detected", !alarms.empty()},
                  {"alarms", alarms},
                  {"state", Json(nlohmann::json(state))}};
    if (o.emit_path) out.result["path"] = path;
    for (std::size_t i = 0; i < path.size(); ++i) {
      out.table.rows.push_back({start + i, path[i]});
    }
    if (!o.state.empty()) {
      std::ofstream sf(o.state);
      if (!sf) throw Error(ErrorCode::InvalidArgument, "cannot write state '" + o.state + "'");
      sf << nlohmann::json(state).dump() << '\n';
    }
    return out;
  }

  const auto mode = o.mode == "abrupt" ? ScanMode::Abrupt : ScanMode::Transient;
  const auto r = scan_offline(ys, h, mode);
  out.result = {{"statistic", r.statistic},
                {"w_n", r.w_n},
                {"max_w", r.max_w},
                {"threshold", r.threshold},
                {"detected", r.detected}};
  out.result["change_interval"] =
      r.change_interval
          ? Json{{"a_hat", r.change_interval->a_hat}, {"b_hat", r.change_interval->b_hat}}
          : Json(nullptr);
  if (o.emit_path) out.result["path"] = r.path;
  for (std::size_t t = 0; t < r.path.size(); ++t) {
    out.table.rows.push_back({t, r.path[t]});
  }
  return out;
}

inline Outcome cmd_figures(const Options& o) {
  Outcome out;
  out.config = {{"which", o.which}};
  auto deltas_or = [&](std::vector<double> fallback) { return o.deltas.empty() ? fallback : o.deltas; };
  auto n_or = [&](std::size_t fallback) { return o.n > 0 ? o.n : fallback; };

  auto columns = [&](const std::vector<std::vector<double>>& cols, std::size_t horizon) {
    for (std::size_t k = 0; k <= horizon; ++k) {
      std::vector<Cell> row{k};
      for (const auto& c : cols) row.push_back(c[k]);
      out.table.rows.push_back(std::move(row));
    }
  };

  switch (o.which) {
    case 1: {
      // M_n(1) against n for several delta
      const auto deltas = deltas_or({0.1, 0.5, 1.0, 2.0, 5.0});
      const std::size_t n = n_or(2000);
      out.config["delta"] = deltas;
      out.config["n"] = n;
      std::vector<std::vector<double>> cols;
      out.table.header = {"n"};
      for (double d : deltas) {
        cols.push_back(cusum_mgf_recursive(IncrementModel::normal_llr(d), 1.0, n).values);
        out.table.header.push_back("M_delta_" + short_number(d));
      }
      columns(cols, n);
      break;
    }
    case 2: {
      // E_n and V_n against n
      const auto deltas = deltas_or({1.0});
      const std::size_t n = n_or(2000);
      out.config["delta"] = deltas;
      out.config["n"] = n;
      std::vector<std::vector<double>> cols;
      out.table.header = {"n"};
      for (double d : deltas) {
        auto t = moment_table(IncrementModel::normal_llr(d), n);
        cols.push_back(std::move(t.means));
        cols.push_back(std::move(t.variances));
        out.table.header.push_back("E_delta_" + short_number(d));
        out.table.header.push_back("V_delta_" + short_number(d));
      }
      columns(cols, n);
      break;
    }
    case 3: {
      // M_n(lambda) just below, at and above lambda* = 1
      const auto deltas = deltas_or({1.0});
      if (deltas.size() != 1) throw UsageError("figure 3 takes a single --delta");
      const auto lambdas = o.lambdas.empty() ? std::vector<double>{0.999, 1.0, 1.001} : o.lambdas;
      const std::size_t n = n_or(2000);
      out.config["delta"] = deltas;
      out.config["lambda"] = lambdas;
      out.config["n"] = n;
      const auto model = IncrementModel::normal_llr(deltas[0]);
      std::vector<std::vector<double>> cols;
      out.table.header = {"n"};
      for (double lam : lambdas) {
        cols.push_back(cusum_mgf_recursive(model, lam, n).values);
        out.table.header.push_back("M_lambda_" + short_number(lam));
      }
      columns(cols, n);
      break;
    }
    case 4:
    case 5: {
      // thresholds and their bounds against n (4) or delta (5)
      const bool by_n = o.which == 4;
      const auto deltas = deltas_or(by_n ? std::vector<double>{0.1, 0.25, 0.5, 1, 1.5, 2, 3, 4}
                                         : std::vector<double>{0.1, 0.25, 0.5, 0.75, 1, 1.5, 2,
                                                               2.5, 3, 3.5, 4});
      std::vector<std::size_t> ns = o.ns;
      if (ns.empty()) ns = by_n ? std::vector<std::size_t>{50, 200, 500, 1000}
                                : std::vector<std::size_t>{1000};
      out.config["delta"] = deltas;
      out.config["ns"] = ns;
      out.config["alpha"] = o.alpha;
      out.config["mc-reps"] = o.mc_reps;
      out.config["seed"] = o.seed;
      std::vector<IncrementModel> models;
      for (double d : deltas) models.push_back(IncrementModel::normal_llr(d));
      out.table.header = detail::kThresholdHeader;
      for (const auto& r : detail::threshold_grid(models, ns, o.alpha, o.mc_reps, o.seed, o.threads)) {
        out.table.rows.push_back(detail::threshold_csv_row(r));
      }
      break;
    }
    default:
      throw UsageError("--which must be 1, 2, 3, 4 or 5");
  }
  Json rows = Json::array();
  for (const auto& row : out.table.rows) {
    Json r = Json::array();
    for (const auto& cell : row) r.push_back(cell.json());
    rows.push_back(std::move(r));
  }
  out.result = {{"columns", out.table.header}, {"rows", rows}};
  return out;
}

// ---------------------------------------------------------------------------
// driver

namespace detail {

/// Text of an echoed config value as it would be typed on the command line.
inline std::optional<std::string> flag_text(const Json& value) {
  if (value.is_null()) return std::nullopt;
  if (value.is_string()) return value.get<std::string>();
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_array()) {
    std::string text;
    for (std::size_t i = 0; i < value.size(); ++i) text += (i ? "," : "") + value[i].dump();
    return text;
  }
  return value.dump();
}

/// Appends `--key value` for every setting of the --config file whose flag
/// is not already given on the command line. The file is either flat
/// key=value lines or a JSON report, whose echoed config is replayed.
inline void inject_config_file(std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  std::vector<std::pair<std::string, std::string>> settings;
  const auto body = cusum::detail::trim(content);
  if (!body.empty() && body.front() == '{') {
    Json doc;
    try {
      doc = Json::parse(body);
    } catch (const Json::exception& e) {
      throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (doc.contains("command") && !args.empty() && doc["command"] != args.front()) {
      throw UsageError("config file '" + path + "' is a '" + doc["command"].get<std::string>() +
                       "' report");
    }
    const Json& config = doc.contains("config") ? doc["config"] : doc;
    if (!config.is_object()) throw UsageError("config in '" + path + "' is not an object");
    for (const auto& [key, value] : config.items()) {
      if (auto text = flag_text(value)) settings.emplace_back(key, *text);
    }
  } else {
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      const auto text = cusum::detail::trim(line);
      if (text.empty() || text.front() == '#') continue;
      const auto eq = text.find('=');
      if (eq == std::string_view::npos) throw UsageError("config line '" + line + "' lacks '='");
      settings.emplace_back(std::string(cusum::detail::trim(text.substr(0, eq))),
                            std::string(cusum::detail::trim(text.substr(eq + 1))));
    }
  }

  for (const auto& [key, value] : settings) {
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    if (value == "true") {
      args.push_back(flag);
    } else if (value != "false") {
      args.push_back(flag);
      args.push_back(value);
    }
  }
}

inline void write_output(std::ostream& os, const std::string& command, const std::string& format,
                         const Outcome& oc) {
  if (format == "json") {
    Json doc{{"schema_version", kSchemaVersion},
             {"command", command},
             {"config", oc.config},
             {"result", oc.result}};
    os << doc.dump(2) << '\n';
    return;
  }
  os << "# schema_version=" << kSchemaVersion << '\n' << "# command=" << command << '\n';
  for (const auto& [key, value] : oc.config.items()) {
    if (auto text = flag_text(value)) os << "# " << key << '=' << *text << '\n';
  }
  for (std::size_t i = 0; i < oc.table.header.size(); ++i) {
    os << (i ? "," : "") << oc.table.header[i];
  }
  os << '\n';
  for (const auto& row : oc.table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i].csv();
    os << '\n';
  }
}

}  // namespace detail

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err,
               std::istream& in = std::cin) {
  Options o;
  CLI::App app{"Exact moments, thresholds, simulation and change detection for the CUSUM process",
               "cusum"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.add_option("--config", "key=value file, or an earlier JSON report to replay, supplying flags not given on the command line");

  auto common = [&](CLI::App* sub, const char* default_format) {
    sub->add_option("--format", o.format, std::string("json or csv (default ") + default_format + ")")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--output,-o", o.output, "output file, - for stdout")->capture_default_str();
  };
  auto model_opt = [&](CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("--model", o.model,
                                "normal-llr:delta=D | shifted-normal:a=A,sigma=S | "
                                "bernoulli-pm:p=P | table:y=v1;v2,p=p1;p2[,llr]");
    if (required) opt->required();
    return opt;
  };
  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, std::string("RNG seed (default from ") + kSeedEnv + ")");
    sub->add_option("--threads", o.threads, "worker threads, 0 for all cores (results do not depend on it)");
  };

  std::map<std::string, std::string> default_format;

  auto* moments = app.add_subcommand("moments", "E W_n and Var W_n for n = 0..N");
  common(moments, "csv");
  default_format["moments"] = "csv";
  model_opt(moments);
  moments->add_option("--n", o.n, "horizon N")->required();

  auto* mgf = app.add_subcommand("mgf", "M_n(lambda) = E exp(lambda W_n) for n = 0..N");
  common(mgf, "csv");
  default_format["mgf"] = "csv";
  model_opt(mgf);
  mgf->add_option("--lambda", o.lambda, "exponent")->capture_default_str();
  mgf->add_option("--n", o.n, "horizon N")->required();
  mgf->add_option("--method", o.method, "recursive | matrix | bell | partition (N <= 12)")
      ->check(CLI::IsMember({"recursive", "matrix", "bell", "partition"}))
      ->capture_default_str();

  auto* threshold = app.add_subcommand("threshold", "upper and lower threshold bounds and the simulated threshold");
  common(threshold, "json");
  default_format["threshold"] = "json";
  model_opt(threshold, false);
  threshold->add_option("--delta", o.deltas, "normal-llr shorthand, comma-separated list")
      ->delimiter(',');
  threshold->add_option("--n", o.ns, "horizon(s), comma-separated")->delimiter(',')->required();
  threshold->add_option("--alpha", o.alpha, "false-alarm probability")->capture_default_str();
  threshold->add_option("--mc-reps", o.mc_reps, "Monte Carlo replications, 0 to skip")
      ->capture_default_str();
  seed_opt(threshold);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo paths of W");
  common(simulate, "json");
  default_format["simulate"] = "json";
  model_opt(simulate);
  simulate->add_option("--n", o.n, "horizon")->required();
  simulate->add_option("--reps", o.reps, "replications")->capture_default_str();
  simulate->add_option("--lambda", o.lambda, "exponent of the exp-moment estimate")
      ->capture_default_str();
  simulate->add_option("--raw", o.raw, "also write per-replication CSV (rep,w_n,max_w) here");
  simulate->add_option("--tail-h", o.tail_h, "estimate P(max W >= h)");
  simulate->add_option("--quantile-alpha", o.quantile_alpha, "estimate the upper-alpha quantile of max W");
  seed_opt(simulate);

  auto* regimes = app.add_subcommand("regimes", "growth regime of M_n(lambda)");
  common(regimes, "json");
  default_format["regimes"] = "json";
  model_opt(regimes);
  regimes->add_option("--lambda", o.lambdas, "exponent(s), comma-separated")->delimiter(',');
  regimes->add_option("--n", o.n, "also report M_n(lambda) at this n");

  auto* queue = app.add_subcommand("queue-bound", "P(queue reaches h within n steps), Y = service - interarrival");
  common(queue, "json");
  default_format["queue-bound"] = "json";
  model_opt(queue);
  queue->add_option("--n", o.n, "steps")->required();
  queue->add_option("--h", o.hs, "level(s), comma-separated")->delimiter(',')->required();

  auto* detect = app.add_subcommand("detect", "change detection on observations");
  common(detect, "json");
  default_format["detect"] = "json";
  detect->add_option("--f", o.f, "default density: normal:mean=M,sd=S | table:y=..,p=..");
  detect->add_option("--g", o.g, "disturbed density, same grammar");
  detect->add_option("--theta0", o.theta0, "normal shorthand: default mean");
  detect->add_option("--theta1", o.theta1, "normal shorthand: disturbed mean");
  detect->add_option("--sigma", o.sigma, "normal shorthand: common sd (default 1)");
  detect->add_option("--alpha", o.alpha, "false-alarm probability")->capture_default_str();
  detect->add_option("--threshold-variant", o.variant, "ub1 | ub2 | ub3 | custom")
      ->check(CLI::IsMember({"ub1", "ub2", "ub3", "custom"}))
      ->capture_default_str();
  detect->add_option("--h", o.h, "threshold for --threshold-variant custom");
  detect->add_option("--mode", o.mode, "abrupt | transient | monitor")
      ->check(CLI::IsMember({"abrupt", "transient", "monitor"}))
      ->capture_default_str();
  detect->add_option("--input", o.input, "observations file, - for stdin")->capture_default_str();
  detect->add_option("--input-format", o.input_format, "csv | jsonl (default from extension)")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  detect->add_option("--field", o.field, "CSV column or JSONL member holding the observation");
  detect->add_flag("--emit-path", o.emit_path, "include the W trajectory");
  detect->add_option("--state", o.state, "monitor mode: JSON state file, read if present and rewritten");
  detect->add_option("--horizon", o.horizon, "n used for the threshold (default: number of observations)");

  auto* figures = app.add_subcommand("figures", "data behind the figures");
  common(figures, "csv");
  default_format["figures"] = "csv";
  figures->add_option("--which", o.which, "1: M_n(1) vs n | 2: E_n, V_n vs n | 3: M_n(lambda) near 1 | "
                                          "4: thresholds vs n | 5: thresholds vs delta")
      ->required()
      ->check(CLI::Range(1, 5));
  figures->add_option("--delta,--deltas", o.deltas, "delta grid, comma-separated")->delimiter(',');
  figures->add_option("--n", o.n, "horizon (figures 1-3)");
  figures->add_option("--ns", o.ns, "horizons (figures 4-5)")->delimiter(',');
  figures->add_option("--lambda,--lambdas", o.lambdas, "exponents (figure 3)")->delimiter(',');
  figures->add_option("--alpha", o.alpha, "false-alarm probability (figures 4-5)")->capture_default_str();
  figures->add_option("--mc-reps", o.mc_reps, "Monte Carlo replications (figures 4-5), 0 to skip")
      ->capture_default_str();
  seed_opt(figures);

  CLI::App* chosen = nullptr;
  try {
    o.seed = default_seed();
    detail::inject_config_file(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    chosen = app.get_subcommands().front();
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "usage error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  const std::string name = chosen->get_name();
  const std::string format = o.format.empty() ? default_format[name] : o.format;
  try {
    std::unique_ptr<std::ofstream> raw_file;
    if (!o.raw.empty()) {
      raw_file = std::make_unique<std::ofstream>(o.raw);
      if (!*raw_file) throw Error(ErrorCode::InvalidArgument, "cannot write '" + o.raw + "'");
    }
    Outcome oc;
    if (name == "moments") oc = cmd_moments(o);
    else if (name == "mgf") oc = cmd_mgf(o);
    else if (name == "threshold") oc = cmd_threshold(o);
    else if (name == "simulate") oc = cmd_simulate(o, raw_file.get());
    else if (name == "regimes") oc = cmd_regimes(o);
    else if (name == "queue-bound") oc = cmd_queue_bound(o);
    else if (name == "detect") oc = cmd_detect(o, in);
    else oc = cmd_figures(o);
    oc.config["format"] = format;
    if (o.output == "-") {
      detail::write_output(out, name, format, oc);
    } else {
      std::ofstream file(o.output);
      if (!file) throw Error(ErrorCode::InvalidArgument, "cannot write '" + o.output + "'");
      detail::write_output(file, name, format, oc);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << chosen->help();
    return 2;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return e.code() == ErrorCode::ParseError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cusum::cli
