// SPDX-License-Identifier: Apache-2.0
//
// qloop: experiment runner for intermittently observed, capacity-limited
// control loops. Verbs: bounds, run, lyapunov, riccati, presets. Every
// command reads one JSON config, writes <prefix>.csv and
// <prefix>.report.json, and exits 0 (ok), 2 (config error), 3 (numeric
// error) or 4 (I/O error).
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qloop/analysis.hpp"
#include "qloop/channel.hpp"
#include "qloop/loop_sim.hpp"
#include "qloop/lqr.hpp"
#include "qloop/matrix.hpp"
#include "qloop/quantizer.hpp"
#include "qloop/switching.hpp"
#include "qloop/version.hpp"

using json = nlohmann::json;
using namespace qloop;

namespace {

struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// formatting

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------------------
// config parsing

[[noreturn]] void config_fail(const std::string& field, const std::string& why) {
  throw ConfigError("config field '" + field + "': " + why);
}

const json& require_key(const json& j, const std::string& key,
                        const std::string& ctx) {
  if (!j.contains(key)) config_fail(ctx + key, "missing");
  return j.at(key);
}

double get_number(const json& j, const std::string& key, const std::string& ctx) {
  const json& v = require_key(j, key, ctx);
  if (!v.is_number()) config_fail(ctx + key, "must be a number");
  return v.get<double>();
}

double get_number_or(const json& j, const std::string& key,
                     const std::string& ctx, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) config_fail(ctx + key, "must be a number");
  return v.get<double>();
}

std::uint64_t get_u64_or(const json& j, const std::string& key,
                         const std::string& ctx, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    config_fail(ctx + key, "must be a non-negative integer");
  return v.get<std::uint64_t>();
}

double parse_capacity(const json& v, const std::string& ctx) {
  if (v.is_string()) {
    if (v.get<std::string>() == "inf")
      return std::numeric_limits<double>::infinity();
    config_fail(ctx, "string value must be \"inf\"");
  }
  if (!v.is_number()) config_fail(ctx, "must be a number or \"inf\"");
  return v.get<double>();
}

Matrix parse_matrix(const json& v, const std::string& ctx) {
  if (!v.is_array() || v.empty()) config_fail(ctx, "must be a non-empty 2d array");
  const std::size_t rows = v.size();
  if (!v[0].is_array() || v[0].empty())
    config_fail(ctx, "must be a non-empty 2d array");
  const std::size_t cols = v[0].size();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!v[i].is_array() || v[i].size() != cols)
      config_fail(ctx, "ragged rows");
    for (std::size_t j = 0; j < cols; ++j) {
      if (!v[i][j].is_number()) config_fail(ctx, "entries must be numbers");
      m(i, j) = v[i][j].get<double>();
    }
  }
  return m;
}

ChannelModel parse_channel(const json& root) {
  const json& j = require_key(root, "channel", "");
  ChannelModel ch;
  ch.capacity_bits = parse_capacity(require_key(j, "capacity_bits", "channel."),
                                    "channel.capacity_bits");
  ch.epsilon = get_number_or(j, "epsilon", "channel.", 1e-3);
  try {
    ch.validate();
  } catch (const Error& e) {
    config_fail("channel", e.what());
  }
  return ch;
}

SwitchModel parse_switch(const json& root) {
  const json& j = require_key(root, "switch", "");
  const std::string kind =
      require_key(j, "kind", "switch.").get<std::string>();
  try {
    if (kind == "bernoulli")
      return SwitchModel::bernoulli(get_number(j, "p", "switch."));
    if (kind == "markov") {
      const double p = get_number(j, "p", "switch.");
      const double q = get_number(j, "q", "switch.");
      if (j.contains("pi0"))
        return SwitchModel::markov(p, q, get_number(j, "pi0", "switch."));
      return SwitchModel::markov(p, q);
    }
  } catch (const Error& e) {
    config_fail("switch", e.what());
  }
  config_fail("switch.kind", "must be \"bernoulli\" or \"markov\"");
}

struct ScalarPlantSpec {
  double alpha{0.0};
  double closed_gain{0.0};
  double b{1.0};
  double l{0.0};
  double sigma_w2{1.0};
  double sigma_0_2{1.0};
  bool synthesized{false};  // gain came from LQR weights
  double q_cost{0.0}, r_cost{0.0};
};

bool plant_is_vector(const json& root) {
  return require_key(root, "plant", "").contains("A");
}

ScalarPlantSpec parse_scalar_plant(const json& root) {
  const json& j = require_key(root, "plant", "");
  ScalarPlantSpec sp;
  sp.alpha = get_number(j, "alpha", "plant.");
  sp.sigma_w2 = get_number_or(j, "sigma_w2", "plant.", 1.0);
  sp.sigma_0_2 = get_number_or(j, "sigma_0_2", "plant.", 1.0);
  if (j.contains("closed_gain")) {
    sp.closed_gain = get_number(j, "closed_gain", "plant.");
    sp.b = 1.0;
    sp.l = sp.alpha - sp.closed_gain;
  } else if (j.contains("q_cost") && j.contains("r_cost")) {
    sp.b = get_number_or(j, "b", "plant.", 1.0);
    sp.q_cost = get_number(j, "q_cost", "plant.");
    sp.r_cost = get_number(j, "r_cost", "plant.");
    sp.synthesized = true;
    const ScalarGain g = scalar_lqr_gain(sp.alpha, sp.b, sp.q_cost, sp.r_cost);
    sp.l = g.l;
    sp.closed_gain = g.closed;
  } else {
    config_fail("plant", "needs either closed_gain or q_cost/r_cost");
  }
  if (!(std::abs(sp.alpha) > 1.0))
    config_fail("plant.alpha", "requires |alpha| > 1");
  if (!(sp.sigma_w2 >= 0.0)) config_fail("plant.sigma_w2", "must be >= 0");
  if (!(sp.sigma_0_2 >= 0.0)) config_fail("plant.sigma_0_2", "must be >= 0");
  return sp;
}

struct VectorPlantSpec {
  Matrix A, B, L, W, P0;
  bool synthesized{false};
  Matrix Q, R;  // when synthesized
};

VectorPlantSpec parse_vector_plant(const json& root) {
  const json& j = require_key(root, "plant", "");
  VectorPlantSpec vp;
  vp.A = parse_matrix(require_key(j, "A", "plant."), "plant.A");
  vp.B = parse_matrix(require_key(j, "B", "plant."), "plant.B");
  vp.W = parse_matrix(require_key(j, "W", "plant."), "plant.W");
  vp.P0 = parse_matrix(require_key(j, "P0", "plant."), "plant.P0");
  if (j.contains("L")) {
    vp.L = parse_matrix(j.at("L"), "plant.L");
  } else if (j.contains("Q") && j.contains("R")) {
    vp.Q = parse_matrix(j.at("Q"), "plant.Q");
    vp.R = parse_matrix(j.at("R"), "plant.R");
    vp.synthesized = true;
    VectorPlant pl;
    pl.A = vp.A;
    pl.B = vp.B;
    pl.W = vp.W;
    pl.P0 = vp.P0;
    pl.Q = vp.Q;
    pl.R = vp.R;
    try {
      vp.L = lqr_gain(pl).L;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      config_fail("plant", e.what());
    }
  } else {
    config_fail("plant", "needs either L or Q/R");
  }
  return vp;
}

struct CommonOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> horizon;
  std::optional<std::size_t> threads;
  std::string out;
};

// ---------------------------------------------------------------------------
// output helpers

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open output file: " + path);
  return f;
}

json stability_to_json(const StabilityReport& rep, const char* bound_name) {
  json s;
  s["regime"] = regime_name(rep.regime);
  s[bound_name] = rep.bound;
  s["raw_bound"] = rep.raw_bound;
  s["capacity_threshold_bits"] = rep.capacity_threshold_bits;
  s["stable"] = rep.stable;
  if (rep.norm_criterion_unsatisfiable) s["norm_criterion_unsatisfiable"] = true;
  if (rep.asymptotic_second_moment)
    s["asymptotic_second_moment"] = *rep.asymptotic_second_moment;
  return s;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < m.cols; ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

void write_report(const std::string& prefix, const json& report) {
  auto f = open_out(prefix + ".report.json");
  f << report.dump(2) << "\n";
  if (!f) throw IoError("failed writing " + prefix + ".report.json");
}

json report_envelope(const std::string& mode, std::uint64_t seed,
                     const json& config_echo) {
  json rep;
  rep["mode"] = mode;
  rep["version"] = kVersion;
  rep["timestamp"] = iso_timestamp();
  rep["seed"] = seed;
  rep["config"] = config_echo;
  return rep;
}

double inf_to_json_safe(double v) {
  // JSON has no inf; reports store it as a large sentinel string-free field.
  return v;
}

// ---------------------------------------------------------------------------
// bounds sweep

std::vector<double> parse_capacity_grid(const json& root) {
  const json& g = require_key(root, "grid", "");
  std::vector<double> out;
  if (g.contains("capacity_bits")) {
    const json& arr = g.at("capacity_bits");
    if (!arr.is_array() || arr.empty())
      config_fail("grid.capacity_bits", "must be a non-empty array");
    for (const auto& v : arr)
      out.push_back(parse_capacity(v, "grid.capacity_bits[]"));
  } else {
    const double lo = get_number(g, "capacity_min", "grid.");
    const double hi = get_number(g, "capacity_max", "grid.");
    const auto count =
        static_cast<std::size_t>(get_number(g, "capacity_count", "grid."));
    if (count < 1) config_fail("grid.capacity_count", "must be >= 1");
    if (!(hi >= lo)) config_fail("grid.capacity_max", "must be >= capacity_min");
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(count == 1 ? lo
                               : lo + (hi - lo) * static_cast<double>(i) /
                                          static_cast<double>(count - 1));
    if (g.contains("include_infinite") && g.at("include_infinite").get<bool>())
      out.push_back(std::numeric_limits<double>::infinity());
  }
  return out;
}

int cmd_bounds(const json& cfg, const CommonOverrides& ov) {
  if (plant_is_vector(cfg))
    config_fail("plant", "bounds sweeps take a scalar plant");
  const ScalarPlantSpec sp = parse_scalar_plant(cfg);
  const SwitchModel sw = parse_switch(cfg);
  const double epsilon =
      cfg.contains("channel")
          ? get_number_or(cfg.at("channel"), "epsilon", "channel.", 1e-3)
          : 1e-3;
  const std::vector<double> caps = parse_capacity_grid(cfg);
  std::vector<double> alphas{sp.alpha};
  if (cfg.contains("grid") && cfg.at("grid").contains("alphas")) {
    alphas.clear();
    for (const auto& v : cfg.at("grid").at("alphas")) {
      if (!v.is_number()) config_fail("grid.alphas", "entries must be numbers");
      alphas.push_back(v.get<double>());
    }
    if (alphas.empty()) config_fail("grid.alphas", "must be non-empty");
  }
  const bool markov = sw.kind == SwitchKind::markov;
  const char* bound_col = markov ? "ratio_max" : "p_max";

  auto csv = open_out(ov.out + ".csv");
  csv << "capacity_bits,alpha,closed_gain," << bound_col << ",regime\n";
  json rows = json::array();
  for (double alpha : alphas) {
    ScalarLoop lp;
    lp.alpha = alpha;
    lp.closed_gain = sp.closed_gain;
    lp.sigma_w2 = sp.sigma_w2;
    lp.sigma_0_2 = sp.sigma_0_2;
    for (double c : caps) {
      const ChannelModel ch = std::isinf(c) ? ChannelModel::infinite(epsilon)
                                            : ChannelModel::finite(c, epsilon);
      const StabilityReport rep = markov ? markov_scalar_bound(lp, ch)
                                         : bernoulli_scalar_bound(lp, ch);
      csv << (std::isinf(c) ? "inf" : fmt_double(c)) << ","
          << fmt_double(alpha) << "," << fmt_double(sp.closed_gain) << ","
          << fmt_double(rep.bound) << "," << regime_name(rep.regime) << "\n";
      json row;
      row["capacity_bits"] = std::isinf(c) ? json("inf") : json(c);
      row["alpha"] = alpha;
      row["bound"] = rep.bound;
      row["regime"] = regime_name(rep.regime);
      rows.push_back(row);
    }
  }
  if (!csv) throw IoError("failed writing " + ov.out + ".csv");

  json rep = report_envelope("bounds_sweep", ov.seed.value_or(0), cfg);
  rep["results"]["rows"] = rows.size();
  rep["results"]["bound_column"] = bound_col;
  write_report(ov.out, rep);
  return 0;
}

// ---------------------------------------------------------------------------
// run: trajectory / ensemble / variance_curve

StabilityReport scalar_report_for(const ScalarPlantSpec& sp,
                                  const SwitchModel& sw, const ChannelModel& ch) {
  ScalarLoop lp;
  lp.alpha = sp.alpha;
  lp.closed_gain = sp.closed_gain;
  lp.sigma_w2 = sp.sigma_w2;
  lp.sigma_0_2 = sp.sigma_0_2;
  StabilityReport rep;
  double asym = 0.0;
  if (sw.kind == SwitchKind::markov) {
    rep = markov_scalar_bound(lp, ch);
    asym = markov_scalar_asymptotic_var(lp, ch, sw.p, sw.q);
    rep.stable = rep.regime != Regime::below_threshold && sw.q > 0.0 &&
                 sw.p / sw.q < rep.bound;
  } else {
    rep = bernoulli_scalar_bound(lp, ch);
    asym = bernoulli_scalar_asymptotic_var(lp, ch, sw.p);
    rep.stable = rep.regime != Regime::below_threshold && sw.p < rep.bound;
  }
  rep.asymptotic_second_moment = asym;
  return rep;
}

ScalarLoopConfig assemble_scalar_config(const json& cfg,
                                        const CommonOverrides& ov,
                                        const ScalarPlantSpec& sp) {
  ScalarLoopConfig lc;
  lc.alpha = sp.alpha;
  lc.b = sp.b;
  lc.l = sp.l;
  lc.sigma_w2 = sp.sigma_w2;
  lc.sigma_0_2 = sp.sigma_0_2;
  lc.sw = parse_switch(cfg);
  lc.ch = parse_channel(cfg);
  lc.horizon = ov.horizon.value_or(
      static_cast<std::size_t>(get_number_or(cfg, "horizon", "", 100.0)));
  lc.seed = ov.seed.value_or(get_u64_or(cfg, "seed", "", 1));
  lc.divergence_threshold =
      get_number_or(cfg, "divergence_threshold", "", 1e9);
  if (cfg.contains("support_sigmas") && !cfg.at("support_sigmas").is_null())
    lc.support_sigmas = get_number(cfg, "support_sigmas", "");
  if (cfg.contains("x0")) lc.x0_fixed = get_number(cfg, "x0", "");
  try {
    lc.validate();
  } catch (const Error& e) {
    config_fail("run", e.what());
  }
  return lc;
}

VectorLoopConfig assemble_vector_config(const json& cfg,
                                        const CommonOverrides& ov,
                                        const VectorPlantSpec& vp) {
  VectorLoopConfig lc;
  lc.A = vp.A;
  lc.B = vp.B;
  lc.L = vp.L;
  lc.W = vp.W;
  lc.P0 = vp.P0;
  lc.sw = parse_switch(cfg);
  lc.ch = parse_channel(cfg);
  lc.horizon = ov.horizon.value_or(
      static_cast<std::size_t>(get_number_or(cfg, "horizon", "", 100.0)));
  lc.seed = ov.seed.value_or(get_u64_or(cfg, "seed", "", 1));
  lc.divergence_threshold =
      get_number_or(cfg, "divergence_threshold", "", 1e9);
  if (cfg.contains("support_sigmas") && !cfg.at("support_sigmas").is_null())
    lc.support_sigmas = get_number(cfg, "support_sigmas", "");
  try {
    lc.validate();
  } catch (const Error& e) {
    config_fail("run", e.what());
  }
  return lc;
}

int cmd_run(const json& cfg, const CommonOverrides& ov) {
  const std::string mode =
      require_key(cfg, "mode", "").get<std::string>();
  if (mode != "trajectory" && mode != "ensemble" && mode != "variance_curve")
    config_fail("mode", "run accepts trajectory, ensemble or variance_curve");
  const bool vector_plant = plant_is_vector(cfg);

  if (mode == "variance_curve") {
    if (vector_plant)
      config_fail("plant", "variance_curve takes a scalar plant");
    const ScalarPlantSpec sp = parse_scalar_plant(cfg);
    const SwitchModel sw = parse_switch(cfg);
    const ChannelModel ch = parse_channel(cfg);
    const auto horizon = ov.horizon.value_or(
        static_cast<std::size_t>(get_number_or(cfg, "horizon", "", 300.0)));
    ScalarLoop lp;
    lp.alpha = sp.alpha;
    lp.closed_gain = sp.closed_gain;
    lp.sigma_w2 = sp.sigma_w2;
    lp.sigma_0_2 = sp.sigma_0_2;
    const auto seq = variance_sequence_scalar(lp, sw, ch, horizon);
    auto csv = open_out(ov.out + ".csv");
    csv << "k,sigma_sq\n";
    for (std::size_t k = 0; k < seq.size(); ++k)
      csv << k << "," << fmt_double(seq[k]) << "\n";
    if (!csv) throw IoError("failed writing " + ov.out + ".csv");
    json rep = report_envelope(mode, ov.seed.value_or(0), cfg);
    rep["stability"] =
        stability_to_json(scalar_report_for(sp, sw, ch),
                          sw.kind == SwitchKind::markov ? "ratio_max" : "p_max");
    rep["results"]["final_sigma_sq"] = inf_to_json_safe(seq.back());
    write_report(ov.out, rep);
    return 0;
  }

  if (mode == "trajectory") {
    json rep = report_envelope(mode, 0, cfg);
    Trace tr;
    if (vector_plant) {
      const VectorPlantSpec vp = parse_vector_plant(cfg);
      VectorLoopConfig lc = assemble_vector_config(cfg, ov, vp);
      rep["seed"] = lc.seed;
      tr = run_vector(lc);
      const Matrix closed = lc.closed();
      json stab;
      stab["open_norm"] = spectral_norm(lc.A);
      stab["closed_norm"] = spectral_norm(closed);
      try {
        const StabilityReport vb =
            lc.sw.kind == SwitchKind::markov
                ? vector_markov_bound(lc.A, closed)
                : vector_bernoulli_bound(lc.A, closed);
        stab[lc.sw.kind == SwitchKind::markov ? "ratio_max" : "p_max"] =
            vb.bound;
        stab["norm_criterion_unsatisfiable"] = vb.norm_criterion_unsatisfiable;
      } catch (const Error& e) {
        stab["bound_error"] = e.what();
      }
      rep["stability"] = stab;
    } else {
      const ScalarPlantSpec sp = parse_scalar_plant(cfg);
      ScalarLoopConfig lc = assemble_scalar_config(cfg, ov, sp);
      rep["seed"] = lc.seed;
      tr = run_scalar(lc);
      rep["stability"] =
          stability_to_json(scalar_report_for(sp, lc.sw, lc.ch),
                            lc.sw.kind == SwitchKind::markov ? "ratio_max"
                                                             : "p_max");
    }
    auto csv = open_out(ov.out + ".csv");
    csv << "k";
    for (std::size_t i = 0; i < tr.dim; ++i)
      csv << ",x" << (tr.dim == 1 ? std::string() : std::to_string(i));
    csv << ",gamma,delta_sq\n";
    const std::size_t rows = tr.states.size() / tr.dim;
    for (std::size_t k = 0; k < rows; ++k) {
      csv << k;
      for (std::size_t i = 0; i < tr.dim; ++i)
        csv << "," << fmt_double(tr.state(k, i));
      if (k < tr.steps())
        csv << "," << static_cast<int>(tr.gammas[k]) << ","
            << fmt_double(tr.deltas_sq[k]);
      else
        csv << ",,";
      csv << "\n";
    }
    if (!csv) throw IoError("failed writing " + ov.out + ".csv");
    rep["results"]["steps"] = tr.steps();
    rep["results"]["overflow_count"] = tr.overflow_count;
    rep["results"]["typicality_violations"] = tr.typicality_violations;
    if (tr.first_divergence)
      rep["results"]["first_divergence"] = *tr.first_divergence;
    write_report(ov.out, rep);
    return 0;
  }

  // ensemble
  const auto runs = ov.runs.value_or(
      static_cast<std::size_t>(get_number_or(cfg, "runs", "", 1000.0)));
  EnsembleOptions opts;
  opts.threads = ov.threads.value_or(
      static_cast<std::size_t>(get_number_or(cfg, "threads", "", 1.0)));
  json rep = report_envelope(mode, 0, cfg);
  EnsembleStats st;
  if (vector_plant) {
    const VectorPlantSpec vp = parse_vector_plant(cfg);
    VectorLoopConfig lc = assemble_vector_config(cfg, ov, vp);
    rep["seed"] = lc.seed;
    st = run_ensemble(lc, runs, opts);
    json stab;
    const Matrix closed = lc.closed();
    stab["open_norm"] = spectral_norm(lc.A);
    stab["closed_norm"] = spectral_norm(closed);
    try {
      const double weight = stationary_pi(lc.sw);
      const Matrix pinf = solve_stationary_covariance(
          lc.A, closed, lc.W, weight, StationaryMethod::linear_system);
      stab["stationary_covariance"] = matrix_to_json(pinf);
      double trace = 0.0;
      for (std::size_t i = 0; i < pinf.rows; ++i) trace += pinf(i, i);
      stab["stationary_trace"] = trace;
    } catch (const Error& e) {
      stab["stationary_error"] = e.what();
    }
    rep["stability"] = stab;
  } else {
    const ScalarPlantSpec sp = parse_scalar_plant(cfg);
    ScalarLoopConfig lc = assemble_scalar_config(cfg, ov, sp);
    rep["seed"] = lc.seed;
    st = run_ensemble(lc, runs, opts);
    rep["stability"] =
        stability_to_json(scalar_report_for(sp, lc.sw, lc.ch),
                          lc.sw.kind == SwitchKind::markov ? "ratio_max"
                                                           : "p_max");
  }
  auto csv = open_out(ov.out + ".csv");
  csv << "k,moment_estimate,ci_halfwidth,diverged_fraction\n";
  for (std::size_t k = 0; k < st.moment.size(); ++k)
    csv << k << "," << fmt_double(st.moment[k]) << ","
        << fmt_double(st.ci_halfwidth[k]) << ","
        << fmt_double(st.diverged_fraction[k]) << "\n";
  if (!csv) throw IoError("failed writing " + ov.out + ".csv");
  rep["results"]["runs"] = st.runs;
  rep["results"]["final_moment"] = st.moment.back();
  rep["results"]["final_ci_halfwidth"] = st.ci_halfwidth.back();
  rep["results"]["diverged_fraction"] = st.diverged_fraction.back();
  rep["results"]["overflow_total"] = st.overflow_total;
  rep["results"]["typicality_total"] = st.typicality_total;
  write_report(ov.out, rep);
  return 0;
}

// ---------------------------------------------------------------------------
// lyapunov / riccati

int cmd_lyapunov(const json& cfg, const CommonOverrides& ov) {
  const VectorPlantSpec vp = parse_vector_plant(cfg);
  const SwitchModel sw = parse_switch(cfg);
  double weight = 0.0;
  try {
    weight = stationary_pi(sw);
  } catch (const Error& e) {
    config_fail("switch", e.what());
  }
  const Matrix closed = vp.A - vp.B * vp.L;
  const Matrix p_lin = solve_stationary_covariance(
      vp.A, closed, vp.W, weight, StationaryMethod::linear_system);
  const Matrix p_fix = solve_stationary_covariance(
      vp.A, closed, vp.W, weight, StationaryMethod::fixed_point);
  const double gap = max_abs(p_lin - p_fix);

  auto csv = open_out(ov.out + ".csv");
  csv << "i,j,p_infinity\n";
  for (std::size_t i = 0; i < p_lin.rows; ++i)
    for (std::size_t j = 0; j < p_lin.cols; ++j)
      csv << i << "," << j << "," << fmt_double(p_lin(i, j)) << "\n";
  if (!csv) throw IoError("failed writing " + ov.out + ".csv");

  json rep = report_envelope("lyapunov", ov.seed.value_or(0), cfg);
  rep["results"]["weight"] = weight;
  rep["results"]["p_linear_system"] = matrix_to_json(p_lin);
  rep["results"]["p_fixed_point"] = matrix_to_json(p_fix);
  rep["results"]["method_gap"] = gap;
  rep["results"]["open_norm"] = spectral_norm(vp.A);
  rep["results"]["closed_norm"] = spectral_norm(closed);
  write_report(ov.out, rep);
  return 0;
}

int cmd_riccati(const json& cfg, const CommonOverrides& ov) {
  const json& j = require_key(cfg, "plant", "");
  VectorPlant pl;
  pl.A = parse_matrix(require_key(j, "A", "plant."), "plant.A");
  pl.B = parse_matrix(require_key(j, "B", "plant."), "plant.B");
  pl.Q = parse_matrix(require_key(j, "Q", "plant."), "plant.Q");
  pl.R = parse_matrix(require_key(j, "R", "plant."), "plant.R");
  pl.W = j.contains("W") ? parse_matrix(j.at("W"), "plant.W")
                         : Matrix::identity(pl.A.rows);
  pl.P0 = j.contains("P0") ? parse_matrix(j.at("P0"), "plant.P0")
                           : Matrix::identity(pl.A.rows);
  try {
    pl.validate();
  } catch (const Error& e) {
    config_fail("plant", e.what());
  }
  const double tol = get_number_or(cfg, "tol", "", 1e-12);
  const DareSolution sol = solve_dare(pl, tol);
  const GainResult g = lqr_gain(pl, tol);
  const auto cert = certify_closed_loop(g.closed);

  auto csv = open_out(ov.out + ".csv");
  csv << "i,j,P,L,closed\n";
  for (std::size_t i = 0; i < pl.A.rows; ++i)
    for (std::size_t jj = 0; jj < pl.A.cols; ++jj) {
      csv << i << "," << jj << "," << fmt_double(sol.P(i, jj)) << ",";
      if (i < g.L.rows) csv << fmt_double(g.L(i, jj));
      csv << "," << fmt_double(g.closed(i, jj)) << "\n";
    }
  if (!csv) throw IoError("failed writing " + ov.out + ".csv");

  json rep = report_envelope("riccati", ov.seed.value_or(0), cfg);
  rep["results"]["P"] = matrix_to_json(sol.P);
  rep["results"]["L"] = matrix_to_json(g.L);
  rep["results"]["closed"] = matrix_to_json(g.closed);
  rep["results"]["iterations"] = sol.iterations;
  rep["results"]["residual"] = sol.residual;
  rep["results"]["closed_norm"] = cert.closed_norm;
  rep["results"]["spectral_radius_estimate"] = cert.spectral_radius_estimate;
  rep["results"]["schur_stable"] = cert.schur_stable;
  rep["results"]["norm_contractive"] = cert.norm_contractive;
  if (!cert.norm_contractive)
    rep["results"]["warning"] =
        "||A-BL||_2 >= 1: the vector intermittence bounds are unsatisfiable "
        "for this gain";
  write_report(ov.out, rep);
  return 0;
}

// ---------------------------------------------------------------------------
// presets: the four bundled example parameterizations

json preset_config(const std::string& name) {
  json cfg;
  cfg["mode"] = "trajectory";
  cfg["horizon"] = 1000;
  cfg["seed"] = 1;
  cfg["channel"] = {{"capacity_bits", 6.0}, {"epsilon", 1e-3}};
  json plant = {{"alpha", 3.3}, {"closed_gain", 0.4}, {"sigma_w2", 1.0}};
  if (name == "bernoulli-stable") {
    plant["sigma_0_2"] = 4.0;
    cfg["plant"] = plant;
    cfg["switch"] = {{"kind", "bernoulli"}, {"p", 0.1}};
  } else if (name == "bernoulli-unstable") {
    plant["sigma_0_2"] = 4.0;
    cfg["plant"] = plant;
    cfg["switch"] = {{"kind", "bernoulli"}, {"p", 0.3}};
  } else if (name == "markov-stable") {
    plant["sigma_0_2"] = 1.0;
    cfg["plant"] = plant;
    cfg["switch"] = {{"kind", "markov"}, {"p", 0.05}, {"q", 0.95}};
  } else if (name == "markov-unstable") {
    plant["sigma_0_2"] = 1.0;
    cfg["plant"] = plant;
    cfg["switch"] = {{"kind", "markov"}, {"p", 0.25}, {"q", 0.95}};
  } else {
    config_fail("preset", "unknown preset name: " + name);
  }
  return cfg;
}

const char* kPresetNames[] = {"bernoulli-stable", "bernoulli-unstable",
                              "markov-stable", "markov-unstable"};

int cmd_presets(const std::string& write_dir) {
  if (write_dir.empty()) {
    for (const char* name : kPresetNames) {
      const json cfg = preset_config(name);
      std::cout << name << ": alpha=3.3 closed_gain=0.4 "
                << cfg["switch"].dump() << " C=6\n";
    }
    return 0;
  }
  for (const char* name : kPresetNames) {
    const std::string path = write_dir + "/" + name + ".json";
    auto f = open_out(path);
    f << preset_config(name).dump(2) << "\n";
    if (!f) throw IoError("failed writing " + path);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path);
  json cfg;
  try {
    cfg = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intermittent quantized control loop experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_prefix;
  std::string preset_dir;
  CommonOverrides ov;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "JSON experiment config");
    if (needs_config) c->required();
    sub->add_option("--out", out_prefix, "output path prefix");
    sub->add_option("--seed", ov.seed, "override config seed");
    sub->add_option("--runs", ov.runs, "override ensemble run count");
    sub->add_option("--horizon", ov.horizon, "override horizon");
    sub->add_option("--threads", ov.threads, "ensemble worker threads");
  };

  auto* bounds = app.add_subcommand("bounds", "stability bound sweep to CSV");
  add_common(bounds, true);
  auto* run = app.add_subcommand("run", "trajectory / ensemble / variance curve");
  add_common(run, true);
  auto* lyap = app.add_subcommand("lyapunov", "stationary covariance solvers");
  add_common(lyap, true);
  auto* ricc = app.add_subcommand("riccati", "DARE solution and LQR gain");
  add_common(ricc, true);
  auto* presets = app.add_subcommand("presets", "bundled example configs");
  presets->add_option("--write", preset_dir, "write preset JSON files here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (presets->parsed()) return cmd_presets(preset_dir);

    json cfg = load_config(config_path);
    if (!out_prefix.empty()) {
      ov.out = out_prefix;
    } else if (cfg.contains("out") && cfg.at("out").is_string()) {
      ov.out = cfg.at("out").get<std::string>();
    } else {
      config_fail("out", "missing (set config \"out\" or pass --out)");
    }

    if (bounds->parsed()) {
      if (cfg.contains("mode") && cfg.at("mode") != "bounds_sweep")
        config_fail("mode", "bounds expects mode bounds_sweep");
      return cmd_bounds(cfg, ov);
    }
    if (run->parsed()) return cmd_run(cfg, ov);
    if (lyap->parsed()) return cmd_lyapunov(cfg, ov);
    if (ricc->parsed()) return cmd_riccati(cfg, ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
