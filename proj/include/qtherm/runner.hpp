#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "qtherm/comframe.hpp"
#include "qtherm/diagnostics.hpp"
#include "qtherm/propagator.hpp"
#include "qtherm/scenario.hpp"
#include "qtherm/weakfields.hpp"

#ifndef QTHERM_VERSION
#define QTHERM_VERSION "0.0.0"
#endif

namespace qtherm {

inline constexpr const char* version = QTHERM_VERSION;

//==============================================================================
// CSV schema (see docs/schema.md). Columns are fixed for every run; values a
// run cannot define (second particle for N = 1, frame split) are "nan".

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "t",          "norm",        "x_mean_1",   "x_mean_2",   "p_mean_1",
      "p_mean_2",   "v_mean_1",    "v_mean_2",   "u_mean_1",   "u_mean_2",
      "K_total",    "K_weak",      "V_H_mean",   "V_I_mean",   "V_D_mean",
      "H_total",    "K_B_1",       "K_B_2",      "Q_B_1",      "Q_B_2",
      "K_B",        "Q_B",         "C_pp",       "C_vv",       "C_uu",
      "C_xx",       "C_weak_re",   "C_weak_im",  "equipartition_ratio",
      "virial_ratio", "masked_probability", "flags",
      "com_K",      "com_V_H",     "com_E",      "com_K_B",    "com_Q_B",
      "rel_K",      "rel_V_H",     "rel_V_I",    "rel_E",      "rel_K_B",
      "rel_Q_B"};
  return cols;
}

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_csv_header(std::ostream& os) {
  const auto& c = csv_columns();
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  os << '\n';
}

inline void write_csv_row(std::ostream& os, const DiagnosticsRecord& r,
                          const std::optional<ComRecord>& c) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto at = [&](const std::vector<double>& v, std::size_t j) {
    return j < v.size() ? v[j] : nan;
  };
  const std::vector<double> vals = {
      r.t, r.norm, at(r.x_mean, 0), at(r.x_mean, 1), at(r.p_mean, 0),
      at(r.p_mean, 1), at(r.v_mean, 0), at(r.v_mean, 1), at(r.u_mean, 0),
      at(r.u_mean, 1), r.K_total, r.K_weak, r.V_H_mean, r.V_I_mean, r.V_D_mean,
      r.H_total, at(r.K_B_j, 0), at(r.K_B_j, 1), at(r.Q_B_j, 0), at(r.Q_B_j, 1),
      r.K_B, r.Q_B, r.C_pp, r.C_vv, r.C_uu, r.C_xx, r.C_weak.real(),
      r.C_weak.imag(), r.equipartition_ratio, r.virial_ratio,
      r.masked_probability};
  for (std::size_t i = 0; i < vals.size(); ++i)
    os << (i ? "," : "") << format_double(vals[i]);
  os << ',' << r.flags;
  const std::vector<double> frame =
      c ? std::vector<double>{c->K_c, c->V_H_c, c->E_c, c->K_B_c, c->Q_B_c,
                              c->K_r, c->V_H_r, c->V_I_r, c->E_r, c->K_B_r,
                              c->Q_B_r}
        : std::vector<double>(11, nan);
  for (double v : frame) os << ',' << format_double(v);
  os << '\n';
}

//==============================================================================
//! Averages over [t_from, end] used to judge a thermalized window.
struct WindowAverages {
  double t_from = 0.0;
  std::size_t samples = 0;
  double K_B = 0.0, Q_B = 0.0, K = 0.0, V_H = 0.0;
  double C_pp = 0.0, C_vv = 0.0, C_uu = 0.0, C_xx = 0.0;
  double K_B_c = 0.0, Q_B_c = 0.0, K_B_r = 0.0, Q_B_r = 0.0;

  double equipartition_ratio() const { return K_B / Q_B; }
  double virial_ratio() const { return K / V_H; }
};

inline WindowAverages window_averages(const std::vector<DiagnosticsRecord>& s,
                                      const std::vector<ComRecord>& com,
                                      double t_from) {
  WindowAverages w;
  w.t_from = t_from;
  CompensatedSum kb, qb, k, vh, cpp, cvv, cuu, cxx, kbc, qbc, kbr, qbr;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].t < t_from) continue;
    ++w.samples;
    kb += s[i].K_B;
    qb += s[i].Q_B;
    k += s[i].K_total;
    vh += s[i].V_H_mean;
    cpp += s[i].C_pp;
    cvv += s[i].C_vv;
    cuu += s[i].C_uu;
    cxx += s[i].C_xx;
    if (i < com.size()) {
      kbc += com[i].K_B_c;
      qbc += com[i].Q_B_c;
      kbr += com[i].K_B_r;
      qbr += com[i].Q_B_r;
    }
  }
  if (w.samples == 0) return w;
  const double n = static_cast<double>(w.samples);
  w.K_B = kb.value() / n;
  w.Q_B = qb.value() / n;
  w.K = k.value() / n;
  w.V_H = vh.value() / n;
  w.C_pp = cpp.value() / n;
  w.C_vv = cvv.value() / n;
  w.C_uu = cuu.value() / n;
  w.C_xx = cxx.value() / n;
  w.K_B_c = kbc.value() / n;
  w.Q_B_c = qbc.value() / n;
  w.K_B_r = kbr.value() / n;
  w.Q_B_r = qbr.value() / n;
  return w;
}

//==============================================================================
struct RunResult {
  std::vector<DiagnosticsRecord> series;
  std::vector<ComRecord> com;
  std::vector<ThermalizationVerdict> verdicts;  //!< equipartition, virial, correlations
  std::optional<WaveFunction> final_state;
  std::vector<std::string> warnings;
  bool stopped_early = false;
  std::size_t flagged_samples = 0;
  std::uint32_t flags_seen = 0;
  double wall_seconds = 0.0;

  const ThermalizationVerdict& verdict(Channel c) const {
    for (const auto& v : verdicts)
      if (v.channel == c) return v;
    throw std::out_of_range("no verdict for channel");
  }
};

inline std::vector<ThermalizationVerdict> all_verdicts(
    const std::vector<DiagnosticsRecord>& s, const ScenarioConfig& c) {
  std::vector<ThermalizationVerdict> v;
  for (Channel ch : {Channel::equipartition, Channel::virial, Channel::correlations})
    v.push_back(detect_t_eq(s, c.delta, c.window, ch, c.smoothing));
  return v;
}

namespace detail {
//! Field-sized buffers are allocated and freed at every sample while small
//! records accumulate. glibc's adaptive mmap threshold moves such buffers to
//! the brk heap, where the records pin freed space and the heap grows by about
//! one field per sample; a fixed threshold keeps them in mmap.
inline void pin_large_allocations_to_mmap() {
#if defined(__GLIBC__)
  static const bool done = [] { return mallopt(M_MMAP_THRESHOLD, 1 << 20) == 1; }();
  (void)done;
#endif
}
}  // namespace detail

//! Progress callback: (record, frame record or null).
using SampleObserver =
    std::function<void(const DiagnosticsRecord&, const ComRecord*)>;

//! Propagate a scenario and sample diagnostics; writes CSV rows to `csv`
//! as they are produced when given.
inline RunResult simulate(const ScenarioConfig& cfg, std::ostream* csv = nullptr,
                          const SampleObserver& observer = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::pin_large_allocations_to_mmap();
  if (!cfg.fft_wisdom.empty()) import_fft_wisdom(cfg.fft_wisdom);
  Scenario sc = build_scenario(cfg);
  const PropagatorPlan plan(sc.potential, cfg.dt, cfg.planner);
  const Differentiator diff(sc.grid, cfg.planner);
  if (!cfg.fft_wisdom.empty()) export_fft_wisdom(cfg.fft_wisdom);

  RunResult res;
  res.warnings = plan.warnings();
  const WeakFieldOptions wopt{cfg.backend, cfg.node_threshold};
  SampleOptions sopt;
  sopt.exchange_symmetric = sc.grid.particles() == 2;
  const bool frame = sc.grid.particles() == 2;
  if (csv) write_csv_header(*csv);
  double last_probe = -1e300;

  auto sink = [&](const WaveFunction& psi) -> bool {
    const WeakFieldSet wf = compute_weak_fields(psi, diff, wopt);
    res.series.push_back(sample(psi, sc.potential, wf, sopt));
    const auto& r = res.series.back();
    std::optional<ComRecord> c;
    if (frame) {
      c = com_sample(psi, sc.potential, wf);
      res.com.push_back(*c);
    }
    if (r.flags) {
      ++res.flagged_samples;
      res.flags_seen |= r.flags;
    }
    if (csv) {
      write_csv_row(*csv, r, c);
      csv->flush();
    }
    if (observer) observer(r, c ? &*c : nullptr);
    if (cfg.stop_after >= 0.0 && r.t - last_probe >= 1.0) {
      last_probe = r.t;
      const auto v = detect_t_eq(res.series, cfg.delta, cfg.window,
                                 Channel::equipartition, cfg.smoothing);
      if (v.t_eq && r.t >= *v.t_eq + std::max(cfg.stop_after, cfg.window)) {
        res.stopped_early = true;
        return false;
      }
    }
    return true;
  };
  WaveFunction fin = evolve(sc.initial, plan, cfg.t_final, cfg.sample_every, sink);
  res.verdicts = all_verdicts(res.series, cfg);
  if (cfg.dump_final) res.final_state = std::move(fin);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

//==============================================================================
inline nlohmann::ordered_json config_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = to_string(c.preset);
  j["disorder"] = c.disorder;
  j["particles"] = c.particles;
  j["x0"] = {c.x0[0], c.x0[1]};
  j["p0"] = {c.p0[0], c.p0[1]};
  j["sigma"] = c.orbital_width();
  j["omega"] = c.trap.omega;
  j["alpha"] = c.trap.alpha;
  j["gamma_d"] = c.trap.gamma_d;
  j["sigma_d"] = c.trap.sigma_d;
  j["seed"] = c.trap.seed;
  j["points"] = c.points;
  j["half_width"] = c.half_width;
  j["dt"] = c.dt;
  j["t_final"] = c.t_final;
  j["sample_every"] = c.sample_every;
  j["output_dir"] = c.output_dir;
  j["emit_plots"] = c.emit_plots;
  j["derivative_backend"] = to_string(c.backend);
  j["node_threshold"] = c.node_threshold;
  j["fft_planner"] = to_string(c.planner);
  j["fft_wisdom"] = c.fft_wisdom;
  j["delta"] = c.delta;
  j["window"] = c.window;
  j["smoothing"] = c.smoothing;
  j["stop_after"] = c.stop_after;
  j["dump_final"] = c.dump_final;
  return j;
}

inline nlohmann::ordered_json verdict_json(const RunResult& r,
                                           const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["primary_channel"] = "equipartition";
  j["t_end"] = r.series.empty() ? 0.0 : r.series.back().t;
  j["samples"] = r.series.size();
  j["stopped_early"] = r.stopped_early;
  j["flagged_samples"] = r.flagged_samples;
  j["flags_seen"] = r.flags_seen;
  nlohmann::ordered_json chans = nlohmann::ordered_json::array();
  for (const auto& v : r.verdicts) {
    nlohmann::ordered_json e;
    e["channel"] = to_string(v.channel);
    e["t_eq"] = v.t_eq ? nlohmann::ordered_json(*v.t_eq) : nlohmann::ordered_json();
    e["threshold"] = v.threshold;
    e["window"] = v.window;
    e["smoothing"] = v.smoothing;
    if (v.t_eq) {
      const auto w = window_averages(r.series, r.com, *v.t_eq);
      e["after_t_eq"] = {{"samples", w.samples},
                         {"equipartition_ratio", w.equipartition_ratio()},
                         {"virial_ratio", w.virial_ratio()},
                         {"C_pp", w.C_pp},
                         {"C_vv", w.C_vv},
                         {"C_uu", w.C_uu},
                         {"C_xx", w.C_xx}};
    }
    chans.push_back(e);
  }
  j["channels"] = chans;
  (void)c;
  return j;
}

//==============================================================================
inline void write_plot_scripts(const std::filesystem::path& dir) {
  {
    std::ofstream g(dir / "panels.gp");
    g << R"(# gnuplot panels.gp  ->  panels.png
set datafile separator ','
set terminal pngcairo size 1400,1000
set output 'panels.png'
set multiplot layout 2,3
set key outside top
set xlabel 't'
set title 'energies'
plot 'series.csv' using 't':'K_total' with lines title '<K>', \
     '' using 't':'V_H_mean' with lines title '<V_H>', \
     '' using 't':(100*column('V_I_mean')) with lines title '100<V_I>', \
     '' using 't':'H_total' with lines title '<H>'
set title 'velocities and positions'
plot 'series.csv' using 't':'x_mean_1' with lines title '<x>', \
     '' using 't':'v_mean_1' with lines title '<v>', \
     '' using 't':'u_mean_1' with lines title '<u>'
set title 'kinetic comparison'
plot 'series.csv' using 't':'K_total' with lines title '<K>', \
     '' using 't':'K_B' with lines title '<K_B>', \
     '' using 't':'Q_B' with lines title '<Q_B>'
set title 'correlations'
plot 'series.csv' using 't':'C_pp' with lines title 'C_pp', \
     '' using 't':'C_vv' with lines title 'C_vv', \
     '' using 't':'C_uu' with lines title 'C_uu', \
     '' using 't':'C_xx' with lines title 'C_xx'
set title 'frame energies'
plot 'series.csv' using 't':'com_E' with lines title 'E_c', \
     '' using 't':'rel_E' with lines title 'E_r'
set title 'frame equipartition'
plot 'series.csv' using 't':'com_K_B' with lines title 'K_B,c', \
     '' using 't':'com_Q_B' with lines title 'Q_B,c', \
     '' using 't':'rel_K_B' with lines title 'K_B,r', \
     '' using 't':'rel_Q_B' with lines title 'Q_B,r'
unset multiplot
)";
  }
  {
    std::ofstream p(dir / "panels.py");
    p << R"(#!/usr/bin/env python3
"""python3 panels.py  ->  panels.png (needs matplotlib)."""
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
with open(here / "series.csv", newline="") as f:
    rows = list(csv.DictReader(f))
col = {k: [float(r[k]) for r in rows] for k in rows[0]}
t = col["t"]

panels = [
    ("energies", [("K_total", "<K>", 1), ("V_H_mean", "<V_H>", 1),
                  ("V_I_mean", "100<V_I>", 100), ("H_total", "<H>", 1)]),
    ("velocities and positions", [("x_mean_1", "<x>", 1), ("v_mean_1", "<v>", 1),
                                  ("u_mean_1", "<u>", 1)]),
    ("kinetic comparison", [("K_total", "<K>", 1), ("K_B", "<K_B>", 1),
                            ("Q_B", "<Q_B>", 1)]),
    ("correlations", [("C_pp", "C_pp", 1), ("C_vv", "C_vv", 1),
                      ("C_uu", "C_uu", 1), ("C_xx", "C_xx", 1)]),
    ("frame energies", [("com_E", "E_c", 1), ("rel_E", "E_r", 1)]),
    ("frame equipartition", [("com_K_B", "K_B,c", 1), ("com_Q_B", "Q_B,c", 1),
                             ("rel_K_B", "K_B,r", 1), ("rel_Q_B", "Q_B,r", 1)]),
]
fig, axes = plt.subplots(2, 3, figsize=(15, 9), sharex=True)
for ax, (title, curves) in zip(axes.flat, panels):
    for key, label, scale in curves:
        ax.plot(t, [scale * v for v in col[key]], label=label)
    ax.set_title(title)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(here / "panels.png", dpi=120)
)";
  }
}

//! Binary dump: magic "QTHRMWF1", u64 particles, u64 points, f64 half_width,
//! f64 time, then interleaved (re, im) doubles in grid order.
inline void write_state(const std::filesystem::path& path, const WaveFunction& psi) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const char magic[8] = {'Q', 'T', 'H', 'R', 'M', 'W', 'F', '1'};
  f.write(magic, 8);
  const std::uint64_t n = psi.grid.particles(), m = psi.grid.axis().points();
  const double L = psi.grid.axis().half_width();
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(&m), 8);
  f.write(reinterpret_cast<const char*>(&L), 8);
  f.write(reinterpret_cast<const char*>(&psi.time), 8);
  f.write(reinterpret_cast<const char*>(psi.amplitudes.data()),
          static_cast<std::streamsize>(psi.size() * sizeof(cplx)));
}

inline std::filesystem::path default_output_dir(const ScenarioConfig& c) {
  const char* root = std::getenv("QTHERM_OUTPUT_ROOT");
  std::filesystem::path base = root && *root ? root : "runs";
  std::string name = std::string(to_string(c.preset)) +
                     (c.disorder ? "_disorder_seed" + std::to_string(c.trap.seed)
                                 : "_clean");
  return base / name;
}

//! Full run: creates the output directory and writes run.json, series.csv,
//! verdict.json and (optionally) plot scripts and the final state.
inline RunResult run_to_directory(ScenarioConfig cfg,
                                  const SampleObserver& observer = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir.empty() ? default_output_dir(cfg)
                                              : fs::path(cfg.output_dir);
  cfg.output_dir = dir.string();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  auto write_json = [&](const fs::path& p, const nlohmann::ordered_json& j) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << j.dump(2) << '\n';
  };
  nlohmann::ordered_json meta;
  meta["code_version"] = version;
  meta["seed"] = cfg.trap.seed;
  meta["config"] = config_json(cfg);
  write_json(dir / "run.json", meta);

  std::ofstream csv(dir / "series.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "series.csv").string());
  RunResult res = simulate(cfg, &csv, observer);
  csv.close();
  if (!csv) throw std::runtime_error("error while writing series.csv");

  meta["warnings"] = res.warnings;
  meta["wall_seconds"] = res.wall_seconds;
  write_json(dir / "run.json", meta);
  write_json(dir / "verdict.json", verdict_json(res, cfg));
  if (cfg.emit_plots) write_plot_scripts(dir);
  if (cfg.dump_final && res.final_state) write_state(dir / "final_state.bin", *res.final_state);
  return res;
}

}  // namespace qtherm
