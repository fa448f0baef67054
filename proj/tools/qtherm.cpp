// qtherm command line: run scenarios, list presets, audit invariants.

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qtherm/qtherm.hpp"

namespace fs = std::filesystem;
using namespace qtherm;

namespace {

// Flags shared by `run` and `check`, kept as strings and applied through the
// same key=value path as config files so both routes validate identically.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> preset;
  std::optional<bool> disorder;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, std::string>> spec = {
      {"particles", "--particles"},   {"x0", "--x0"},
      {"p0", "--p0"},                 {"sigma", "--sigma"},
      {"omega", "--omega"},           {"alpha", "--alpha"},
      {"gamma_d", "--gamma-d"},       {"sigma_d", "--sigma-d"},
      {"seed", "--seed"},             {"points", "--points"},
      {"half_width", "--half-width"}, {"dt", "--dt"},
      {"t_final", "--t-final"},       {"sample_every", "--sample-every"},
      {"output_dir", "--output-dir"}, {"derivative_backend", "--backend"},
      {"node_threshold", "--node-threshold"}, {"fft_planner", "--fft-planner"},
      {"fft_wisdom", "--fft-wisdom"}, {"delta", "--delta"},
      {"window", "--window"},         {"smoothing", "--smoothing"},
      {"stop_after", "--stop-after"}};
  bool no_plots = false;
  bool dump_final = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "flat key = value config file")
        ->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "D1 | D2 | D3 | custom");
    app->add_flag("--disorder,!--no-disorder", disorder,
                  "switch the speckle disorder on or off");
    for (const auto& [key, flag] : spec)
      app->add_option_function<std::string>(
          flag, [this, k = key](const std::string& v) { values[k] = v; },
          "sets '" + key + "'");
    app->add_flag("--no-plots", no_plots, "skip the plot scripts");
    app->add_flag("--dump-final", dump_final, "write final_state.bin");
  }

  ScenarioConfig resolve(ScenarioConfig c) const {
    if (!config_file.empty()) load_config_file(c, config_file);
    if (preset) set_config_value(c, "preset", *preset);
    if (disorder) set_config_value(c, "disorder", *disorder ? "true" : "false");
    for (const auto& [key, flag] : spec)
      if (auto it = values.find(key); it != values.end())
        set_config_value(c, key, it->second);
    if (no_plots) c.emit_plots = false;
    if (dump_final) c.dump_final = true;
    c.validate();
    return c;
  }
};

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos)
    throw std::invalid_argument("--seeds expects a..b, got '" + s + "'");
  const auto a = std::stoull(s.substr(0, dots));
  const auto b = std::stoull(s.substr(dots + 2));
  if (b < a) throw std::invalid_argument("--seeds: empty range " + s);
  return {a, b};
}

void print_sample(const DiagnosticsRecord& r) {
  std::fprintf(stderr,
               "t=%9.3f  norm-1=%+.2e  <H>=%.8f  <K>=%.6f  <V_H>=%.6f  "
               "<K_B>=%.6f  <Q_B>=%.6f%s\n",
               r.t, r.norm - 1.0, r.H_total, r.K_total, r.V_H_mean, r.K_B, r.Q_B,
               r.flags ? "  [flagged]" : "");
}

int run_single(const ScenarioConfig& cfg, bool quiet, int every) {
  int count = 0;
  SampleObserver obs;
  if (!quiet)
    obs = [&](const DiagnosticsRecord& r, const ComRecord*) {
      if (count++ % every == 0) print_sample(r);
    };
  const RunResult res = run_to_directory(cfg, obs);
  for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (res.flagged_samples)
    std::fprintf(stderr, "warning: %zu samples failed a cross-check (flags 0x%x)\n",
                 res.flagged_samples, res.flags_seen);
  const fs::path dir = cfg.output_dir.empty() ? default_output_dir(cfg)
                                              : fs::path(cfg.output_dir);
  std::printf("wrote %s\n", dir.string().c_str());
  for (const auto& v : res.verdicts) {
    if (v.t_eq)
      std::printf("  %-14s t_eq = %.3f\n", to_string(v.channel), *v.t_eq);
    else
      std::printf("  %-14s t_eq = none\n", to_string(v.channel));
  }
  return 0;
}

// One child process per seed, at most `jobs` alive at a time.
int run_ensemble(const ScenarioConfig& base, std::uint64_t a, std::uint64_t b,
                 int jobs) {
  const fs::path root = base.output_dir.empty()
                            ? default_output_dir(base).parent_path() /
                                  (std::string(to_string(base.preset)) + "_ensemble")
                            : fs::path(base.output_dir);
  fs::create_directories(root);
  std::vector<ScenarioConfig> cfgs;
  for (std::uint64_t s = a; s <= b; ++s) {
    ScenarioConfig c = base;
    c.trap.seed = s;
    c.output_dir = (root / ("seed_" + std::to_string(s))).string();
    cfgs.push_back(c);
  }
  std::map<pid_t, std::size_t> alive;
  std::vector<int> status(cfgs.size(), -1);
  std::size_t next = 0;
  std::fflush(nullptr);
  while (next < cfgs.size() || !alive.empty()) {
    while (next < cfgs.size() && static_cast<int>(alive.size()) < jobs) {
      const pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        int rc = 0;
        try {
          run_to_directory(cfgs[next]);
        } catch (const std::exception& e) {
          std::fprintf(stderr, "seed %llu: %s\n",
                       static_cast<unsigned long long>(cfgs[next].trap.seed), e.what());
          rc = 1;
        }
        std::fflush(nullptr);
        _exit(rc);
      }
      alive[pid] = next++;
    }
    int st = 0;
    const pid_t done = wait(&st);
    if (done < 0) break;
    const std::size_t idx = alive[done];
    alive.erase(done);
    status[idx] = WIFEXITED(st) ? WEXITSTATUS(st) : 1;
    std::printf("seed %llu finished (%s)\n",
                static_cast<unsigned long long>(cfgs[idx].trap.seed),
                status[idx] == 0 ? "ok" : "failed");
  }

  nlohmann::ordered_json agg;
  agg["seeds"] = nlohmann::ordered_json::array();
  std::map<std::string, std::vector<double>> teq;
  std::map<std::string, std::size_t> missing;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    nlohmann::ordered_json e;
    e["seed"] = cfgs[i].trap.seed;
    e["status"] = status[i];
    std::ifstream f(fs::path(cfgs[i].output_dir) / "verdict.json");
    if (status[i] == 0 && f) {
      const auto v = nlohmann::json::parse(f);
      for (const auto& ch : v["channels"]) {
        const std::string name = ch["channel"];
        e[name] = ch["t_eq"];
        if (ch["t_eq"].is_null())
          ++missing[name];
        else
          teq[name].push_back(ch["t_eq"].get<double>());
      }
    }
    agg["seeds"].push_back(e);
  }
  nlohmann::ordered_json stats;
  for (const char* name : {"equipartition", "virial", "correlations"}) {
    const auto& v = teq[name];
    nlohmann::ordered_json s;
    s["detected"] = v.size();
    s["not_detected"] = missing[name];
    if (!v.empty()) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      s["mean"] = mean;
      s["std"] = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      s["min"] = *std::min_element(v.begin(), v.end());
      s["max"] = *std::max_element(v.begin(), v.end());
    }
    stats[name] = s;
  }
  agg["t_eq"] = stats;
  std::ofstream out(root / "ensemble.json");
  out << agg.dump(2) << '\n';
  std::printf("wrote %s\n", (root / "ensemble.json").string().c_str());
  for (int s : status)
    if (s != 0) return 1;
  return 0;
}

void print_presets() {
  std::printf("%-7s %-9s %-14s %-14s\n", "preset", "disorder", "x0", "p0");
  for (Preset p : {Preset::D1, Preset::D2, Preset::D3})
    for (bool d : {false, true}) {
      const auto v = preset_values(p, d);
      std::printf("%-7s %-9s (%g, %g)%*s(%g, %g)\n", to_string(p), d ? "yes" : "no",
                  v.x0[0], v.x0[1], 6, "", v.p0[0], v.p0[1]);
    }
  const ScenarioConfig c;
  std::printf("\ndefaults: omega=%g alpha=%g gamma_d=%g sigma_d=%g points=%zu "
              "half_width=%g dt=%g t_final=%g sample_every=%llu\n",
              c.trap.omega, c.trap.alpha, c.trap.gamma_d, c.trap.sigma_d, c.points,
              c.half_width, c.dt, c.t_final,
              static_cast<unsigned long long>(c.sample_every));
}

// Short trajectory with every invariant audited at each sample.
int run_check(const ScenarioConfig& cfg) {
  Scenario sc = build_scenario(cfg);
  const PropagatorPlan plan(sc.potential, cfg.dt, cfg.planner);
  const Differentiator diff(sc.grid, cfg.planner);
  const WeakFieldOptions wopt{cfg.backend, cfg.node_threshold};
  const bool sym = sc.grid.particles() == 2;
  int failures = 0;
  // |Im C_weak| is listed but not gated: it is nonzero for any state with
  // a nontrivial phase, while twoCweak_im_terms checks its exact value.
  auto report = [&](const std::string& name, double value, double tol,
                    bool gated = true) {
    const bool ok = value <= tol;
    if (!ok && gated) ++failures;
    std::printf("  [%s] %-26s %.3e (tol %.1e)\n",
                ok ? "ok  " : (gated ? "FAIL" : "info"), name.c_str(), value, tol);
  };

  std::vector<DiagnosticsRecord> series;
  std::map<std::string, std::pair<double, double>> worst;
  auto sink = [&](const WaveFunction& psi) {
    const WeakFieldSet wf = compute_weak_fields(psi, diff, wopt);
    SampleOptions so;
    so.exchange_symmetric = sym;
    series.push_back(sample(psi, sc.potential, wf, so));
    const IdentityReport rep = check_identities(psi, wf, diff, {}, sym);
    for (const auto& c : rep.checks) {
      auto& w = worst[c.name];
      w.first = std::max(w.first, c.residual);
      w.second = c.tolerance;
    }
  };
  const WaveFunction fin = evolve(sc.initial, plan, cfg.t_final, cfg.sample_every, sink);

  std::printf("identities over %zu samples (worst residual):\n", series.size());
  for (const auto& [name, w] : worst)
    report(name, w.first, w.second, name != "twoCweak_im");

  std::printf("trajectory invariants:\n");
  double norm_drift = 0.0, h_drift = 0.0;
  std::uint32_t flags = 0;
  for (const auto& r : series) {
    norm_drift = std::max(norm_drift, std::abs(r.norm - series[0].norm));
    h_drift = std::max(h_drift, std::abs(r.H_total - series[0].H_total) /
                                    std::abs(series[0].H_total));
    flags |= r.flags & ~static_cast<std::uint32_t>(flag_two_c_weak_im);
  }
  report("norm drift", norm_drift, 1e-9);
  report("energy drift (relative)", h_drift, 1e-6);
  report("record cross-check flags", static_cast<double>(flags), 0.0);
  if (series.size() >= 3) report("ehrenfest defect", ehrenfest_check(series), 1e-4);
  if (sym) {
    const std::size_t M = sc.grid.axis().points();
    double anti = 0.0;
    for (std::size_t a = 0; a < M; ++a)
      for (std::size_t b = 0; b < M; ++b)
        anti = std::max(anti, std::abs(fin.amplitudes[a * M + b] +
                                       fin.amplitudes[b * M + a]));
    report("exchange antisymmetry", anti, 1e-12);
  }
  const WaveFunction back =
      evolve(fin, plan.reversed(), sc.initial.time, 1000000000ULL,
             [](const WaveFunction&) {});
  report("time reversal L2", l2_distance(back, sc.initial), 1e-8);
  std::printf("%s\n", failures ? "check FAILED" : "check passed");
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-fermion trap dynamics with weak-value diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(qtherm::version));

  auto* run = app.add_subcommand("run", "propagate a scenario and export diagnostics");
  ConfigFlags run_flags;
  run_flags.attach(run);
  std::string seeds;
  int jobs = 1;
  bool quiet = false;
  int progress_every = 10;
  run->add_option("--seeds", seeds, "disorder ensemble a..b, one process per seed");
  run->add_option("-j,--jobs", jobs, "parallel processes for --seeds")
      ->check(CLI::PositiveNumber);
  run->add_flag("-q,--quiet", quiet, "no progress lines");
  run->add_option("--progress-every", progress_every, "print every n-th sample")
      ->check(CLI::PositiveNumber);

  app.add_subcommand("presets", "list the scenario table and defaults");

  auto* check = app.add_subcommand("check", "audit invariants on a short trajectory");
  ConfigFlags check_flags;
  check_flags.attach(check);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("presets")) {
      print_presets();
      return 0;
    }
    if (app.got_subcommand("run")) {
      const ScenarioConfig cfg = run_flags.resolve(ScenarioConfig{});
      if (!seeds.empty()) {
        const auto [a, b] = parse_seed_range(seeds);
        return run_ensemble(cfg, a, b, jobs);
      }
      return run_single(cfg, quiet, progress_every);
    }
    if (app.got_subcommand("check")) {
      ScenarioConfig small;
      small.points = 128;
      small.half_width = 10.0;
      small.t_final = 2.0;
      small.sample_every = 100;
      small.emit_plots = false;
      return run_check(check_flags.resolve(small));
    }
  } catch (const PropagationError& e) {
    std::fprintf(stderr, "error: propagation failed: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: invalid configuration: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
