#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/fft.hpp"
#include "qtherm/model.hpp"
#include "qtherm/weakfields.hpp"

namespace qtherm {

enum class Preset { D1, D2, D3, custom };

inline Preset parse_preset(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "D1") return Preset::D1;
  if (s == "D2") return Preset::D2;
  if (s == "D3") return Preset::D3;
  if (s == "CUSTOM") return Preset::custom;
  throw std::invalid_argument("unknown preset '" + s + "' (expected D1|D2|D3|custom)");
}

inline const char* to_string(Preset p) {
  switch (p) {
    case Preset::D1: return "D1";
    case Preset::D2: return "D2";
    case Preset::D3: return "D3";
    case Preset::custom: return "custom";
  }
  return "?";
}

//! Initial centres and velocities of the three scenarios.
struct PresetValues {
  std::array<double, 2> x0;
  std::array<double, 2> p0;
};

inline PresetValues preset_values(Preset p, bool disorder) {
  switch (p) {
    case Preset::D1:
      return disorder ? PresetValues{{-20, 20}, {0, 0}} : PresetValues{{-2, 2}, {0, 0}};
    case Preset::D2:
      return disorder ? PresetValues{{-2, 2}, {20, 20}} : PresetValues{{-2, 2}, {4, 4}};
    case Preset::D3:
      return disorder ? PresetValues{{-20, 20}, {20, 20}} : PresetValues{{-2, 2}, {2, 2}};
    case Preset::custom: break;
  }
  throw std::invalid_argument("preset_values: custom has no table entry");
}

struct ScenarioConfig {
  Preset preset = Preset::D1;
  bool disorder = false;
  std::size_t particles = 2;
  std::array<double, 2> x0{-2.0, 2.0};
  std::array<double, 2> p0{0.0, 0.0};
  double sigma = 0.0;  //!< orbital width; 0 selects 1/sqrt(omega)
  TrapParams trap{};
  std::size_t points = 1024;
  double half_width = 45.0;
  double dt = 1e-3;
  double t_final = 400.0;
  std::uint64_t sample_every = 100;
  std::string output_dir;
  bool emit_plots = true;

  DerivativeBackend backend = DerivativeBackend::spectral;
  double node_threshold = 1e-12;
  FftPlanner planner = FftPlanner::estimate;
  std::string fft_wisdom;

  double delta = 0.1;
  double window = 20.0;
  double smoothing = 0.0;  //!< optional moving-average span for the t_eq detector
  //! Stop once t_eq is known and this much time has followed it (< 0: never).
  double stop_after = -1.0;
  bool dump_final = false;

  std::uint64_t seed() const { return trap.seed; }

  double orbital_width() const {
    return sigma > 0.0 ? sigma : GaussianSpec::ground_width(trap.omega);
  }

  std::vector<GaussianSpec> orbitals() const {
    std::vector<GaussianSpec> s;
    for (std::size_t j = 0; j < particles; ++j)
      s.push_back({x0[j], p0[j], orbital_width()});
    return s;
  }

  //! Reset x0 and p0 to the table entry of the current preset.
  void apply_preset() {
    if (preset == Preset::custom) return;
    const auto v = preset_values(preset, disorder);
    x0 = v.x0;
    p0 = v.p0;
    particles = 2;
  }

  void validate() const {
    trap.validate();
    if (particles < 1 || particles > 2)
      throw std::invalid_argument("particles must be 1 or 2");
    if (preset != Preset::custom) {
      const auto v = preset_values(preset, disorder);
      if (particles != 2 || v.x0 != x0 || v.p0 != p0)
        throw std::invalid_argument(
            std::string("x0/p0/particles differ from preset ") +
            to_string(preset) + "; use preset=custom to override them");
    }
    (void)make_grid(points, half_width);
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    if (!(t_final >= 0.0)) throw std::invalid_argument("t_final must be >= 0");
    if (sample_every < 1) throw std::invalid_argument("sample_every must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
    if (!(window > 0.0)) throw std::invalid_argument("window must be > 0");
    if (!(smoothing >= 0.0)) throw std::invalid_argument("smoothing must be >= 0");
    if (!(node_threshold >= 0.0))
      throw std::invalid_argument("node_threshold must be >= 0");
  }
};

//==============================================================================
namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument(key + ": expected a boolean, got '" + v + "'");
}
inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return d;
}
inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long d = 0;
  try {
    if (!v.empty() && v[0] != '-') d = std::stoull(v, &pos, 0);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return d;
}
inline std::array<double, 2> parse_pair(const std::string& key, const std::string& v) {
  const auto c = v.find(',');
  if (c == std::string::npos)
    throw std::invalid_argument(key + ": expected 'a,b', got '" + v + "'");
  return {parse_double(key, trim(v.substr(0, c))),
          parse_double(key, trim(v.substr(c + 1)))};
}
}  // namespace detail

//! Keys understood by set_config_value, in the order they are documented.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "preset",        "disorder",     "particles",     "x0",
      "p0",            "sigma",        "omega",         "alpha",
      "gamma_d",       "sigma_d",      "seed",          "points",
      "half_width",    "dt",           "t_final",       "sample_every",
      "output_dir",    "emit_plots",   "derivative_backend", "node_threshold",
      "fft_planner",   "fft_wisdom",   "delta",         "window",
      "smoothing",     "stop_after",   "dump_final"};
  return keys;
}

//! Apply one key=value setting. Choosing a preset or toggling disorder
//! reloads the table's x0 and p0.
inline void set_config_value(ScenarioConfig& c, const std::string& key,
                             const std::string& value) {
  using namespace detail;
  const std::string v = trim(value);
  if (key == "preset") {
    c.preset = parse_preset(v);
    c.apply_preset();
  } else if (key == "disorder") {
    c.disorder = parse_bool(key, v);
    c.apply_preset();
  } else if (key == "particles") c.particles = parse_uint(key, v);
  else if (key == "x0") c.x0 = parse_pair(key, v);
  else if (key == "p0") c.p0 = parse_pair(key, v);
  else if (key == "sigma") c.sigma = parse_double(key, v);
  else if (key == "omega") c.trap.omega = parse_double(key, v);
  else if (key == "alpha") c.trap.alpha = parse_double(key, v);
  else if (key == "gamma_d") c.trap.gamma_d = parse_double(key, v);
  else if (key == "sigma_d") c.trap.sigma_d = parse_double(key, v);
  else if (key == "seed") c.trap.seed = parse_uint(key, v);
  else if (key == "points") c.points = parse_uint(key, v);
  else if (key == "half_width") c.half_width = parse_double(key, v);
  else if (key == "dt") c.dt = parse_double(key, v);
  else if (key == "t_final") c.t_final = parse_double(key, v);
  else if (key == "sample_every") c.sample_every = parse_uint(key, v);
  else if (key == "output_dir") c.output_dir = v;
  else if (key == "emit_plots") c.emit_plots = parse_bool(key, v);
  else if (key == "derivative_backend") c.backend = parse_derivative_backend(v);
  else if (key == "node_threshold") c.node_threshold = parse_double(key, v);
  else if (key == "fft_planner") c.planner = parse_fft_planner(v);
  else if (key == "fft_wisdom") c.fft_wisdom = v;
  else if (key == "delta") c.delta = parse_double(key, v);
  else if (key == "window") c.window = parse_double(key, v);
  else if (key == "smoothing") c.smoothing = parse_double(key, v);
  else if (key == "stop_after") c.stop_after = parse_double(key, v);
  else if (key == "dump_final") c.dump_final = parse_bool(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

//! Flat `key = value` document; '#' starts a comment. Settings apply in
//! file order, so a preset line should precede x0/p0 overrides.
inline void load_config_text(ScenarioConfig& c, const std::string& text,
                             const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " +
                                  e.what());
    }
  }
}

inline void load_config_file(ScenarioConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  load_config_text(c, ss.str(), path);
}

//! Grid, potential and initial state described by a configuration.
struct Scenario {
  ConfigGrid grid;
  PotentialField potential;
  WaveFunction initial;
};

inline Scenario build_scenario(const ScenarioConfig& c) {
  c.validate();
  const ConfigGrid grid(make_grid(c.points, c.half_width), c.particles);
  PotentialField V = build_potential(c.trap, grid, c.disorder);
  WaveFunction psi = build_initial_state(c.orbitals(), grid);
  return {grid, std::move(V), std::move(psi)};
}

}  // namespace qtherm
