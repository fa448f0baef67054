#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/lattice.hpp"
#include "qtherm/model.hpp"
#include "qtherm/weakfields.hpp"

namespace qtherm {

//! Cross-check failures recorded on a sample. The run continues; the bits
//! land in the `flags` CSV column.
enum CheckFlag : std::uint32_t {
  flag_kinetic_routes = 1u << 0,   //!< spectral <K> vs 1/2 sum(<v^2>+<u^2>)
  flag_energy_sum = 1u << 1,       //!< <H> vs <K> + <V_H> + <V_I> + <V_D>
  flag_two_c = 1u << 2,            //!< C_pp vs C_vv + C_uu
  flag_two_c_weak_re = 1u << 3,    //!< Re C_weak vs 2 C_uu
  flag_two_c_weak_im = 1u << 4,    //!< |Im C_weak|
  flag_u_mean = 1u << 5,           //!< |<u_j>|
  flag_p_equals_v = 1u << 6,       //!< <p_j> vs <v_j>
  flag_exchange = 1u << 7,         //!< particle 1 vs 2 per-particle values
  flag_masked_probability = 1u << 8,
};

struct SampleTolerances {
  double kinetic_rel = 1e-6;
  double energy_rel = 1e-6;
  double correlation = 1e-6;  //!< scaled by max(1, |C_pp|)
  double first_moment = 1e-8;
  double exchange = 1e-10;
  double masked_probability = 1e-8;
};

struct SampleOptions {
  //! Assert per-particle equality (states that are (anti)symmetric under
  //! particle exchange in an exchange-symmetric potential).
  bool exchange_symmetric = true;
  SampleTolerances tol{};
};

struct DiagnosticsRecord {
  double t = 0.0;
  double norm = 0.0;
  std::vector<double> x_mean, p_mean, v_mean, u_mean;
  std::vector<double> K_B_j, Q_B_j;
  double K_total = 0.0;  //!< spectral <K>
  double K_weak = 0.0;   //!< 1/2 sum_j (<v_j^2> + <u_j^2>)
  double V_H_mean = 0.0, V_I_mean = 0.0, V_D_mean = 0.0;
  double H_total = 0.0;
  double K_B = 0.0, Q_B = 0.0;
  double C_pp = 0.0, C_vv = 0.0, C_uu = 0.0, C_xx = 0.0;
  cplx C_weak{0.0, 0.0};
  double equipartition_ratio = 0.0;  //!< <K_B>/<Q_B>
  double virial_ratio = 0.0;         //!< <K>/<V_H>
  double masked_probability = 0.0;
  std::uint32_t flags = 0;
};

namespace detail {
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}
}  // namespace detail

inline DiagnosticsRecord sample(const WaveFunction& psi, const PotentialField& V,
                                const WeakFieldSet& wf,
                                const SampleOptions& opt = {}) {
  if (!(psi.grid == V.grid) || !(psi.grid == wf.grid))
    throw std::invalid_argument("sample: arguments live on different grids");
  const std::size_t N = psi.grid.particles();
  const auto& tol = opt.tol;
  DiagnosticsRecord r;
  r.t = psi.time;
  r.norm = norm_sq(psi);
  r.masked_probability = wf.masked_probability;

  for (std::size_t j = 0; j < N; ++j) {
    r.x_mean.push_back(expectation(coordinate_field(psi.grid, j), psi));
    r.p_mean.push_back(wf.moments.p_mean[j]);
    r.v_mean.push_back(wf.v_mean(j));
    r.u_mean.push_back(wf.u_mean(j));
  }
  std::vector<PairIntegrals> pairs(pair_count(N));
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t l = j; l < N; ++l)
      pairs[pair_index(j, l, N)] = wf.pair_integrals(j, l);
  for (std::size_t j = 0; j < N; ++j) {
    const auto& pj = pairs[pair_index(j, j, N)];
    r.K_B_j.push_back(0.5 * pj.vv);
    r.Q_B_j.push_back(0.5 * pj.uu);
    r.K_B += 0.5 * pj.vv;
    r.Q_B += 0.5 * pj.uu;
  }
  r.K_total = wf.moments.kinetic;
  r.K_weak = r.K_B + r.Q_B;
  r.V_H_mean = expectation(V.harmonic, psi);
  r.V_I_mean = expectation(V.interaction, psi);
  r.V_D_mean = expectation(V.disorder, psi);
  r.H_total = r.K_total + expectation(V.values, psi);
  r.equipartition_ratio = r.K_B / r.Q_B;
  r.virial_ratio = r.K_total / r.V_H_mean;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (N >= 2) {
    const auto& p01 = pairs[pair_index(0, 1, N)];
    r.C_pp = wf.moments.pp[pair_index(0, 1, N)] - r.p_mean[0] * r.p_mean[1];
    r.C_vv = p01.vv - r.v_mean[0] * r.v_mean[1];
    r.C_uu = p01.uu - r.u_mean[0] * r.u_mean[1];
    RealField x0x1(psi.size());
    for (std::size_t i = 0; i < psi.size(); ++i)
      x0x1[i] = psi.grid.coordinate(i, 0) * psi.grid.coordinate(i, 1);
    r.C_xx = expectation(x0x1, psi) - r.x_mean[0] * r.x_mean[1];
    r.C_weak = cplx{-p01.du, -p01.dv};
  } else {
    r.C_pp = r.C_vv = r.C_uu = r.C_xx = nan;
    r.C_weak = cplx{nan, nan};
  }

  if (!detail::close_rel(r.K_total, r.K_weak, tol.kinetic_rel))
    r.flags |= flag_kinetic_routes;
  if (!detail::close_rel(r.H_total,
                         r.K_total + r.V_H_mean + r.V_I_mean + r.V_D_mean,
                         tol.energy_rel))
    r.flags |= flag_energy_sum;
  if (N >= 2) {
    const double scale = std::max(1.0, std::abs(r.C_pp));
    if (std::abs(r.C_pp - (r.C_vv + r.C_uu)) > tol.correlation * scale)
      r.flags |= flag_two_c;
    if (std::abs(r.C_weak.real() - 2.0 * r.C_uu) > tol.correlation * scale)
      r.flags |= flag_two_c_weak_re;
    if (std::abs(r.C_weak.imag()) > tol.correlation * scale)
      r.flags |= flag_two_c_weak_im;
  }
  for (std::size_t j = 0; j < N; ++j) {
    if (std::abs(r.u_mean[j]) > tol.first_moment) r.flags |= flag_u_mean;
    if (std::abs(r.p_mean[j] - r.v_mean[j]) >
        tol.first_moment * std::max(1.0, std::abs(r.p_mean[j])))
      r.flags |= flag_p_equals_v;
  }
  if (opt.exchange_symmetric && N >= 2) {
    auto same = [&](const std::vector<double>& a) {
      for (std::size_t j = 1; j < N; ++j)
        if (std::abs(a[j] - a[0]) >
            tol.exchange * std::max(1.0, std::abs(a[0])))
          return false;
      return true;
    };
    if (!same(r.x_mean) || !same(r.p_mean) || !same(r.v_mean) ||
        !same(r.K_B_j) || !same(r.Q_B_j))
      r.flags |= flag_exchange;
  }
  if (r.masked_probability > tol.masked_probability)
    r.flags |= flag_masked_probability;
  return r;
}

//==============================================================================
//! One line of the identity audit.
struct IdentityCheck {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool passed() const { return residual <= tolerance; }
};

struct IdentityReport {
  double t = 0.0;
  std::vector<IdentityCheck> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const IdentityCheck& c) { return c.passed(); });
  }
  const IdentityCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

//! Relative L2 residual of the osmotic balance
//!   1/2 d_j^2 rho - d_j (u_j rho) = 0
//! with both derivatives taken by the set's backend on grid fields. The
//! spectral version is exact only while rho itself is resolved on the grid,
//! i.e. the momentum content of psi stays below half the Nyquist wavenumber.
inline double osmotic_balance_residual(const WeakFieldSet& wf,
                                       const Differentiator& diff,
                                       std::size_t j) {
  const std::size_t n = wf.psi.size();
  ComplexField rho(n), flux(n);
  for (std::size_t i = 0; i < n; ++i) {
    rho[i] = wf.density[i];
    flux[i] = wf.mask[i] ? std::real(std::conj(wf.psi[i]) * wf.d.first[j][i])
                         : wf.u[j][i] * wf.density[i];
  }
  constexpr double nu = 0.5;
  const ComplexField d2 = diff.second_derivative(rho, j, j, wf.backend);
  const ComplexField d1 = diff.derivative(flux, j, wf.backend);
  CompensatedSum res, ref;
  for (std::size_t i = 0; i < n; ++i) {
    if (wf.mask[i]) continue;
    const double a = nu * d2[i].real();
    const double b = d1[i].real();
    res += (a - b) * (a - b);
    ref += a * a;
  }
  return ref.value() > 0.0 ? std::sqrt(res.value() / ref.value()) : 0.0;
}

struct IdentityTolerances {
  double kinetic_rel = 1e-6;
  double first_moment = 1e-8;
  double bilinear = 1e-7;
  double gradient = 1e-6;
  double correlation = 1e-6;
  double osmotic = 1e-6;
  double weak_kinetic_im = 1e-8;
};

//! Every ensemble identity linking weak values, velocity fields and
//! operator expectations, evaluated on one state.
inline IdentityReport check_identities(const WaveFunction& psi,
                                       const WeakFieldSet& wf,
                                       const Differentiator& diff,
                                       const IdentityTolerances& tol = {},
                                       bool exchange_symmetric = true) {
  const std::size_t N = psi.grid.particles();
  IdentityReport rep;
  rep.t = psi.time;
  auto add = [&](std::string name, double residual, double tolerance) {
    rep.checks.push_back({std::move(name), residual, tolerance});
  };
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
  };
  const auto& m = wf.moments;

  std::vector<PairIntegrals> P(N * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t l = 0; l < N; ++l) P[j * N + l] = wf.pair_integrals(j, l);

  double kb = 0.0, qb = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const std::string s = std::to_string(j + 1);
    const auto& pjj = P[j * N + j];
    kb += 0.5 * pjj.vv;
    qb += 0.5 * pjj.uu;
    const double kj = 0.5 * m.pp[pair_index(j, j, N)];
    add("OKE_" + s, rel(kj, 0.5 * (pjj.vv + pjj.uu)), tol.kinetic_rel);
    const cplx kw = wf.weak_kinetic_mean(j);
    add("EVWVp2_" + s, rel(kw.real(), kj), tol.kinetic_rel);
    add("EVWVp2_im_" + s, std::abs(kw.imag()), tol.weak_kinetic_im);
    add("int_u_" + s, std::abs(wf.u_mean(j)), tol.first_moment);
    add("int_v_" + s, rel(m.p_mean[j], wf.v_mean(j)), tol.first_moment);
    const cplx pw = wf.weak_momentum_mean(j);
    add("EVp_" + s, std::abs(pw - cplx{m.p_mean[j], 0.0}), tol.first_moment);
    add("diffcurr_" + s, osmotic_balance_residual(wf, diff, j), tol.osmotic);
  }
  add("KQsum", rel(m.kinetic, kb + qb), tol.kinetic_rel);

  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t l = 0; l < N; ++l) {
      const std::string s = std::to_string(j + 1) + std::to_string(l + 1);
      const auto& pjl = P[j * N + l];
      const auto& plj = P[l * N + j];
      // <d_j u_l> = -2 <u_l u_j>
      add("int_du_" + s, std::abs(pjl.du + 2.0 * pjl.uu), tol.gradient);
      // <d_j v_l> = -<u_l v_j> - <v_l u_j>
      add("int_dv_" + s, std::abs(pjl.dv + plj.uv + plj.vu), tol.gradient);
      const cplx pw = wf.weak_bilinear_mean(j, l);
      add("EVp2_" + s, std::abs(pw - cplx{pjl.vv + pjl.uu, 0.0}) /
                           std::max(1.0, std::abs(pw)),
          tol.bilinear);
      if (j != l && exchange_symmetric)
        add("antisym_uv_" + s, std::abs(plj.uv - plj.vu), tol.gradient);
    }

  if (N >= 2) {
    const auto& p01 = P[0 * N + 1];
    const double vm0 = wf.v_mean(0), vm1 = wf.v_mean(1);
    const double um0 = wf.u_mean(0), um1 = wf.u_mean(1);
    const double cpp = m.pp[pair_index(0, 1, N)] - m.p_mean[0] * m.p_mean[1];
    const double cvv = p01.vv - vm0 * vm1;
    const double cuu = p01.uu - um0 * um1;
    const cplx cw{-p01.du, -p01.dv};
    const double scale = std::max(1.0, std::abs(cpp));
    add("twoC", std::abs(cpp - cvv - cuu) / scale, tol.correlation);
    add("twoCweak_re", std::abs(cw.real() - 2.0 * cuu) / scale, tol.correlation);
    // Im C_weak is <u_1 v_2> + <v_1 u_2>; the plain bound below is the
    // stricter claim that it vanishes, which only real states satisfy.
    const auto& p10 = P[1 * N + 0];
    add("twoCweak_im_terms",
        std::abs(cw.imag() - (p10.uv + p10.vu)) / scale, tol.correlation);
    add("twoCweak_im", std::abs(cw.imag()) / scale, tol.correlation);
  }

  double decomposition = 0.0;
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t i = 0; i < psi.size(); ++i) {
      if (wf.mask[i]) continue;
      decomposition = std::max(
          decomposition, std::abs(wf.p_w[j][i] - cplx{wf.v[j][i], -wf.u[j][i]}));
    }
  add("decomposition", decomposition, 0.0);
  add("masked_probability", wf.masked_probability, 1e-8);
  return rep;
}

//==============================================================================
enum class Channel { equipartition, virial, correlations };

inline const char* to_string(Channel c) {
  switch (c) {
    case Channel::equipartition: return "equipartition";
    case Channel::virial: return "virial";
    case Channel::correlations: return "correlations";
  }
  return "?";
}

struct ThermalizationVerdict {
  std::optional<double> t_eq;
  double window = 20.0;
  double threshold = 0.1;
  double smoothing = 0.0;
  Channel channel = Channel::equipartition;
};

//! Signed indicator per channel; the detector thresholds its magnitude.
//!   equipartition: (<K_B> - <Q_B>) / <K>
//!   virial:        (<K> - <V_H>) / (<K> + <V_H>)
//!   correlations:  (C_vv - C_uu) / |C_pp|
inline double indicator(const DiagnosticsRecord& r, Channel c) {
  switch (c) {
    case Channel::equipartition: return (r.K_B - r.Q_B) / r.K_total;
    case Channel::virial:
      return (r.K_total - r.V_H_mean) / (r.K_total + r.V_H_mean);
    case Channel::correlations:
      return (r.C_vv - r.C_uu) / std::max(std::abs(r.C_pp), 1e-300);
  }
  return 0.0;
}

//! Centered moving average over a time span `width`, truncated at the ends.
inline std::vector<double> moving_average(const std::vector<double>& t,
                                          const std::vector<double>& y,
                                          double width) {
  if (!(width > 0.0)) return y;
  std::vector<double> out(y.size());
  const double h = 0.5 * width;
  std::vector<double> prefix(y.size() + 1, 0.0);
  CompensatedSum acc;
  for (std::size_t k = 0; k < y.size(); ++k) {
    acc += y[k];
    prefix[k + 1] = acc.value();
  }
  // window [lo, hi) holds the samples with |t_k - t_i| <= h
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    while (t[i] - t[lo] > h * (1.0 + 1e-12)) ++lo;
    if (hi < i + 1) hi = i + 1;
    while (hi < y.size() && t[hi] - t[i] <= h * (1.0 + 1e-12)) ++hi;
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

//! Earliest sample time t_i such that every sample in [t_i, t_i + window]
//! has |indicator| <= delta, the window lying fully inside the series.
//! With smoothing > 0 the magnitude |indicator| is first averaged over that
//! span, so isolated spikes are tolerated but an undamped oscillation is not.
inline std::optional<double> threshold_entry(const std::vector<double>& t,
                                             const std::vector<double>& value,
                                             double delta, double window,
                                             double smoothing = 0.0) {
  if (t.empty()) throw std::invalid_argument("detect_t_eq: empty series");
  if (t.size() != value.size())
    throw std::invalid_argument("detect_t_eq: size mismatch");
  std::vector<double> y = value;
  if (smoothing > 0.0) {
    for (auto& v : y) v = std::abs(v);
    y = moving_average(t, y, smoothing);
  }
  const std::size_t n = t.size();
  const double slack = 1e-9 * std::max(1.0, window);
  // next_bad[i]: first index >= i whose magnitude exceeds delta (n if none)
  std::vector<std::size_t> next_bad(n + 1, n);
  for (std::size_t i = n; i-- > 0;)
    next_bad[i] = !(std::abs(y[i]) <= delta) ? i : next_bad[i + 1];
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] + window > t.back() + slack) break;
    const std::size_t b = next_bad[i];
    if (b == n || t[b] > t[i] + window + slack) return t[i];
  }
  return std::nullopt;
}

inline ThermalizationVerdict detect_t_eq(
    const std::vector<DiagnosticsRecord>& series, double delta = 0.1,
    double window = 20.0, Channel channel = Channel::equipartition,
    double smoothing = 0.0) {
  if (series.empty()) throw std::invalid_argument("detect_t_eq: empty series");
  ThermalizationVerdict v;
  v.window = window;
  v.threshold = delta;
  v.smoothing = smoothing;
  v.channel = channel;
  if (!(series.back().t - series.front().t > window)) return v;
  std::vector<double> t, y;
  for (const auto& r : series) {
    t.push_back(r.t);
    y.push_back(indicator(r, channel));
  }
  v.t_eq = threshold_entry(t, y, delta, window, smoothing);
  return v;
}

//==============================================================================
//! max_j,t |d<x_j>/dt - <v_j>|, derivative by centered differences on the
//! samples: the five-point stencil in the interior, three-point next to the
//! ends. Requires a uniform sampling interval.
inline double ehrenfest_check(const std::vector<DiagnosticsRecord>& series) {
  const std::size_t n = series.size();
  if (n < 3)
    throw std::invalid_argument("ehrenfest_check: fewer than 3 samples");
  const double h = series[1].t - series[0].t;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs((series[i].t - series[i - 1].t) - h) > 1e-9 * std::abs(h))
      throw std::invalid_argument("ehrenfest_check: non-uniform sampling");
  double worst = 0.0;
  const std::size_t N = series[0].x_mean.size();
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t i = 1; i + 1 < n; ++i) {
      auto x = [&](std::size_t k) { return series[k].x_mean[j]; };
      double d;
      if (i >= 2 && i + 2 < n)
        d = (-x(i + 2) + 8.0 * x(i + 1) - 8.0 * x(i - 1) + x(i - 2)) /
            (12.0 * h);
      else
        d = (x(i + 1) - x(i - 1)) / (2.0 * h);
      worst = std::max(worst, std::abs(d - series[i].v_mean[j]));
    }
  return worst;
}

//! Lagged autocorrelation r(lag), lag = 0 .. n/2: the Pearson coefficient
//! between y[0, n - lag) and y[lag, n), each with its own mean.
inline std::vector<double> autocorrelation(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> r(n / 2 + 1, 0.0);
  if (n == 0) return r;
  r[0] = 1.0;
  for (std::size_t lag = 1; lag < r.size(); ++lag) {
    const std::size_t m = n - lag;
    CompensatedSum sa, sb;
    for (std::size_t i = 0; i < m; ++i) {
      sa += y[i];
      sb += y[i + lag];
    }
    const double ma = sa.value() / static_cast<double>(m);
    const double mb = sb.value() / static_cast<double>(m);
    CompensatedSum ab, aa, bb;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = y[i] - ma, b = y[i + lag] - mb;
      ab += a * b;
      aa += a * a;
      bb += b * b;
    }
    const double den = std::sqrt(aa.value() * bb.value());
    r[lag] = den > 0.0 ? ab.value() / den : 0.0;
  }
  return r;
}

//! Period from the first autocorrelation maximum after the first zero
//! crossing, refined by a parabola through the three samples around it.
inline std::optional<double> dominant_period(const std::vector<double>& y,
                                             double interval) {
  if (y.size() < 8) return std::nullopt;
  const auto r = autocorrelation(y);
  std::size_t k = 1;
  while (k < r.size() && r[k] > 0.0) ++k;
  for (++k; k + 1 < r.size(); ++k) {
    if (r[k] > 0.0 && r[k] >= r[k - 1] && r[k] > r[k + 1]) {
      const double a = r[k - 1], b = r[k], c = r[k + 1];
      const double den = a - 2.0 * b + c;
      const double off = den != 0.0 ? 0.5 * (a - c) / den : 0.0;
      return (static_cast<double>(k) + off) * interval;
    }
  }
  return std::nullopt;
}

//! Times of strict local maxima of a sampled series, parabola-refined.
inline std::vector<double> peak_times(const std::vector<double>& t,
                                      const std::vector<double>& y) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (y[i] > y[i - 1] && y[i] >= y[i + 1]) {
      const double a = y[i - 1], b = y[i], c = y[i + 1];
      const double den = a - 2.0 * b + c;
      const double off = den != 0.0 ? 0.5 * (a - c) / den : 0.0;
      out.push_back(t[i] + off * (t[i + 1] - t[i]));
    }
  }
  return out;
}

}  // namespace qtherm
