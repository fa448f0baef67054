#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qtherm/lattice.hpp"
#include "qtherm/model.hpp"
#include "qtherm/weakfields.hpp"

namespace qtherm {

//! Centre-of-mass / relative split for two particles,
//! x_c = (x_1 + x_2)/2 (mass 2), x_r = x_1 - x_2 (reduced mass 1/2):
//!   H_c = -1/4 d^2/dx_c^2 + w^2 x_c^2,  H_r = -d^2/dx_r^2 + w^2 x_r^2 / 4 + V_I.
struct ComRecord {
  double t = 0.0;
  double K_c = 0.0, V_H_c = 0.0, E_c = 0.0;
  double K_r = 0.0, V_H_r = 0.0, V_I_r = 0.0, E_r = 0.0;
  double K_B_c = 0.0, Q_B_c = 0.0;
  double K_B_r = 0.0, Q_B_r = 0.0;
};

inline ComRecord com_sample(const WaveFunction& psi, const PotentialField& V,
                            const WeakFieldSet& wf) {
  if (psi.grid.particles() != 2)
    throw std::invalid_argument("com_sample: needs exactly two particles");
  if (!(psi.grid == V.grid) || !(psi.grid == wf.grid))
    throw std::invalid_argument("com_sample: arguments live on different grids");
  const auto& m = wf.moments;
  const double p11 = m.pp[pair_index(0, 0, 2)];
  const double p22 = m.pp[pair_index(1, 1, 2)];
  const double p12 = m.pp[pair_index(0, 1, 2)];
  const auto a11 = wf.pair_integrals(0, 0);
  const auto a22 = wf.pair_integrals(1, 1);
  const auto a12 = wf.pair_integrals(0, 1);

  const double w2 = V.omega * V.omega;
  CompensatedSum xc2, xr2;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double x1 = psi.grid.coordinate(i, 0);
    const double x2 = psi.grid.coordinate(i, 1);
    const double rho = std::norm(psi.amplitudes[i]);
    const double xc = 0.5 * (x1 + x2);
    const double xr = x1 - x2;
    xc2 += xc * xc * rho;
    xr2 += xr * xr * rho;
  }
  const double cell = psi.grid.cell_volume();

  ComRecord r;
  r.t = psi.time;
  r.K_c = 0.25 * (p11 + p22 + 2.0 * p12);
  r.K_r = 0.25 * (p11 + p22 - 2.0 * p12);
  r.V_H_c = w2 * xc2.value() * cell;
  r.V_H_r = 0.25 * w2 * xr2.value() * cell;
  r.V_I_r = expectation(V.interaction, psi);
  r.E_c = r.K_c + r.V_H_c;
  r.E_r = r.K_r + r.V_H_r + r.V_I_r;
  r.K_B_c = 0.25 * (a11.vv + a22.vv + 2.0 * a12.vv);
  r.K_B_r = 0.25 * (a11.vv + a22.vv - 2.0 * a12.vv);
  r.Q_B_c = 0.25 * (a11.uu + a22.uu + 2.0 * a12.uu);
  r.Q_B_r = 0.25 * (a11.uu + a22.uu - 2.0 * a12.uu);
  return r;
}

//==============================================================================
struct SeparabilityDrift {
  //! E_c(t) - E_c(t_0) and E_r(t) - E_r(t_0) for every record
  std::vector<double> com_profile, rel_profile;
  double com_overall = 0.0;  //!< max |E_c(t) - E_c(t')| over the run
  double rel_overall = 0.0;
  std::optional<double> com_pre, com_post;  //!< split at t_eq when given
  std::optional<double> rel_pre, rel_post;
};

namespace detail {
inline double spread(const std::vector<double>& v, std::size_t lo,
                     std::size_t hi) {
  if (lo >= hi) return 0.0;
  const auto [mn, mx] = std::minmax_element(v.begin() + static_cast<long>(lo),
                                            v.begin() + static_cast<long>(hi));
  return *mx - *mn;
}
}  // namespace detail

//! Peak-to-peak drift of E_c and E_r. With t_eq present the series is split
//! into [start, t_eq] and [t_eq, end] and each half is measured separately.
inline SeparabilityDrift com_separability_drift(
    const std::vector<ComRecord>& series,
    std::optional<double> t_eq = std::nullopt) {
  SeparabilityDrift d;
  if (series.empty()) return d;
  std::vector<double> ec, er;
  for (const auto& r : series) {
    ec.push_back(r.E_c);
    er.push_back(r.E_r);
    d.com_profile.push_back(r.E_c - series.front().E_c);
    d.rel_profile.push_back(r.E_r - series.front().E_r);
  }
  d.com_overall = detail::spread(ec, 0, ec.size());
  d.rel_overall = detail::spread(er, 0, er.size());
  if (t_eq) {
    std::size_t k = 0;
    while (k < series.size() && series[k].t < *t_eq) ++k;
    const std::size_t split = std::min(k + 1, series.size());
    d.com_pre = detail::spread(ec, 0, split);
    d.rel_pre = detail::spread(er, 0, split);
    d.com_post = detail::spread(ec, k, ec.size());
    d.rel_post = detail::spread(er, k, er.size());
  }
  return d;
}

//==============================================================================
//! Weak value of the CoM momentum p_1 + p_2 conditioned on x_c. Anti-diagonals
//! i + j = s of the (x_1, x_2) grid have constant x_c = -L + s dx / 2, and
//! along one the relative coordinate steps by 2 dx, so with cell dx^2 = (dx/2)(2dx)
//!   P(x_c) = sum_diag |psi|^2 2dx,  p~_c(x_c) = sum_diag -i psi* (d_1+d_2) psi 2dx / P.
struct ComConditional {
  std::vector<double> x_c;
  ComplexField values;
  RealField marginal;
  std::vector<std::uint8_t> mask;
};

inline ComConditional com_conditional_weak_momentum(const WeakFieldSet& wf,
                                                    double node_threshold = 1e-12) {
  if (wf.particles() != 2)
    throw std::invalid_argument("com_conditional: needs two particles");
  const Grid1D& ax = wf.grid.axis();
  const std::size_t M = ax.points();
  const std::size_t S = 2 * M - 1;
  std::vector<CompensatedSum> P(S), re(S), im(S);
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = 0; b < M; ++b) {
      const std::size_t i = a * M + b;
      const cplx num = cplx{0.0, -1.0} * std::conj(wf.psi[i]) *
                       (wf.d.first[0][i] + wf.d.first[1][i]);
      P[a + b] += wf.density[i];
      re[a + b] += num.real();
      im[a + b] += num.imag();
    }
  const double w = 2.0 * ax.spacing();
  ComConditional c;
  c.x_c.resize(S);
  c.values.assign(S, cplx{0.0, 0.0});
  c.marginal.resize(S);
  c.mask.assign(S, 0);
  double pmax = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    c.x_c[s] = -ax.half_width() + 0.5 * static_cast<double>(s) * ax.spacing();
    c.marginal[s] = P[s].value() * w;
    pmax = std::max(pmax, c.marginal[s]);
  }
  for (std::size_t s = 0; s < S; ++s) {
    if (c.marginal[s] < node_threshold * pmax || c.marginal[s] == 0.0) {
      c.mask[s] = 1;
      continue;
    }
    c.values[s] = cplx{re[s].value(), im[s].value()} * w / c.marginal[s];
  }
  return c;
}

}  // namespace qtherm
