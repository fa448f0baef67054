#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/fft.hpp"
#include "qtherm/lattice.hpp"

namespace qtherm {

enum class DerivativeBackend { spectral, central_difference };

inline DerivativeBackend parse_derivative_backend(const std::string& s) {
  if (s == "spectral") return DerivativeBackend::spectral;
  if (s == "central_difference" || s == "fd")
    return DerivativeBackend::central_difference;
  throw std::invalid_argument("unknown derivative backend '" + s +
                              "' (expected spectral|central_difference)");
}

inline const char* to_string(DerivativeBackend b) {
  return b == DerivativeBackend::spectral ? "spectral" : "central_difference";
}

struct WeakFieldOptions {
  DerivativeBackend backend = DerivativeBackend::spectral;
  //! Nodes with |psi|^2 < node_threshold * max|psi|^2 are masked.
  double node_threshold = 1e-12;
};

//! Flat position of the unordered pair (j <= l) in packed storage.
inline std::size_t pair_index(std::size_t j, std::size_t l, std::size_t N) {
  if (j > l) std::swap(j, l);
  return j * N - j * (j - 1) / 2 + (l - j);
}
inline std::size_t pair_count(std::size_t N) { return N * (N + 1) / 2; }

//! Momentum-space moments of psi, from |psi~(k)|^2.
struct SpectralMoments {
  std::vector<double> p_mean;  //!< <p_j>
  std::vector<double> pp;      //!< <p_j p_l>, packed by pair_index
  double kinetic = 0.0;        //!< <K> = 1/2 sum_j <p_j^2>, full k^2
  double norm = 0.0;
};

//! First and second derivatives of one wavefunction.
struct PsiDerivatives {
  std::vector<ComplexField> first;   //!< d_j psi
  std::vector<ComplexField> second;  //!< d_j d_l psi, packed by pair_index
};

//==============================================================================
//! Owns the FFT plans and wavenumber tables for one configuration grid.
//! Spectral first derivatives multiply by i k with the Nyquist bin zeroed,
//! so real fields stay real and d_j d_l is the product of two first
//! derivatives (the adjoint of d_j is exactly -d_j on the grid).
class Differentiator {
 public:
  explicit Differentiator(const ConfigGrid& grid,
                          FftPlanner planner = FftPlanner::estimate)
      : grid_(grid), fft_(std::make_shared<FftPlan>(grid, planner)) {
    const Grid1D& ax = grid.axis();
    const std::size_t M = ax.points();
    ik_.resize(M);
    for (std::size_t m = 0; m < M; ++m)
      ik_[m] = m == M / 2 ? 0.0 : ax.wavenumber(m);
  }

  const ConfigGrid& grid() const { return grid_; }
  const FftPlan& fft() const { return *fft_; }

  //! d_j f
  ComplexField derivative(const ComplexField& f, std::size_t j,
                          DerivativeBackend b) const {
    ComplexField out(f);
    if (b == DerivativeBackend::spectral) {
      fft_->forward_axis(out, j);
      scale_axis(out, j, 1);
      fft_->backward_axis(out, j);
    } else {
      central(f, out, j);
    }
    return out;
  }

  //! d_j d_l f
  ComplexField second_derivative(const ComplexField& f, std::size_t j,
                                 std::size_t l, DerivativeBackend b) const {
    if (j != l) return derivative(derivative(f, j, b), l, b);
    ComplexField out(f);
    if (b == DerivativeBackend::spectral) {
      fft_->forward_axis(out, j);
      scale_axis(out, j, 2);
      fft_->backward_axis(out, j);
    } else {
      central_second(f, out, j);
    }
    return out;
  }

  PsiDerivatives psi_derivatives(const WaveFunction& psi,
                                 DerivativeBackend b) const {
    check(psi);
    const std::size_t N = grid_.particles();
    PsiDerivatives d;
    d.first.resize(N);
    d.second.resize(pair_count(N));
    for (std::size_t j = 0; j < N; ++j) {
      if (b == DerivativeBackend::spectral) {
        ComplexField t(psi.amplitudes);
        fft_->forward_axis(t, j);
        ComplexField t2(t);
        scale_axis(t, j, 1);
        scale_axis(t2, j, 2);
        fft_->backward_axis(t, j);
        fft_->backward_axis(t2, j);
        d.first[j] = std::move(t);
        d.second[pair_index(j, j, N)] = std::move(t2);
      } else {
        d.first[j] = derivative(psi.amplitudes, j, b);
        d.second[pair_index(j, j, N)] = second_derivative(psi.amplitudes, j, j, b);
      }
    }
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t l = j + 1; l < N; ++l)
        d.second[pair_index(j, l, N)] = derivative(d.first[j], l, b);
    return d;
  }

  SpectralMoments spectral_moments(const WaveFunction& psi) const {
    check(psi);
    const std::size_t N = grid_.particles();
    ComplexField t(psi.amplitudes);
    fft_->forward(t);
    std::vector<CompensatedSum> p(N), pp(pair_count(N));
    CompensatedSum k2, n;
    std::vector<double> kf(N), kd(N);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double w = std::norm(t[i]);
      if (w == 0.0) continue;
      n += w;
      double ksq = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t m = grid_.axis_index(i, j);
        kf[j] = grid_.axis().wavenumber(m);
        kd[j] = ik_[m];
        ksq += kf[j] * kf[j];
        p[j] += kd[j] * w;
      }
      k2 += ksq * w;
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t l = j; l < N; ++l)
          pp[pair_index(j, l, N)] += (j == l ? kf[j] * kf[j] : kd[j] * kd[l]) * w;
    }
    const double f = grid_.cell_volume() / static_cast<double>(t.size());
    SpectralMoments s;
    s.norm = n.value() * f;
    s.kinetic = 0.5 * k2.value() * f;
    for (std::size_t j = 0; j < N; ++j) s.p_mean.push_back(p[j].value() * f);
    for (auto& c : pp) s.pp.push_back(c.value() * f);
    return s;
  }

 private:
  void check(const WaveFunction& psi) const {
    if (!(psi.grid == grid_))
      throw std::invalid_argument("Differentiator: grid mismatch");
  }

  // multiply axis-j spectrum by (i k)^order / M
  void scale_axis(ComplexField& a, std::size_t j, int order) const {
    const std::size_t M = grid_.axis().points();
    const std::size_t s = grid_.stride(j);
    const double inv = 1.0 / static_cast<double>(M);
    std::vector<cplx> mult(M);
    for (std::size_t m = 0; m < M; ++m)
      mult[m] = order == 1 ? cplx{0.0, ik_[m] * inv}
                           : cplx{-ik_[m] * ik_[m] * inv, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= mult[(i / s) % M];
  }

  void central(const ComplexField& f, ComplexField& out, std::size_t j) const {
    const std::size_t M = grid_.axis().points();
    const std::size_t s = grid_.stride(j);
    const double c = 0.5 / grid_.axis().spacing();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::size_t m = (i / s) % M;
      const std::size_t up = m + 1 == M ? i - m * s : i + s;
      const std::size_t dn = m == 0 ? i + (M - 1) * s : i - s;
      out[i] = (f[up] - f[dn]) * c;
    }
  }

  void central_second(const ComplexField& f, ComplexField& out,
                      std::size_t j) const {
    const std::size_t M = grid_.axis().points();
    const std::size_t s = grid_.stride(j);
    const double dx = grid_.axis().spacing();
    const double c = 1.0 / (dx * dx);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::size_t m = (i / s) % M;
      const std::size_t up = m + 1 == M ? i - m * s : i + s;
      const std::size_t dn = m == 0 ? i + (M - 1) * s : i - s;
      out[i] = (f[up] - 2.0 * f[i] + f[dn]) * c;
    }
  }

  ConfigGrid grid_;
  std::shared_ptr<const FftPlan> fft_;
  std::vector<double> ik_;
};

//==============================================================================
//! Density-weighted bilinears of the velocity fields for one pair (j, l),
//! each already integrated against |psi|^2 dx^N.
struct PairIntegrals {
  double vv = 0.0;  //!< <v_j v_l>
  double uu = 0.0;  //!< <u_j u_l>
  double uv = 0.0;  //!< <u_j v_l>
  double vu = 0.0;  //!< <v_j u_l>
  double du = 0.0;  //!< <d_j u_l>
  double dv = 0.0;  //!< <d_j v_l>
};

//! Weak values and velocity fields of one state.
//!
//! Masked nodes hold 0 in every field. Quadratures do not simply drop them:
//! at an exchange node psi ~ c (x_1 - x_2) the weighted integrands
//! |psi|^2 v_j v_l, |psi|^2 u_j u_l, ... have finite limits, which the
//! integral helpers substitute (see pair_integrals).
struct WeakFieldSet {
  explicit WeakFieldSet(const ConfigGrid& g) : grid(g) {}

  ConfigGrid grid;
  DerivativeBackend backend = DerivativeBackend::spectral;
  double epsilon_node = 0.0;        //!< absolute |psi|^2 threshold
  double masked_probability = 0.0;  //!< sum of |psi|^2 dx^N over the mask
  std::size_t masked_count = 0;
  std::vector<std::uint8_t> mask;

  ComplexField psi;
  RealField density;
  PsiDerivatives d;
  std::vector<RealField> v;          //!< current velocity Im(d_j psi / psi)
  std::vector<RealField> u;          //!< osmotic velocity Re(d_j psi / psi)
  std::vector<ComplexField> p_w;     //!< v_j - i u_j
  std::vector<ComplexField> k_w;     //!< -1/2 d_j^2 psi / psi
  SpectralMoments moments;

  std::size_t particles() const { return grid.particles(); }
  double cell() const { return grid.cell_volume(); }

  //! <v_j>, the spectral <p_j> in disguise
  double v_mean(std::size_t j) const {
    CompensatedSum s;
    for (std::size_t i = 0; i < psi.size(); ++i)
      s += std::imag(std::conj(psi[i]) * d.first[j][i]);
    return s.value() * cell();
  }
  //! <u_j> = 1/2 int d_j |psi|^2
  double u_mean(std::size_t j) const {
    CompensatedSum s;
    for (std::size_t i = 0; i < psi.size(); ++i)
      s += std::real(std::conj(psi[i]) * d.first[j][i]);
    return s.value() * cell();
  }
  //! <p_w,j> = -i sum psi* d_j psi dx^N
  cplx weak_momentum_mean(std::size_t j) const {
    const auto [re, im] = complex_sum([&](std::size_t i) {
      return cplx{0.0, -1.0} * std::conj(psi[i]) * d.first[j][i];
    });
    return {re, im};
  }
  //! <p_w,jl> = -sum psi* d_j d_l psi dx^N
  cplx weak_bilinear_mean(std::size_t j, std::size_t l) const {
    const auto& s2 = d.second[pair_index(j, l, particles())];
    const auto [re, im] =
        complex_sum([&](std::size_t i) { return -std::conj(psi[i]) * s2[i]; });
    return {re, im};
  }
  //! <K_w,j>
  cplx weak_kinetic_mean(std::size_t j) const {
    return 0.5 * weak_bilinear_mean(j, j);
  }

  PairIntegrals pair_integrals(std::size_t j, std::size_t l) const {
    const auto& dj = d.first[j];
    const auto& dl = d.first[l];
    const auto& s2 = d.second[pair_index(j, l, particles())];
    CompensatedSum vv, uu, uv, vu, du, dv;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      const cplx c = std::conj(psi[i]);
      const cplx h = c * s2[i];
      if (mask[i]) {
        const double g = std::real(std::conj(dj[i]) * dl[i]);
        uu += g;
        du += h.real() - g;
        dv += h.imag();
        continue;
      }
      const cplx aj = c * dj[i];
      const cplx al = c * dl[i];
      const double inv = 1.0 / density[i];
      vv += aj.imag() * al.imag() * inv;
      uu += aj.real() * al.real() * inv;
      uv += aj.real() * al.imag() * inv;
      vu += aj.imag() * al.real() * inv;
      const cplx q = aj * al * inv;
      du += h.real() - q.real();
      dv += h.imag() - q.imag();
    }
    const double f = cell();
    return {vv.value() * f, uu.value() * f, uv.value() * f,
            vu.value() * f, du.value() * f, dv.value() * f};
  }

  //! weak_bilinear field -d_j d_l psi / psi (0 on the mask)
  ComplexField bilinear_field(std::size_t j, std::size_t l) const {
    const auto& s2 = d.second[pair_index(j, l, particles())];
    ComplexField out(psi.size(), cplx{0.0, 0.0});
    for (std::size_t i = 0; i < psi.size(); ++i)
      if (!mask[i]) out[i] = -s2[i] / psi[i];
    return out;
  }

 private:
  template <class F>
  std::pair<double, double> complex_sum(F&& f) const {
    CompensatedSum re, im;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      const cplx z = f(i);
      re += z.real();
      im += z.imag();
    }
    return {re.value() * cell(), im.value() * cell()};
  }
};

inline WeakFieldSet compute_weak_fields(const WaveFunction& wf,
                                        const Differentiator& diff,
                                        const WeakFieldOptions& opt = {}) {
  if (!(wf.grid == diff.grid()))
    throw std::invalid_argument("compute_weak_fields: grid mismatch");
  if (!(opt.node_threshold >= 0.0))
    throw std::invalid_argument("node_threshold must be >= 0");
  const std::size_t N = wf.grid.particles();
  const std::size_t n = wf.size();
  WeakFieldSet s(wf.grid);
  s.backend = opt.backend;
  s.psi = wf.amplitudes;
  s.density.resize(n);
  double rmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.density[i] = std::norm(s.psi[i]);
    rmax = std::max(rmax, s.density[i]);
  }
  s.epsilon_node = opt.node_threshold * rmax;
  s.mask.assign(n, 0);
  CompensatedSum masked;
  for (std::size_t i = 0; i < n; ++i)
    if (s.density[i] < s.epsilon_node || s.density[i] == 0.0) {
      s.mask[i] = 1;
      masked += s.density[i];
      ++s.masked_count;
    }
  s.masked_probability = masked.value() * s.cell();

  s.d = diff.psi_derivatives(wf, opt.backend);
  s.moments = diff.spectral_moments(wf);
  s.v.assign(N, RealField(n, 0.0));
  s.u.assign(N, RealField(n, 0.0));
  s.p_w.assign(N, ComplexField(n, cplx{0.0, 0.0}));
  s.k_w.assign(N, ComplexField(n, cplx{0.0, 0.0}));
  for (std::size_t j = 0; j < N; ++j) {
    const auto& dj = s.d.first[j];
    const auto& djj = s.d.second[pair_index(j, j, N)];
    for (std::size_t i = 0; i < n; ++i) {
      if (s.mask[i]) continue;
      const cplx g = dj[i] / s.psi[i];
      s.u[j][i] = g.real();
      s.v[j][i] = g.imag();
      s.p_w[j][i] = cplx{g.imag(), -g.real()};
      s.k_w[j][i] = -0.5 * djj[i] / s.psi[i];
    }
  }
  return s;
}

inline WeakFieldSet compute_weak_fields(const WaveFunction& wf,
                                        const WeakFieldOptions& opt = {}) {
  return compute_weak_fields(wf, Differentiator(wf.grid), opt);
}

//==============================================================================
//! (d_j psi)/psi with its mask; v_j = Im, u_j = Re.
struct LogGradient {
  ComplexField field;
  std::vector<std::uint8_t> mask;
};

inline LogGradient log_gradient(const WaveFunction& psi, std::size_t j,
                                const WeakFieldOptions& opt = {}) {
  if (j >= psi.grid.particles())
    throw std::invalid_argument("log_gradient: particle index out of range");
  const WeakFieldSet s = compute_weak_fields(psi, opt);
  LogGradient g{ComplexField(psi.size(), cplx{0.0, 0.0}), s.mask};
  for (std::size_t i = 0; i < psi.size(); ++i)
    g.field[i] = cplx{s.u[j][i], s.v[j][i]};
  return g;
}

inline ComplexField weak_momentum(const WaveFunction& psi, std::size_t j,
                                  const WeakFieldOptions& opt = {}) {
  if (j >= psi.grid.particles())
    throw std::invalid_argument("weak_momentum: particle index out of range");
  return compute_weak_fields(psi, opt).p_w[j];
}

inline ComplexField weak_bilinear(const WaveFunction& psi, std::size_t j,
                                  std::size_t l,
                                  const WeakFieldOptions& opt = {}) {
  if (j >= psi.grid.particles() || l >= psi.grid.particles())
    throw std::invalid_argument("weak_bilinear: particle index out of range");
  return compute_weak_fields(psi, opt).bilinear_field(j, l);
}

inline ComplexField weak_kinetic(const WaveFunction& psi, std::size_t j,
                                 const WeakFieldOptions& opt = {}) {
  if (j >= psi.grid.particles())
    throw std::invalid_argument("weak_kinetic: particle index out of range");
  return compute_weak_fields(psi, opt).k_w[j];
}

//==============================================================================
//! Weak momentum of particle k averaged over the other coordinates:
//! p~(x_k) = [int p_w,k |psi|^2 dX_k] / P(x_k). The numerator density is
//! -i psi* d_k psi, which needs no division and is finite at nodes.
struct ConditionalWeakMomentum {
  Grid1D axis;
  ComplexField values;             //!< p~_w,k(x_k), 0 where masked
  RealField marginal;              //!< P(x_k)
  std::vector<std::uint8_t> mask;  //!< P < node_threshold * max P

  //! sum_x P(x) p~(x) dx over unmasked x
  cplx mean() const {
    CompensatedSum re, im;
    for (std::size_t m = 0; m < values.size(); ++m) {
      if (mask[m]) continue;
      re += marginal[m] * values[m].real();
      im += marginal[m] * values[m].imag();
    }
    return {re.value() * axis.spacing(), im.value() * axis.spacing()};
  }
};

inline ConditionalWeakMomentum conditional_from_fields(const WeakFieldSet& s,
                                                       std::size_t k,
                                                       double node_threshold) {
  if (k >= s.particles())
    throw std::invalid_argument("conditional_weak_momentum: axis out of range");
  const Grid1D& ax = s.grid.axis();
  const std::size_t M = ax.points();
  const double rest = s.cell() / ax.spacing();
  std::vector<CompensatedSum> P(M), re(M), im(M);
  for (std::size_t i = 0; i < s.psi.size(); ++i) {
    const std::size_t m = s.grid.axis_index(i, k);
    const cplx num = cplx{0.0, -1.0} * std::conj(s.psi[i]) * s.d.first[k][i];
    P[m] += s.density[i];
    re[m] += num.real();
    im[m] += num.imag();
  }
  ConditionalWeakMomentum c{ax, ComplexField(M, cplx{0.0, 0.0}), RealField(M),
                            std::vector<std::uint8_t>(M, 0)};
  double pmax = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    c.marginal[m] = P[m].value() * rest;
    pmax = std::max(pmax, c.marginal[m]);
  }
  for (std::size_t m = 0; m < M; ++m) {
    if (c.marginal[m] < node_threshold * pmax || c.marginal[m] == 0.0) {
      c.mask[m] = 1;
      continue;
    }
    c.values[m] = cplx{re[m].value(), im[m].value()} * rest / c.marginal[m];
  }
  return c;
}

inline ConditionalWeakMomentum conditional_weak_momentum(
    const WaveFunction& psi, std::size_t k, const WeakFieldOptions& opt = {}) {
  return conditional_from_fields(compute_weak_fields(psi, opt), k,
                                 opt.node_threshold);
}

}  // namespace qtherm
