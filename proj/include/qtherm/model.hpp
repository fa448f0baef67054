#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/lattice.hpp"
#include "qtherm/rng.hpp"

namespace qtherm {

struct TrapParams {
  double omega = 1.0;
  double alpha = 1.0;
  double gamma_d = 20.0;
  double sigma_d = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(omega > 0.0)) throw std::invalid_argument("omega must be > 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
    if (!(gamma_d >= 0.0)) throw std::invalid_argument("gamma_d must be >= 0");
    if (!(sigma_d > 0.0)) throw std::invalid_argument("sigma_d must be > 0");
  }
};

struct GaussianSpec {
  double x0 = 0.0;
  double p0 = 0.0;
  double sigma = 1.0;

  //! Width of the harmonic ground state, 1/sqrt(omega).
  static double ground_width(double omega) { return 1.0 / std::sqrt(omega); }

  bool operator==(const GaussianSpec&) const = default;
};

enum class PotentialComponent { harmonic, interaction, disorder };

//! Total potential on the configuration grid plus its additive parts.
struct PotentialField {
  ConfigGrid grid;
  double omega = 1.0;
  RealField values;
  RealField harmonic;
  RealField interaction;
  RealField disorder;

  explicit PotentialField(const ConfigGrid& g, double w = 1.0)
      : grid(g),
        omega(w),
        values(g.total_points(), 0.0),
        harmonic(g.total_points(), 0.0),
        interaction(g.total_points(), 0.0),
        disorder(g.total_points(), 0.0) {}

  const RealField& component(PotentialComponent c) const {
    switch (c) {
      case PotentialComponent::harmonic: return harmonic;
      case PotentialComponent::interaction: return interaction;
      case PotentialComponent::disorder: return disorder;
    }
    throw std::logic_error("unreachable");
  }

  void recompute_total() {
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = harmonic[i] + interaction[i] + disorder[i];
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  //! Sum of two fields on the same grid, componentwise.
  PotentialField& operator+=(const PotentialField& o) {
    if (!(grid == o.grid))
      throw std::invalid_argument("PotentialField: grid mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      harmonic[i] += o.harmonic[i];
      interaction[i] += o.interaction[i];
      disorder[i] += o.disorder[i];
    }
    recompute_total();
    return *this;
  }
};

inline PotentialField build_harmonic(const TrapParams& p,
                                     const ConfigGrid& grid) {
  p.validate();
  PotentialField V(grid, p.omega);
  const double c = 0.5 * p.omega * p.omega;
  for (std::size_t i = 0; i < grid.total_points(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < grid.particles(); ++j) {
      const double x = grid.coordinate(i, j);
      s += x * x;
    }
    V.harmonic[i] = c * s;
  }
  V.recompute_total();
  return V;
}

//! Soft Coulomb repulsion, summed once per unordered pair.
inline PotentialField build_interaction(const TrapParams& p,
                                        const ConfigGrid& grid) {
  p.validate();
  PotentialField V(grid, p.omega);
  const std::size_t N = grid.particles();
  const double a2 = p.alpha * p.alpha;
  for (std::size_t i = 0; i < grid.total_points(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t l = j + 1; l < N; ++l) {
        const double d = grid.coordinate(i, j) - grid.coordinate(i, l);
        s += 1.0 / std::sqrt(d * d + a2);
      }
    V.interaction[i] = s;
  }
  V.recompute_total();
  return V;
}

//! Single-axis speckle profile D(x), scaled so that sum D^2 dx = 1.
//! Amplitudes b_l are drawn in node order from NormalStream(seed).
inline RealField disorder_profile(const TrapParams& p, const Grid1D& axis) {
  p.validate();
  const std::size_t M = axis.points();
  NormalStream normals(p.seed);
  std::vector<double> b(M);
  for (auto& bl : b) bl = normals.next();

  const double inv_s2 = 4.0 / (p.sigma_d * p.sigma_d);
  // bumps further than ~13 sigma_D contribute below double precision
  const double cutoff = 6.5 * p.sigma_d;
  const auto reach = static_cast<std::ptrdiff_t>(
      std::min<double>(static_cast<double>(M), std::ceil(cutoff / axis.spacing())));
  RealField D(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    CompensatedSum s;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(m) - reach);
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(M) - 1,
                                             static_cast<std::ptrdiff_t>(m) + reach);
    for (std::ptrdiff_t l = lo; l <= hi; ++l) {
      const double d = axis.node(m) - axis.node(static_cast<std::size_t>(l));
      s += b[static_cast<std::size_t>(l)] * std::exp(-inv_s2 * d * d);
    }
    D[m] = s.value();
  }
  CompensatedSum sq;
  for (double d : D) sq += d * d;
  const double integral = sq.value() * axis.spacing();
  if (!(integral > 0.0) || !std::isfinite(integral))
    throw std::domain_error("build_disorder: degenerate disorder profile");
  const double f = 1.0 / std::sqrt(integral);
  for (auto& d : D) d *= f;
  return D;
}

inline PotentialField build_disorder(const TrapParams& p,
                                     const ConfigGrid& grid) {
  p.validate();
  PotentialField V(grid, p.omega);
  if (p.gamma_d == 0.0) return V;
  const RealField D = disorder_profile(p, grid.axis());
  for (std::size_t i = 0; i < grid.total_points(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < grid.particles(); ++j)
      s += D[grid.axis_index(i, j)];
    V.disorder[i] = p.gamma_d * s;
  }
  V.recompute_total();
  return V;
}

//! V_H + V_I + V_D, with the disorder left out when `with_disorder` is false.
inline PotentialField build_potential(const TrapParams& p,
                                      const ConfigGrid& grid,
                                      bool with_disorder) {
  PotentialField V = build_harmonic(p, grid);
  V += build_interaction(p, grid);
  if (with_disorder) V += build_disorder(p, grid);
  return V;
}

//==============================================================================
//! Normalized Gaussian orbital exp(-(x-x0)^2/(2 s^2)) exp(i p0 (x-x0)).
inline ComplexField gaussian_orbital(const GaussianSpec& g,
                                     const Grid1D& axis) {
  if (!(g.sigma > 0.0))
    throw std::invalid_argument("GaussianSpec: sigma must be > 0");
  ComplexField phi(axis.points());
  CompensatedSum n;
  for (std::size_t m = 0; m < axis.points(); ++m) {
    const double d = axis.node(m) - g.x0;
    const double amp = std::exp(-d * d / (2.0 * g.sigma * g.sigma));
    phi[m] = amp * cplx{std::cos(g.p0 * d), std::sin(g.p0 * d)};
    n += amp * amp;
  }
  const double norm = n.value() * axis.spacing();
  if (!(norm > 0.0))
    throw std::domain_error("gaussian_orbital: orbital vanishes on the grid");
  const double f = 1.0 / std::sqrt(norm);
  for (auto& a : phi) a *= f;
  return phi;
}

//! Slater determinant of Gaussian orbitals: sum over permutations P of
//! sign(P) prod_j phi_{P(j)}(x_j), then normalized.
inline WaveFunction build_initial_state(const std::vector<GaussianSpec>& specs,
                                        const ConfigGrid& grid) {
  const std::size_t N = grid.particles();
  if (specs.size() != N)
    throw std::invalid_argument("build_initial_state: " +
                                std::to_string(specs.size()) +
                                " orbitals for " + std::to_string(N) +
                                " particles");
  std::vector<ComplexField> orb;
  orb.reserve(N);
  for (const auto& s : specs) orb.push_back(gaussian_orbital(s, grid.axis()));

  WaveFunction psi(grid);
  std::vector<std::size_t> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> idx(N);
  do {
    std::size_t inversions = 0;
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = a + 1; b < N; ++b)
        if (perm[a] > perm[b]) ++inversions;
    const double sign = inversions % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < grid.total_points(); ++i) {
      cplx term{sign, 0.0};
      for (std::size_t j = 0; j < N; ++j)
        term *= orb[perm[j]][grid.axis_index(i, j)];
      psi.amplitudes[i] += term;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  if (norm_sq(psi) < 1e-8)
    throw std::domain_error("build_initial_state: Pauli-annihilated state");
  normalize(psi);
  return psi;
}

}  // namespace qtherm
