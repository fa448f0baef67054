#pragma once

#include <Eigen/Sparse>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/lattice.hpp"
#include "qtherm/model.hpp"

namespace qtherm {

//! Kinetic discretization of the oracle Hamiltonian. `spectral` matches the
//! propagator's Fourier kinetic operator; `three_point` is the O(dx^2)
//! stencil -1/2 (psi_{m+1} - 2 psi_m + psi_{m-1}) / dx^2 with periodic wrap.
enum class OracleKinetic { spectral, three_point };

inline constexpr std::size_t oracle_max_points = 4096;

//! Dense single-axis kinetic matrix T[m][n] for -1/2 d^2/dx^2.
//! The spectral entries are evaluated as an explicit DFT sum over modes
//! (no FFT library involved) so the oracle is independent of fft.hpp.
inline std::vector<double> kinetic_matrix_1d(const Grid1D& axis,
                                             OracleKinetic kind) {
  const std::size_t M = axis.points();
  std::vector<double> T(M * M, 0.0);
  if (kind == OracleKinetic::three_point) {
    const double c = 0.5 / (axis.spacing() * axis.spacing());
    for (std::size_t m = 0; m < M; ++m) {
      T[m * M + m] = 2.0 * c;
      T[m * M + (m + 1) % M] -= c;
      T[m * M + (m + M - 1) % M] -= c;
    }
    return T;
  }
  // T[m][n] = (1/M) sum_q (k_q^2/2) cos(k_q (x_m - x_n)); the sine parts
  // cancel between +k and -k, and the lone Nyquist mode has zero sine.
  for (std::size_t d = 0; d < M; ++d) {
    double s = 0.0;
    for (std::size_t q = 0; q < M; ++q) {
      const double k = axis.wavenumber(q);
      s += 0.5 * k * k *
           std::cos(2.0 * M_PI * static_cast<double>(q * d % M) /
                    static_cast<double>(M));
    }
    s /= static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m) T[m * M + (m + d) % M] = s;
  }
  return T;
}

//! Sparse H = sum_j T_j + diag(V) on the configuration grid.
inline Eigen::SparseMatrix<cplx> oracle_hamiltonian(const PotentialField& V,
                                                    OracleKinetic kind) {
  const ConfigGrid& g = V.grid;
  const std::size_t M = g.axis().points();
  const std::size_t n = g.total_points();
  const auto T = kinetic_matrix_1d(g.axis(), kind);
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(n * (g.particles() * M + 1));
  for (std::size_t i = 0; i < n; ++i) {
    double diag = V.values[i];
    for (std::size_t j = 0; j < g.particles(); ++j) {
      const std::size_t s = g.stride(j);
      const std::size_t mi = g.axis_index(i, j);
      const std::size_t base = i - mi * s;
      for (std::size_t mn = 0; mn < M; ++mn) {
        const double t = T[mi * M + mn];
        if (mn == mi)
          diag += t;
        else if (t != 0.0)
          trip.emplace_back(static_cast<int>(i), static_cast<int>(base + mn * s),
                            cplx{t, 0.0});
      }
    }
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), cplx{diag, 0.0});
  }
  Eigen::SparseMatrix<cplx> H(static_cast<Eigen::Index>(n),
                              static_cast<Eigen::Index>(n));
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

//! Crank-Nicolson step (1 + i H dt/2) psi' = (1 - i H dt/2) psi, solved by
//! BiCGSTAB to near machine precision. Slow reference for small grids only.
inline WaveFunction oracle_step(const WaveFunction& psi, const PotentialField& V,
                                double dt,
                                OracleKinetic kind = OracleKinetic::spectral,
                                std::size_t steps = 1) {
  if (psi.size() > oracle_max_points)
    throw std::invalid_argument("oracle_step: " + std::to_string(psi.size()) +
                                " points exceed the dense limit of " +
                                std::to_string(oracle_max_points));
  if (!(psi.grid == V.grid))
    throw std::invalid_argument("oracle_step: grid mismatch");
  const auto n = static_cast<Eigen::Index>(psi.size());
  const Eigen::SparseMatrix<cplx> H = oracle_hamiltonian(V, kind);
  Eigen::SparseMatrix<cplx> I(n, n);
  I.setIdentity();
  const cplx half{0.0, 0.5 * dt};
  const Eigen::SparseMatrix<cplx> A = I + half * H;
  const Eigen::SparseMatrix<cplx> B = I - half * H;

  Eigen::BiCGSTAB<Eigen::SparseMatrix<cplx>> solver;
  solver.setTolerance(1e-15);
  solver.setMaxIterations(1000);
  solver.compute(A);

  Eigen::VectorXcd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = psi.amplitudes[static_cast<std::size_t>(i)];
  for (std::size_t s = 0; s < steps; ++s) {
    const Eigen::VectorXcd rhs = B * x;
    Eigen::VectorXcd guess = x;
    x = solver.solveWithGuess(rhs, guess);
    if (solver.info() != Eigen::Success && solver.error() > 1e-12)
      throw std::runtime_error("oracle_step: BiCGSTAB did not converge");
  }
  WaveFunction out(psi.grid);
  for (Eigen::Index i = 0; i < n; ++i)
    out.amplitudes[static_cast<std::size_t>(i)] = x[i];
  out.time = psi.time + static_cast<double>(steps) * dt;
  return out;
}

}  // namespace qtherm
