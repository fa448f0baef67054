#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "qtherm/fft.hpp"
#include "qtherm/lattice.hpp"
#include "qtherm/model.hpp"

namespace qtherm {

enum class Scheme { split_operator_strang, crank_nicolson_oracle };

struct PropagationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Sum over axes of k_j^2 for every Fourier mode of the configuration grid.
inline RealField total_wavenumber_sq(const ConfigGrid& grid) {
  const Grid1D& ax = grid.axis();
  RealField k2(grid.total_points());
  for (std::size_t i = 0; i < k2.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < grid.particles(); ++j) {
      const double k = ax.wavenumber(grid.axis_index(i, j));
      s += k * k;
    }
    k2[i] = s;
  }
  return k2;
}

//==============================================================================
//! Precomputed Strang factors for H = -1/2 sum d^2/dx_j^2 + V:
//!   kinetic_phase[k]   = exp(-i |k|^2 dt / 2)
//!   potential_phase[x] = exp(-i V(x) dt / 2)   (half step)
class PropagatorPlan {
 public:
  PropagatorPlan(const PotentialField& V, double dt,
                 FftPlanner planner = FftPlanner::estimate)
      : grid_(V.grid),
        dt_(dt),
        fft_(std::make_shared<FftPlan>(V.grid, planner)),
        kinetic_phase_(V.grid.total_points()),
        potential_phase_(V.grid.total_points()),
        potential_full_(V.grid.total_points()) {
    if (!(dt != 0.0) || !std::isfinite(dt))
      throw std::invalid_argument("PropagatorPlan: dt must be finite, nonzero");
    const RealField k2 = total_wavenumber_sq(grid_);
    for (std::size_t i = 0; i < k2.size(); ++i)
      kinetic_phase_[i] = std::polar(1.0, -0.5 * k2[i] * dt);
    for (std::size_t i = 0; i < V.values.size(); ++i) {
      if (!std::isfinite(V.values[i]))
        throw std::invalid_argument("PropagatorPlan: non-finite potential");
      potential_phase_[i] = std::polar(1.0, -0.5 * V.values[i] * dt);
      potential_full_[i] = std::polar(1.0, -V.values[i] * dt);
    }
    const double wrap = std::abs(dt) * V.max_abs();
    if (wrap > M_PI)
      warnings_.push_back("dt*max|V| = " + std::to_string(wrap) +
                          " exceeds pi; potential phase wraps per step");
    const double kmax = grid_.axis().max_wavenumber();
    const double kwrap = 0.5 * kmax * kmax * std::abs(dt) *
                         static_cast<double>(grid_.particles());
    if (kwrap > M_PI)
      warnings_.push_back("dt*max K = " + std::to_string(kwrap) +
                          " exceeds pi; kinetic phase wraps per step");
  }

  const ConfigGrid& grid() const { return grid_; }
  double dt() const { return dt_; }
  Scheme scheme() const { return Scheme::split_operator_strang; }
  const ComplexField& kinetic_phase() const { return kinetic_phase_; }
  const ComplexField& potential_phase() const { return potential_phase_; }
  const FftPlan& fft() const { return *fft_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  //! Plan for backward evolution: dt -> -dt, every factor conjugated.
  PropagatorPlan reversed() const {
    PropagatorPlan r(*this);
    r.dt_ = -dt_;
    for (auto& c : r.kinetic_phase_) c = std::conj(c);
    for (auto& c : r.potential_phase_) c = std::conj(c);
    for (auto& c : r.potential_full_) c = std::conj(c);
    return r;
  }

  //! Advance `steps` Strang steps in place. Interior potential half-kicks
  //! are fused into one full kick.
  void advance(WaveFunction& psi, std::uint64_t steps) const {
    if (steps == 0) return;
    if (!(psi.grid == grid_))
      throw std::invalid_argument("propagator: grid mismatch");
    auto& a = psi.amplitudes;
    const double scale = 1.0 / static_cast<double>(grid_.total_points());
    multiply(a, potential_phase_);
    for (std::uint64_t n = 0; n < steps; ++n) {
      fft_->forward(a);
      for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = mul(a[i], kinetic_phase_[i]) * scale;
      fft_->backward(a);
      multiply(a, n + 1 == steps ? potential_phase_ : potential_full_);
    }
  }

 private:
  // plain product; operator* goes through __muldc3 without -ffast-math
  static std::complex<double> mul(std::complex<double> a, std::complex<double> b) {
    return {a.real() * b.real() - a.imag() * b.imag(),
            a.real() * b.imag() + a.imag() * b.real()};
  }
  static void multiply(ComplexField& a, const ComplexField& f) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = mul(a[i], f[i]);
  }

  ConfigGrid grid_;
  double dt_;
  std::shared_ptr<const FftPlan> fft_;
  ComplexField kinetic_phase_;
  ComplexField potential_phase_;
  ComplexField potential_full_;
  std::vector<std::string> warnings_;
};

//==============================================================================
inline void check_finite(const WaveFunction& psi) {
  if (!all_finite(psi))
    throw PropagationError("non-finite amplitude at t = " +
                           std::to_string(psi.time));
}

//! One Strang step; returns the advanced state.
inline WaveFunction step(WaveFunction psi, const PropagatorPlan& plan) {
  plan.advance(psi, 1);
  psi.time += plan.dt();
  check_finite(psi);
  return psi;
}

//! Steps from psi0.time to t_final (rounded to whole steps), calling
//! sink(psi) at the start, every `sample_every` steps, and at the end.
//! A sink returning bool can stop the run early by returning false.
template <class Sink>
WaveFunction evolve(WaveFunction psi, const PropagatorPlan& plan,
                    double t_final, std::uint64_t sample_every, Sink&& sink) {
  if (sample_every == 0)
    throw std::invalid_argument("evolve: sample_every must be >= 1");
  const double span = (t_final - psi.time) / plan.dt();
  if (span < -0.5)
    throw std::invalid_argument("evolve: t_final lies behind the state");
  const auto total = static_cast<std::uint64_t>(std::llround(std::max(span, 0.0)));
  const double t0 = psi.time;

  auto emit = [&]() -> bool {
    if constexpr (std::is_same_v<std::invoke_result_t<Sink&, const WaveFunction&>,
                                 bool>)
      return sink(static_cast<const WaveFunction&>(psi));
    else {
      sink(static_cast<const WaveFunction&>(psi));
      return true;
    }
  };

  if (!emit()) return psi;
  std::uint64_t done = 0;
  while (done < total) {
    const std::uint64_t chunk = std::min(sample_every, total - done);
    plan.advance(psi, chunk);
    done += chunk;
    psi.time = t0 + static_cast<double>(done) * plan.dt();
    check_finite(psi);
    if (!emit()) break;
  }
  return psi;
}

}  // namespace qtherm
