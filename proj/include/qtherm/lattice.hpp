#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtherm {

using cplx = std::complex<double>;

// 64-byte aligned storage so FFTW can use its SIMD codelets on every buffer
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), alignment));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, alignment);
  }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using ComplexField = std::vector<cplx, AlignedAllocator<cplx>>;
using RealField = std::vector<double>;

//! Neumaier compensated accumulator. Reductions built on it are insensitive
//! to summation order far below the tolerances used anywhere in the library.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      carry_ += (sum_ - t) + x;
    else
      carry_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) {
    add(x);
    return *this;
  }
  CompensatedSum& operator+=(const CompensatedSum& other) {
    add(other.sum_);
    add(other.carry_);
    return *this;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

//==============================================================================
//! Uniform periodic grid on [-L, L) with M_g nodes, x_m = -L + m dx.
class Grid1D {
 public:
  Grid1D(std::size_t points, double half_width)
      : points_(points), half_width_(half_width) {
    if (points % 2 != 0)
      throw std::invalid_argument("make_grid: odd point count " +
                                  std::to_string(points));
    if (points < 8)
      throw std::invalid_argument("make_grid: point count " +
                                  std::to_string(points) + " below 8");
    if (!(half_width > 0.0) || !std::isfinite(half_width))
      throw std::invalid_argument("make_grid: half_width must be positive");
    spacing_ = 2.0 * half_width / static_cast<double>(points);
  }

  std::size_t points() const { return points_; }
  double half_width() const { return half_width_; }
  double spacing() const { return spacing_; }
  double node(std::size_t m) const {
    return -half_width_ + static_cast<double>(m) * spacing_;
  }
  RealField nodes() const {
    RealField x(points_);
    for (std::size_t m = 0; m < points_; ++m) x[m] = node(m);
    return x;
  }

  //! Angular wavenumber of FFT bin m (FFTW ordering; bin M/2 is -pi/dx).
  double wavenumber(std::size_t m) const {
    const double dk = M_PI / half_width_;
    const auto s = static_cast<std::ptrdiff_t>(m);
    const auto M = static_cast<std::ptrdiff_t>(points_);
    return dk * static_cast<double>(s < M / 2 ? s : s - M);
  }
  //! Largest resolved |k| (the Nyquist wavenumber).
  double max_wavenumber() const { return M_PI / spacing_; }

  bool operator==(const Grid1D& o) const {
    return points_ == o.points_ && half_width_ == o.half_width_;
  }

 private:
  std::size_t points_;
  double half_width_;
  double spacing_;
};

inline Grid1D make_grid(std::size_t points, double half_width) {
  return Grid1D(points, half_width);
}

//==============================================================================
//! N-fold product of one axis. Row-major: particle 0 varies slowest.
class ConfigGrid {
 public:
  ConfigGrid(Grid1D axis, std::size_t particles)
      : axis_(axis), particles_(particles) {
    if (particles == 0)
      throw std::invalid_argument("ConfigGrid: need at least one particle");
    total_ = 1;
    for (std::size_t j = 0; j < particles; ++j) total_ *= axis_.points();
  }

  const Grid1D& axis() const { return axis_; }
  std::size_t particles() const { return particles_; }
  std::size_t total_points() const { return total_; }
  double cell_volume() const {
    return std::pow(axis_.spacing(), static_cast<double>(particles_));
  }

  //! Distance in the flat array between neighbours along axis j.
  std::size_t stride(std::size_t j) const {
    std::size_t s = 1;
    for (std::size_t q = j + 1; q < particles_; ++q) s *= axis_.points();
    return s;
  }
  //! Node index along axis j of flat index `flat`.
  std::size_t axis_index(std::size_t flat, std::size_t j) const {
    return (flat / stride(j)) % axis_.points();
  }
  double coordinate(std::size_t flat, std::size_t j) const {
    return axis_.node(axis_index(flat, j));
  }

  bool operator==(const ConfigGrid& o) const {
    return axis_ == o.axis_ && particles_ == o.particles_;
  }

 private:
  Grid1D axis_;
  std::size_t particles_;
  std::size_t total_;
};

//==============================================================================
struct WaveFunction {
  ConfigGrid grid;
  ComplexField amplitudes;
  double time = 0.0;

  explicit WaveFunction(ConfigGrid g)
      : grid(g), amplitudes(g.total_points(), cplx{0.0, 0.0}) {}
  WaveFunction(ConfigGrid g, ComplexField a, double t = 0.0)
      : grid(g), amplitudes(std::move(a)), time(t) {
    if (amplitudes.size() != grid.total_points())
      throw std::invalid_argument("WaveFunction: amplitude count mismatch");
  }

  std::size_t size() const { return amplitudes.size(); }
};

inline double norm_sq(const WaveFunction& psi) {
  CompensatedSum s;
  for (const auto& a : psi.amplitudes) s += std::norm(a);
  return s.value() * psi.grid.cell_volume();
}

inline void normalize(WaveFunction& psi) {
  const double n = norm_sq(psi);
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::domain_error("normalize: state has zero or non-finite norm");
  const double f = 1.0 / std::sqrt(n);
  for (auto& a : psi.amplitudes) a *= f;
}

inline bool all_finite(const WaveFunction& psi) {
  for (const auto& a : psi.amplitudes)
    if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) return false;
  return true;
}

//! <f> = sum f |psi|^2 dx^N
inline double expectation(std::span<const double> field,
                          const WaveFunction& psi) {
  if (field.size() != psi.size())
    throw std::invalid_argument("expectation: field has " +
                                std::to_string(field.size()) +
                                " values, state has " +
                                std::to_string(psi.size()));
  CompensatedSum s;
  for (std::size_t i = 0; i < field.size(); ++i)
    s += field[i] * std::norm(psi.amplitudes[i]);
  return s.value() * psi.grid.cell_volume();
}

//! L2 distance sqrt(sum |a-b|^2 dx^N).
inline double l2_distance(const WaveFunction& a, const WaveFunction& b) {
  if (!(a.grid == b.grid))
    throw std::invalid_argument("l2_distance: grid mismatch");
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += std::norm(a.amplitudes[i] - b.amplitudes[i]);
  return std::sqrt(s.value() * a.grid.cell_volume());
}

//! Field whose value at each node is the coordinate x_j.
inline RealField coordinate_field(const ConfigGrid& grid, std::size_t j) {
  RealField f(grid.total_points());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = grid.coordinate(i, j);
  return f;
}

}  // namespace qtherm
