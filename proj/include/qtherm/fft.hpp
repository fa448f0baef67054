#pragma once

#include <fftw3.h>

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtherm/lattice.hpp"

namespace qtherm {

//! FFTW planning rigor. `estimate` picks plans by heuristics only and is
//! reproducible run to run; `measure` times candidates, which is faster at
//! execution but may select different (bitwise non-identical) algorithms in
//! different processes unless the same wisdom file is imported first.
enum class FftPlanner { estimate, measure };

inline FftPlanner parse_fft_planner(const std::string& s) {
  if (s == "estimate") return FftPlanner::estimate;
  if (s == "measure") return FftPlanner::measure;
  throw std::invalid_argument("unknown fft planner '" + s +
                              "' (expected estimate|measure)");
}

inline const char* to_string(FftPlanner p) {
  return p == FftPlanner::estimate ? "estimate" : "measure";
}

inline bool import_fft_wisdom(const std::string& path) {
  return fftw_import_wisdom_from_filename(path.c_str()) != 0;
}
inline bool export_fft_wisdom(const std::string& path) {
  return fftw_export_wisdom_to_filename(path.c_str()) != 0;
}

namespace detail {
struct PlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using PlanHandle = std::unique_ptr<fftw_plan_s, PlanDeleter>;
}  // namespace detail

//==============================================================================
//! In-place unnormalized DFTs along each axis of a configuration grid.
//! forward: a_k = sum_m a_m exp(-i 2 pi k m / M); backward has +i and no 1/M.
class FftPlan {
 public:
  FftPlan(const ConfigGrid& grid, FftPlanner planner = FftPlanner::estimate)
      : grid_(grid) {
    const unsigned flags =
        planner == FftPlanner::measure ? FFTW_MEASURE : FFTW_ESTIMATE;
    ComplexField scratch(grid.total_points());
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    const int M = static_cast<int>(grid.axis().points());
    for (std::size_t j = 0; j < grid.particles(); ++j) {
      const int s = static_cast<int>(grid.stride(j));
      const int outer = static_cast<int>(grid.total_points() /
                                         (grid.stride(j) * grid.axis().points()));
      fftw_iodim dim{M, s, s};
      fftw_iodim loops[2] = {{outer, M * s, M * s}, {s, 1, 1}};
      for (int dir : {FFTW_FORWARD, FFTW_BACKWARD}) {
        fftw_plan p =
            fftw_plan_guru_dft(1, &dim, 2, loops, buf, buf, dir, flags);
        if (!p) throw std::runtime_error("FftPlan: FFTW planning failed");
        (dir == FFTW_FORWARD ? forward_ : backward_).emplace_back(p);
      }
    }
  }

  const ConfigGrid& grid() const { return grid_; }

  void forward(ComplexField& a) const {
    for (const auto& p : forward_) run(p.get(), a);
  }
  void backward(ComplexField& a) const {
    for (const auto& p : backward_) run(p.get(), a);
  }
  void forward_axis(ComplexField& a, std::size_t j) const {
    run(forward_.at(j).get(), a);
  }
  void backward_axis(ComplexField& a, std::size_t j) const {
    run(backward_.at(j).get(), a);
  }

 private:
  void run(fftw_plan_s* p, ComplexField& a) const {
    if (a.size() != grid_.total_points())
      throw std::invalid_argument("FftPlan: buffer size mismatch");
    auto* buf = reinterpret_cast<fftw_complex*>(a.data());
    fftw_execute_dft(p, buf, buf);
  }

  ConfigGrid grid_;
  std::vector<detail::PlanHandle> forward_;
  std::vector<detail::PlanHandle> backward_;
};

}  // namespace qtherm
