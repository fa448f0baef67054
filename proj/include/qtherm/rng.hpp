#pragma once

#include <cmath>
#include <cstdint>

namespace qtherm {

//! SplitMix64 (Steele, Lea, Flood 2014): a Weyl counter passed through a
//! 64-bit finalizer. Fully specified by the constants below, so disorder
//! fields can be regenerated bit-exactly from a seed in any language.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  //! Uniform on (0, 1]: top 53 bits, shifted by one ulp so log() is safe.
  double uniform() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

//! Standard normals by the basic Box-Muller transform. Each pair of uniforms
//! (u1, u2) yields r cos(theta) then r sin(theta), r = sqrt(-2 ln u1),
//! theta = 2 pi u2. Hand-rolled because std::normal_distribution is
//! implementation-defined.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : gen_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = gen_.uniform();
    const double u2 = gen_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  SplitMix64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qtherm
