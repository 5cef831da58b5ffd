#pragma once

#include <cstdint>
#include <random>

#include "diflab/common.hpp"

namespace diflab {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic random stream addressed by (seed, stream index). Streams with
// distinct indices are independent, so concurrent consumers can each own one.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0xda3e39cb94b95bdbULL * (stream + 1));
    std::seed_seq seq{static_cast<std::uint32_t>(detail::splitmix64(s)),
                      static_cast<std::uint32_t>(detail::splitmix64(s)),
                      static_cast<std::uint32_t>(detail::splitmix64(s)),
                      static_cast<std::uint32_t>(detail::splitmix64(s))};
    engine_.seed(seq);
  }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  std::uint64_t integer(std::uint64_t n) {  // uniform on {0,...,n-1}
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  // Inverse-CDF draw over a fixed component order with a single uniform.
  int categorical(const Vector& probs) {
    double u = uniform();
    double acc = 0.0;
    for (Index k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size() - 1);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace diflab
