#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace lmm {

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Combine a base seed with a stream tag into a new seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::uint64_t tag) noexcept {
  return mix64(seed ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

/// Seeded generator for every random draw in the library.
///
/// Wraps mt19937_64 and produces uniforms from the top 53 bits and standard
/// normals by Box-Muller with a fixed evaluation order (cosine branch first,
/// sine branch cached for the next call). Streams are reproducible across
/// runs of the same build; std::normal_distribution is avoided because its
/// algorithm is implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  /// Column-major fill with i.i.d. N(0, stddev^2) entries.
  Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols,
                           double stddev = 1.0) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        out(i, j) = stddev * normal();
    return out;
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n, double stddev = 1.0) {
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i)
      out(i) = stddev * normal();
    return out;
  }

  /// Unit-norm direction drawn uniformly from the sphere.
  Eigen::VectorXd unit_vector(Eigen::Index n) {
    Eigen::VectorXd v = gaussian_vector(n);
    double nrm = v.norm();
    while (nrm == 0.0) {
      v = gaussian_vector(n);
      nrm = v.norm();
    }
    return v / nrm;
  }

private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

} // namespace lmm
