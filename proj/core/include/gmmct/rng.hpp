#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace gmmct {

/// Counter-based generator built on SplitMix64 (Steele, Lea, Flood 2014).
/// The raw stream, the uniform mapping (53 mantissa bits) and the normal
/// transform (Marsaglia polar, cached spare) are all fixed here, so a given
/// 64-bit seed reproduces the identical value sequence on every platform.
/// Result files record the seed, which makes any run replayable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the polar method; one spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Draw from N(mean, cov) using the Cholesky factor of cov.
  Eigen::VectorXd multivariate_normal(const Eigen::VectorXd& mean,
                                      const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    return mean + llt.matrixL() * z;
  }

  /// Derive an independent child seed; used to give trials their own streams.
  std::uint64_t fork() { return next_u64(); }

  /// Stateless mix of a seed with a stream tag, for named sub-streams.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0x6a09e667f3bcc909ULL + stream * 0x3c6ef372fe94f82bULL));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gmmct
