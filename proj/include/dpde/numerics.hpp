// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "dpde/errors.hpp"

namespace dpde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Throws NotPositiveDefinite when a pivot drops to `pivot_tol` or below.
Matrix cholesky(const Eigen::Ref<const Matrix>& a, double pivot_tol = 1e-12);

/// Gauss-Hermite rule for the weight exp(-y^2).
struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

/// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix of
/// the Hermite recurrence, weights sqrt(pi) times the squared first
/// eigenvector components. Nodes are returned ascending and symmetrised.
QuadratureRule gauss_hermite(int n);

/// Mixes a parent seed with an index into an independent child seed
/// (two rounds of splitmix64). Used for per-worker and per-chunk streams.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// Seedable stream backed by std::mt19937_64, whose output sequence is fixed
/// by the standard. The conversions to uniform and normal variates are done
/// here rather than through <random> distributions, which are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi). Requires lo < hi.
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  Rng child(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace dpde
