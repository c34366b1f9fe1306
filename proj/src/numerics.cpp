// SPDX-License-Identifier: Apache-2.0
#include "dpde/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dpde {

Matrix cholesky(const Eigen::Ref<const Matrix>& a, double pivot_tol) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix is not square");
  const Eigen::Index n = a.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12)
        throw InvalidInput("cholesky: matrix is not symmetric");

  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > pivot_tol))
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) + " is " +
                                std::to_string(pivot));
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
  }
  return l;
}

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw InvalidInput("gauss_hermite: n must be >= 1");
  Matrix jacobi = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(0.5 * i);
    jacobi(i, i - 1) = off;
    jacobi(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  const double sqrt_pi = std::sqrt(std::numbers::pi);

  // Eigenvector components of the outer nodes are tiny and only accurate in
  // absolute terms, so polish each node by Newton on the orthonormal
  // recurrence and take weights from the Christoffel sum instead.
  QuadratureRule rule{eig.eigenvalues(), Vector(n)};
  for (int i = 0; i < n; ++i) {
    double x = rule.nodes(i);
    double sum = 0.0;
    for (int it = 0; it < 3; ++it) {
      // p_k orthonormal for e^{-x^2}/sqrt(pi); dp carries their derivatives
      double p0 = 1.0, p1 = 0.0, d0 = 0.0, d1 = 0.0;
      sum = 1.0;
      for (int k = 0; k < n; ++k) {
        const double a = std::sqrt(0.5 * (k + 1));
        const double b = std::sqrt(0.5 * k);
        const double p2 = (x * p0 - b * p1) / a;
        const double d2 = (p0 + x * d0 - b * d1) / a;
        p1 = p0;
        p0 = p2;
        d1 = d0;
        d0 = d2;
        if (k + 1 < n) sum += p0 * p0;
      }
      if (it < 2 && d0 != 0.0) x -= p0 / d0;
    }
    rule.nodes(i) = x;
    rule.weights(i) = sqrt_pi / sum;
  }
  // Symmetrise: the exact rule is symmetric, the eigen-solver only to rounding.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes(j) - rule.nodes(i));
    const double w = 0.5 * (rule.weights(i) + rule.weights(j));
    rule.nodes(i) = -x;
    rule.nodes(j) = x;
    rule.weights(i) = w;
    rule.weights(j) = w;
  }
  if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
  return rule;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw InvalidInput("Rng::uniform: requires lo < hi");
  const double v = lo + (hi - lo) * uniform();
  return v < hi ? v : std::nextafter(hi, lo);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

}  // namespace dpde
