// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "dpde/numerics.hpp"
#include "dpde/problem.hpp"

namespace dpde {

/// Standard normal CDF through erfc; absolute error at the level of double
/// rounding (well below 1e-12).
double norm_cdf(double x);
double norm_pdf(double x);

/// Univariate Black-Scholes call. Throws InvalidInput unless s, K, t, sigma > 0.
double bs_closed_form(double t, double s, double r, double sigma, double K);
/// dC/dsigma of the same call.
double bs_vega(double t, double s, double r, double sigma, double K);

/// Call on the geometric mean of d assets with equal volatility and equal
/// pairwise correlation; a single-asset call with dividend yield q.
double geometric_closed_form(double t, const Eigen::Ref<const Vector>& x, double r, double sigma,
                             double rho, double K);

/// Covariance split C = lambda1^2 11^T + V2 V2^T: a common factor loading
/// every asset equally plus d - 1 unit-variance residual factors.
struct OneFactorDecomposition {
  double lambda1 = 0.0;
  Matrix V2;  // d x (d - 1)
};

OneFactorDecomposition one_factor_decompose(const Eigen::Ref<const Matrix>& C);

/// Default Gauss-Hermite nodes per residual dimension.
int default_gh_nodes(int d);

/// Basket call by conditioning on the common factor (closed-form inner
/// Black-Scholes) and tensor Gauss-Hermite over the d - 1 residual factors.
/// Throws BudgetExceeded if nodes^(d - 1) exceeds `max_evaluations`.
double gh_basket_price(double t, const Eigen::Ref<const Vector>& x, const ParamVector& mu, double K,
                       int nodes_per_dim, double max_evaluations = 1e8);

struct McEstimate {
  double price = 0.0;
  double std_error = 0.0;
  std::int64_t n_paths = 0;
  std::uint64_t seed = 0;
};

struct McOptions {
  std::int64_t n_paths = 1'000'000;
  std::uint64_t seed = 1;
  bool antithetic = false;
  int workers = 1;
};

/// Exact terminal sampling of correlated geometric Brownian motion. Paths are
/// processed in fixed-size chunks with seeds derived from (seed, chunk index)
/// and reduced in chunk order, so the estimate does not depend on the worker
/// count.
McEstimate mc_basket_price(double t, const Eigen::Ref<const Vector>& x, const ParamVector& mu, double K,
                           PayoffKind kind, const McOptions& options);

enum class OracleKind { bs, geometric, gh, mc };

std::string to_string(OracleKind kind);
OracleKind oracle_kind_from_string(const std::string& s);

struct OracleOptions {
  int gh_nodes = 0;  // 0: default_gh_nodes(d)
  McOptions mc;
};

/// Cheapest exact-enough pricer for a problem: bs for one asset, the closed
/// form for geometric payoffs, Gauss-Hermite otherwise.
OracleKind default_oracle(const ProblemSpec& spec);

/// Price of a query under the chosen reference method. Throws InvalidInput
/// when the method does not apply to the problem (bs with d > 1, geometric
/// with a basket payoff, gh with a geometric payoff).
double reference_price(const ProblemSpec& spec, OracleKind kind, const PriceQuery& q,
                       const OracleOptions& options = {});

}  // namespace dpde
