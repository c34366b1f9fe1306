// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dpde/jet.hpp"
#include "dpde/numerics.hpp"

namespace dpde {

enum class PayoffKind { basket_call, geometric_call };

/// How the pairwise correlation inputs expand into a full matrix.
/// `chain`: rho_ij = prod_{k=i}^{j-1} rho_hat_k (d - 1 inputs).
/// `equal`: every off-diagonal entry equals rho_hat_0 (one input).
enum class CorrelationLayout { chain, equal };

struct ParamVector {
  double r = 0.2;
  Vector sigma;
  Vector rho_hat;
  CorrelationLayout layout = CorrelationLayout::chain;

  int dim() const { return static_cast<int>(sigma.size()); }
  void validate() const;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  double width() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// The parametric pricing problem. Spot ranges are stored in price units;
/// the log-price boxes derive from them.
struct ProblemSpec {
  int d = 1;
  double strike = 100.0;
  PayoffKind payoff = PayoffKind::basket_call;
  double lambda = 0.1;
  double T = 4.0;
  Range spot_comp{21.0, 460.0};
  Range spot_interest{25.0, 150.0};
  double t_interest_min = 0.5;
  Range r_box{0.1, 0.3};
  Range sigma_box{0.1, 0.3};
  Range rho_box{0.2, 0.8};

  Range x_comp() const { return {std::log(spot_comp.lo), std::log(spot_comp.hi)}; }
  Range x_interest() const { return {std::log(spot_interest.lo), std::log(spot_interest.hi)}; }

  CorrelationLayout layout() const {
    return payoff == PayoffKind::geometric_call ? CorrelationLayout::equal : CorrelationLayout::chain;
  }
  /// Number of network parameter inputs: 2d for baskets (r, sigma_1..d,
  /// rho_hat_1..d-1); (r, sigma, rho) for the equal-volatility geometric case.
  int param_count() const;
  int input_dim() const { return 1 + d + param_count(); }
  /// Box of each parameter coordinate, in coordinate order.
  std::vector<Range> param_ranges() const;

  Vector coordinates(const ParamVector& mu) const;
  ParamVector params_from_coordinates(std::span<const double> coords) const;
  /// Centre of the parameter box (r = 0.2, sigma = 0.2, rho_hat = 0.5 by default).
  ParamVector default_params() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::string to_string(PayoffKind kind);
PayoffKind payoff_kind_from_string(const std::string& s);

/// Universal evaluation input: time to maturity, log-prices, parameters.
struct PriceQuery {
  double t = 0.0;
  Vector x;
  ParamVector mu;
};

/// Successive-product (or equal) correlation matrix. Throws InvalidInput when
/// any |rho_hat| >= 1.
Matrix correlation_matrix(const ParamVector& mu);

/// Covariance of log-returns over time t: rho_ij sigma_i sigma_j t.
Matrix covariance(const ParamVector& mu, double t);

double payoff(const ProblemSpec& spec, const Eigen::Ref<const Vector>& x);

/// Argument z of the softplus localisation: the forward-looking intrinsic
/// value, so that the localisation tends to z_+ as lambda grows. `mu` holds
/// the parameter coordinates in ProblemSpec order.
template <class T>
T localisation_argument(const ProblemSpec& spec, const T& t, std::span<const T> x, std::span<const T> mu) {
  using std::exp;
  const double inv_d = 1.0 / spec.d;
  const T& r = mu[0];
  const T discounted_strike = spec.strike * exp(-(r * t));
  if (spec.payoff == PayoffKind::basket_call) {
    T mean = exp(x[0]);
    for (int i = 1; i < spec.d; ++i) mean = mean + exp(x[i]);
    return inv_d * mean - discounted_strike;
  }
  T xbar = x[0];
  for (int i = 1; i < spec.d; ++i) xbar = xbar + x[i];
  xbar = inv_d * xbar;
  if (spec.d == 1) return exp(xbar) - discounted_strike;
  // beta = sigma^2/2 (1 - 1/d)(1 - rho): drift deficit of the geometric mean
  const T& sigma = mu[1];
  const T& rho = mu[2];
  const T beta = (0.5 * (1.0 - inv_d)) * (sigma * sigma) * (1.0 - rho);
  return exp(xbar - beta * t) - discounted_strike;
}

/// Softplus localisation F = (1/lambda) log(1 + exp(lambda z)).
template <class T>
T localisation(const ProblemSpec& spec, const T& t, std::span<const T> x, std::span<const T> mu) {
  return softplus(localisation_argument(spec, t, x, mu), spec.lambda);
}

double localisation(const ProblemSpec& spec, const PriceQuery& q);

/// F - z_+ evaluated directly as (1/lambda) log1p(exp(-|lambda z|)), so that
/// the gap stays representable when F and z_+ agree to machine precision.
inline double localisation_excess(double z, double lambda) {
  return std::log1p(std::exp(-std::abs(lambda * z))) / lambda;
}

/// Value and derivatives of a solution candidate at one point, in the
/// original (t, x) units.
struct DerivativeBundle {
  double u = 0.0;
  double u_t = 0.0;
  Vector u_x;
  Matrix u_xx;
};

/// A u = r u - sum_i (r - sigma_i^2/2) u_i - sum_ij rho_ij sigma_i sigma_j / 2 u_ij.
double bs_operator(const ParamVector& mu, const DerivativeBundle& b);

/// u_t + A u, the homogeneous pricing PDE in time to maturity.
inline double pde_residual(const ParamVector& mu, const DerivativeBundle& b) { return b.u_t + bs_operator(mu, b); }

/// Affine map of (t, x, mu) onto [-1, 1]^n. Collapsed ranges (lo == hi) map
/// to 0 with slope 0.
class InputScaling {
 public:
  explicit InputScaling(const ProblemSpec& spec);

  int dim() const { return static_cast<int>(lo_.size()); }
  const Vector& slopes() const { return slope_; }
  const Vector& lower() const { return lo_; }
  const Vector& upper() const { return hi_; }

  /// Physical coordinate column (t, x_1..x_d, mu...) to normalised inputs.
  Vector scale(const Eigen::Ref<const Vector>& coords) const;
  Vector unscale(const Eigen::Ref<const Vector>& scaled) const;
  /// As scale(), but throws OutOfDomain outside the computational box.
  Vector scale_checked(const Eigen::Ref<const Vector>& coords) const;
  bool in_box(const Eigen::Ref<const Vector>& coords, double tol = 1e-12) const;

 private:
  Vector lo_, hi_, slope_;
};

/// Physical coordinate column of a query: (t, x_1..x_d, parameter coordinates).
Vector query_coordinates(const ProblemSpec& spec, const PriceQuery& q);
PriceQuery query_from_coordinates(const ProblemSpec& spec, const Eigen::Ref<const Vector>& coords);

/// Uniform i.i.d. draws over (0, T) x Omega x P; one column per point.
Matrix sample_interior(const ProblemSpec& spec, int n, Rng& rng);
/// Uniform draws over Omega x P at t = 0.
Matrix sample_initial(const ProblemSpec& spec, int n, Rng& rng);

bool in_interest_box(const ProblemSpec& spec, const PriceQuery& q);

}  // namespace dpde
