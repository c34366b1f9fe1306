// SPDX-License-Identifier: Apache-2.0
#include "dpde/problem.hpp"

#include <algorithm>

namespace dpde {

void ParamVector::validate() const {
  const int d = dim();
  if (d < 1) throw InvalidInput("parameters: at least one volatility is required");
  for (int i = 0; i < d; ++i)
    if (!(sigma(i) > 0.0)) throw InvalidInput("parameters: volatilities must be positive");
  const Eigen::Index expected = layout == CorrelationLayout::chain ? d - 1 : (d > 1 ? 1 : 0);
  if (rho_hat.size() != expected)
    throw DimensionMismatch("parameters: expected " + std::to_string(expected) + " correlation inputs");
  for (Eigen::Index i = 0; i < rho_hat.size(); ++i)
    if (!(std::abs(rho_hat(i)) < 1.0)) throw InvalidInput("parameters: correlations must lie in (-1, 1)");
  if (layout == CorrelationLayout::equal && d > 1 && !(rho_hat(0) > -1.0 / (d - 1)))
    throw InvalidInput("parameters: equal correlation must exceed -1/(d-1)");
  if (!std::isfinite(r)) throw InvalidInput("parameters: rate must be finite");
}

int ProblemSpec::param_count() const {
  if (payoff == PayoffKind::basket_call) return 2 * d;
  return d == 1 ? 2 : 3;
}

std::vector<Range> ProblemSpec::param_ranges() const {
  std::vector<Range> ranges{r_box};
  if (payoff == PayoffKind::basket_call) {
    for (int i = 0; i < d; ++i) ranges.push_back(sigma_box);
    for (int i = 0; i + 1 < d; ++i) ranges.push_back(rho_box);
  } else {
    ranges.push_back(sigma_box);
    if (d > 1) ranges.push_back(rho_box);
  }
  return ranges;
}

Vector ProblemSpec::coordinates(const ParamVector& mu) const {
  if (mu.dim() != d) throw DimensionMismatch("parameters: dimension differs from problem");
  Vector c(param_count());
  c(0) = mu.r;
  if (payoff == PayoffKind::basket_call) {
    c.segment(1, d) = mu.sigma;
    if (mu.layout != CorrelationLayout::chain) throw InvalidInput("parameters: basket problems use chained correlations");
    c.tail(d - 1) = mu.rho_hat;
  } else {
    c(1) = mu.sigma(0);
    if (d > 1) c(2) = mu.rho_hat(0);
  }
  return c;
}

ParamVector ProblemSpec::params_from_coordinates(std::span<const double> coords) const {
  if (static_cast<int>(coords.size()) != param_count())
    throw DimensionMismatch("parameters: expected " + std::to_string(param_count()) + " coordinates");
  ParamVector mu;
  mu.r = coords[0];
  mu.layout = layout();
  if (payoff == PayoffKind::basket_call) {
    mu.sigma = Eigen::Map<const Vector>(coords.data() + 1, d);
    mu.rho_hat = Eigen::Map<const Vector>(coords.data() + 1 + d, d - 1);
  } else {
    mu.sigma = Vector::Constant(d, coords[1]);
    mu.rho_hat = d > 1 ? Vector::Constant(1, coords[2]) : Vector();
  }
  return mu;
}

ParamVector ProblemSpec::default_params() const {
  const auto ranges = param_ranges();
  std::vector<double> mid;
  for (const auto& r : ranges) mid.push_back(r.mid());
  return params_from_coordinates(mid);
}

namespace {

void check_range(const Range& r, const std::string& field) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi)
    throw ConfigError(field + ": expected finite [lo, hi] with lo <= hi");
}

}  // namespace

void ProblemSpec::validate() const {
  if (d < 1) throw ConfigError("problem.d: must be >= 1");
  if (!(strike > 0.0)) throw ConfigError("problem.strike: must be positive");
  if (!(lambda > 0.0)) throw ConfigError("problem.lambda: must be positive");
  if (!(T > 0.0)) throw ConfigError("problem.T: must be positive");
  check_range(spot_comp, "problem.spot_comp");
  check_range(spot_interest, "problem.spot_interest");
  if (!(spot_comp.lo > 0.0) || !(spot_comp.lo < spot_comp.hi))
    throw ConfigError("problem.spot_comp: requires 0 < lo < hi");
  if (spot_interest.lo < spot_comp.lo || spot_interest.hi > spot_comp.hi || !(spot_interest.lo > 0.0))
    throw ConfigError("problem.spot_interest: must lie inside spot_comp");
  if (!(t_interest_min >= 0.0 && t_interest_min <= T))
    throw ConfigError("problem.t_interest_min: must lie in [0, T]");
  check_range(r_box, "problem.param_box.r");
  check_range(sigma_box, "problem.param_box.sigma");
  check_range(rho_box, "problem.param_box.rho_hat");
  if (!(sigma_box.lo > 0.0)) throw ConfigError("problem.param_box.sigma: volatilities must be positive");
  if (!(rho_box.lo > -1.0 && rho_box.hi < 1.0))
    throw ConfigError("problem.param_box.rho_hat: correlations must lie in (-1, 1)");
  if (payoff == PayoffKind::geometric_call && d > 1 && !(rho_box.lo > -1.0 / (d - 1)))
    throw ConfigError("problem.param_box.rho_hat: equal correlations must exceed -1/(d-1)");
}

std::string to_string(PayoffKind kind) {
  return kind == PayoffKind::basket_call ? "basket_call" : "geometric_call";
}

PayoffKind payoff_kind_from_string(const std::string& s) {
  if (s == "basket_call") return PayoffKind::basket_call;
  if (s == "geometric_call") return PayoffKind::geometric_call;
  throw ConfigError("payoff: unknown kind '" + s + "' (expected basket_call or geometric_call)");
}

Matrix correlation_matrix(const ParamVector& mu) {
  const int d = mu.dim();
  for (Eigen::Index i = 0; i < mu.rho_hat.size(); ++i)
    if (!(std::abs(mu.rho_hat(i)) < 1.0)) throw InvalidInput("correlation_matrix: |rho_hat| must be < 1");
  Matrix rho = Matrix::Identity(d, d);
  for (int i = 0; i < d; ++i) {
    double prod = 1.0;
    for (int j = i + 1; j < d; ++j) {
      prod = mu.layout == CorrelationLayout::chain ? prod * mu.rho_hat(j - 1) : mu.rho_hat(0);
      rho(i, j) = rho(j, i) = prod;
    }
  }
  return rho;
}

Matrix covariance(const ParamVector& mu, double t) {
  return (mu.sigma.asDiagonal() * correlation_matrix(mu) * mu.sigma.asDiagonal()) * t;
}

double payoff(const ProblemSpec& spec, const Eigen::Ref<const Vector>& x) {
  if (x.size() != spec.d) throw DimensionMismatch("payoff: log-price length differs from d");
  const double level = spec.payoff == PayoffKind::basket_call ? x.array().exp().mean() : std::exp(x.mean());
  return std::max(level - spec.strike, 0.0);
}

double localisation(const ProblemSpec& spec, const PriceQuery& q) {
  const Vector mu = spec.coordinates(q.mu);
  return localisation<double>(spec, q.t, std::span<const double>(q.x.data(), q.x.size()),
                              std::span<const double>(mu.data(), mu.size()));
}

double bs_operator(const ParamVector& mu, const DerivativeBundle& b) {
  const int d = mu.dim();
  if (b.u_x.size() != d || b.u_xx.rows() != d || b.u_xx.cols() != d)
    throw DimensionMismatch("bs_operator: bundle dimension differs from parameters");
  const Matrix rho = correlation_matrix(mu);
  double au = mu.r * b.u;
  for (int i = 0; i < d; ++i) {
    au -= (mu.r - 0.5 * mu.sigma(i) * mu.sigma(i)) * b.u_x(i);
    for (int j = 0; j < d; ++j) au -= 0.5 * rho(i, j) * mu.sigma(i) * mu.sigma(j) * b.u_xx(i, j);
  }
  return au;
}

InputScaling::InputScaling(const ProblemSpec& spec) {
  const int n = spec.input_dim();
  lo_.resize(n);
  hi_.resize(n);
  lo_(0) = 0.0;
  hi_(0) = spec.T;
  const Range xr = spec.x_comp();
  for (int i = 0; i < spec.d; ++i) {
    lo_(1 + i) = xr.lo;
    hi_(1 + i) = xr.hi;
  }
  const auto pr = spec.param_ranges();
  for (std::size_t j = 0; j < pr.size(); ++j) {
    lo_(1 + spec.d + j) = pr[j].lo;
    hi_(1 + spec.d + j) = pr[j].hi;
  }
  slope_.resize(n);
  for (int i = 0; i < n; ++i) slope_(i) = hi_(i) > lo_(i) ? 2.0 / (hi_(i) - lo_(i)) : 0.0;
}

Vector InputScaling::scale(const Eigen::Ref<const Vector>& coords) const {
  if (coords.size() != dim()) throw DimensionMismatch("scale_input: coordinate count differs from problem");
  Vector out(dim());
  for (int i = 0; i < dim(); ++i) out(i) = slope_(i) != 0.0 ? slope_(i) * (coords(i) - lo_(i)) - 1.0 : 0.0;
  return out;
}

Vector InputScaling::unscale(const Eigen::Ref<const Vector>& scaled) const {
  if (scaled.size() != dim()) throw DimensionMismatch("unscale: coordinate count differs from problem");
  Vector out(dim());
  for (int i = 0; i < dim(); ++i)
    out(i) = slope_(i) != 0.0 ? lo_(i) + (scaled(i) + 1.0) / slope_(i) : lo_(i);
  return out;
}

bool InputScaling::in_box(const Eigen::Ref<const Vector>& coords, double tol) const {
  for (int i = 0; i < dim(); ++i)
    if (coords(i) < lo_(i) - tol || coords(i) > hi_(i) + tol) return false;
  return true;
}

Vector InputScaling::scale_checked(const Eigen::Ref<const Vector>& coords) const {
  if (!in_box(coords)) throw OutOfDomain("scale_input: point outside the computational box");
  return scale(coords);
}

Vector query_coordinates(const ProblemSpec& spec, const PriceQuery& q) {
  if (q.x.size() != spec.d) throw DimensionMismatch("query: log-price length differs from d");
  Vector c(spec.input_dim());
  c(0) = q.t;
  c.segment(1, spec.d) = q.x;
  c.tail(spec.param_count()) = spec.coordinates(q.mu);
  return c;
}

PriceQuery query_from_coordinates(const ProblemSpec& spec, const Eigen::Ref<const Vector>& coords) {
  if (coords.size() != spec.input_dim()) throw DimensionMismatch("query: coordinate count differs from problem");
  PriceQuery q;
  q.t = coords(0);
  q.x = coords.segment(1, spec.d);
  const Vector mu = coords.tail(spec.param_count());
  q.mu = spec.params_from_coordinates(std::span<const double>(mu.data(), mu.size()));
  return q;
}

namespace {

Matrix sample_points(const ProblemSpec& spec, int n, Rng& rng, bool interior) {
  if (n < 1) throw InvalidInput("sample: N must be >= 1");
  const InputScaling box(spec);
  Matrix pts(spec.input_dim(), n);
  for (int s = 0; s < n; ++s) {
    if (interior) {
      double t = 0.0;
      while (t == 0.0) t = rng.uniform(0.0, spec.T);
      pts(0, s) = t;
    } else {
      pts(0, s) = 0.0;
    }
    for (int i = 1; i < spec.input_dim(); ++i)
      pts(i, s) = box.upper()(i) > box.lower()(i) ? rng.uniform(box.lower()(i), box.upper()(i)) : box.lower()(i);
  }
  return pts;
}

}  // namespace

Matrix sample_interior(const ProblemSpec& spec, int n, Rng& rng) { return sample_points(spec, n, rng, true); }
Matrix sample_initial(const ProblemSpec& spec, int n, Rng& rng) { return sample_points(spec, n, rng, false); }

bool in_interest_box(const ProblemSpec& spec, const PriceQuery& q) {
  if (q.t < spec.t_interest_min || q.t > spec.T) return false;
  const Range xr = spec.x_interest();
  for (Eigen::Index i = 0; i < q.x.size(); ++i)
    if (q.x(i) < xr.lo - 1e-12 || q.x(i) > xr.hi + 1e-12) return false;
  const Vector mu = spec.coordinates(q.mu);
  const auto pr = spec.param_ranges();
  for (std::size_t j = 0; j < pr.size(); ++j)
    if (mu(j) < pr[j].lo - 1e-12 || mu(j) > pr[j].hi + 1e-12) return false;
  return true;
}

}  // namespace dpde
