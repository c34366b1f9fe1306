// SPDX-License-Identifier: Apache-2.0
#include "dpde/pricers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <vector>

namespace dpde {

namespace {
constexpr double inv_sqrt2 = 0.70710678118654752440;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * inv_sqrt2); }

double norm_pdf(double x) { return std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * inv_sqrt2); }

namespace {

/// Call on a spot exp(log_s) paying continuous yield q.
double call_with_yield(double t, double log_s, double r, double q, double sigma, double K) {
  const double vol = sigma * std::sqrt(t);
  const double d1 = (log_s - std::log(K) + (r - q) * t + 0.5 * sigma * sigma * t) / vol;
  const double d2 = d1 - vol;
  return norm_cdf(d1) * std::exp(log_s - q * t) - norm_cdf(d2) * K * std::exp(-r * t);
}

void check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidInput(std::string("pricer: ") + what + " must be positive");
}

}  // namespace

double bs_closed_form(double t, double s, double r, double sigma, double K) {
  check_positive(t, "t");
  check_positive(s, "spot");
  check_positive(sigma, "sigma");
  check_positive(K, "strike");
  return call_with_yield(t, std::log(s), r, 0.0, sigma, K);
}

double bs_vega(double t, double s, double r, double sigma, double K) {
  check_positive(t, "t");
  check_positive(s, "spot");
  check_positive(sigma, "sigma");
  check_positive(K, "strike");
  const double vol = sigma * std::sqrt(t);
  const double d1 = (std::log(s / K) + r * t + 0.5 * sigma * sigma * t) / vol;
  return s * norm_pdf(d1) * std::sqrt(t);
}

double geometric_closed_form(double t, const Eigen::Ref<const Vector>& x, double r, double sigma, double rho,
                             double K) {
  const auto d = static_cast<double>(x.size());
  if (x.size() < 1) throw InvalidInput("geometric_closed_form: need at least one asset");
  check_positive(t, "t");
  check_positive(sigma, "sigma");
  check_positive(K, "strike");
  if (x.size() > 1 && !(rho > -1.0 / (d - 1.0) && rho <= 1.0))
    throw InvalidInput("geometric_closed_form: rho must lie in (-1/(d-1), 1]");
  const double var_bar = x.size() == 1 ? sigma * sigma : sigma * sigma / d * (1.0 + (d - 1.0) * rho);
  const double q = 0.5 * sigma * sigma - 0.5 * var_bar;
  return call_with_yield(t, x.mean(), r, q, std::sqrt(var_bar), K);
}

OneFactorDecomposition one_factor_decompose(const Eigen::Ref<const Matrix>& C) {
  const Eigen::Index d = C.rows();
  if (d < 1 || C.cols() != d) throw DimensionMismatch("one_factor_decompose: matrix must be square");
  // Work on C / s so the pivot tolerance is relative; the split is homogeneous.
  const double s = C.diagonal().maxCoeff();
  if (!(s > 0.0)) throw NotPositiveDefinite("one_factor_decompose: non-positive variance");
  const Matrix L = cholesky(C / s);
  const Vector w = L.triangularView<Eigen::Lower>().solve(Vector::Ones(d));
  const double lambda1 = 1.0 / w.norm();
  const Vector q1 = lambda1 * w;

  // Householder reflection H with H e1 = q1.
  Vector v = -q1;
  v(0) += 1.0;
  Matrix H = Matrix::Identity(d, d);
  const double vv = v.squaredNorm();
  if (vv > 1e-30) H -= (2.0 / vv) * v * v.transpose();
  const Matrix M = L * H;

  OneFactorDecomposition out;
  out.lambda1 = lambda1 * std::sqrt(s);
  out.V2 = M.rightCols(d - 1) * std::sqrt(s);
  return out;
}

int default_gh_nodes(int d) {
  if (d <= 3) return 32;
  if (d <= 5) return 10;
  return 6;
}

double gh_basket_price(double t, const Eigen::Ref<const Vector>& x, const ParamVector& mu, double K,
                       int nodes_per_dim, double max_evaluations) {
  const int d = mu.dim();
  if (x.size() != d) throw DimensionMismatch("gh_basket_price: log-price length differs from parameters");
  if (nodes_per_dim < 1) throw InvalidInput("gh_basket_price: nodes_per_dim must be >= 1");
  mu.validate();
  if (d == 1) return bs_closed_form(t, std::exp(x(0)), mu.r, mu.sigma(0), K);
  check_positive(t, "t");
  check_positive(K, "strike");

  const int dims = d - 1;
  if (std::pow(static_cast<double>(nodes_per_dim), dims) > max_evaluations)
    throw BudgetExceeded("gh_basket_price: nodes^(d-1) exceeds the evaluation budget; lower nodes or use mc");

  const auto dec = one_factor_decompose(covariance(mu, t));
  const auto rule = gauss_hermite(nodes_per_dim);
  const double lam2 = dec.lambda1 * dec.lambda1;
  const double disc_strike = K * std::exp(-mu.r * t);

  // log of the conditional forward of asset i without the residual factors
  Vector base(d);
  for (int i = 0; i < d; ++i) base(i) = x(i) - 0.5 * mu.sigma(i) * mu.sigma(i) * t + 0.5 * lam2;

  // shift[j](:, k) = V2 column j at Y_j = sqrt(2) node_k
  std::vector<Matrix> shift(dims, Matrix(d, nodes_per_dim));
  for (int j = 0; j < dims; ++j)
    for (int k = 0; k < nodes_per_dim; ++k) shift[j].col(k) = dec.V2.col(j) * (std::numbers::sqrt2 * rule.nodes(k));

  std::vector<int> idx(dims, 0);
  // partial sums along the odometer: level j holds base + shifts of dims < j
  std::vector<Vector> partial(dims + 1, base);
  std::vector<double> wprod(dims + 1, 1.0);
  for (int j = 0; j < dims; ++j) {
    partial[j + 1] = partial[j] + shift[j].col(0);
    wprod[j + 1] = wprod[j] * rule.weights(0);
  }

  double sum = 0.0;
  for (;;) {
    const double h = partial[dims].array().exp().mean();
    sum += wprod[dims] * call_with_yield(1.0, std::log(h), 0.0, 0.0, dec.lambda1, disc_strike);

    int j = dims - 1;
    while (j >= 0 && ++idx[j] == nodes_per_dim) idx[j--] = 0;
    if (j < 0) break;
    for (int l = j; l < dims; ++l) {
      partial[l + 1] = partial[l] + shift[l].col(idx[l]);
      wprod[l + 1] = wprod[l] * rule.weights(idx[l]);
    }
  }
  return sum * std::pow(std::numbers::pi, -0.5 * dims);
}

McEstimate mc_basket_price(double t, const Eigen::Ref<const Vector>& x, const ParamVector& mu, double K,
                           PayoffKind kind, const McOptions& options) {
  const int d = mu.dim();
  if (x.size() != d) throw DimensionMismatch("mc_basket_price: log-price length differs from parameters");
  if (options.n_paths < 2) throw InvalidInput("mc_basket_price: n_paths must be >= 2");
  check_positive(t, "t");
  check_positive(K, "strike");
  mu.validate();

  // Factor the correlation, then scale: stays well conditioned for tiny sigma.
  const Matrix Lrho = cholesky(correlation_matrix(mu));
  const Matrix L = (mu.sigma * std::sqrt(t)).asDiagonal() * Lrho;
  Vector drift(d);
  for (int i = 0; i < d; ++i) drift(i) = x(i) + (mu.r - 0.5 * mu.sigma(i) * mu.sigma(i)) * t;
  const double discount = std::exp(-mu.r * t);

  auto payoff_of = [&](const Vector& logs) {
    const double level = kind == PayoffKind::basket_call ? logs.array().exp().mean() : std::exp(logs.mean());
    return std::max(level - K, 0.0);
  };

  // one sample = one path, or the mean of an antithetic pair
  const std::int64_t samples = options.antithetic ? options.n_paths / 2 : options.n_paths;
  if (samples < 2) throw InvalidInput("mc_basket_price: too few paths");
  constexpr std::int64_t chunk = 1 << 16;
  const std::int64_t n_chunks = (samples + chunk - 1) / chunk;
  std::vector<double> sums(n_chunks), sumsq(n_chunks);

  auto run_chunk = [&](std::int64_t c) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(c)));
    const std::int64_t begin = c * chunk;
    const std::int64_t end = std::min(samples, begin + chunk);
    Vector z(d), logs(d);
    double s = 0.0, s2 = 0.0;
    for (std::int64_t p = begin; p < end; ++p) {
      for (int i = 0; i < d; ++i) z(i) = rng.normal();
      const Vector shock = L * z;
      double v = payoff_of(drift + shock);
      if (options.antithetic) v = 0.5 * (v + payoff_of(drift - shock));
      v *= discount;
      s += v;
      s2 += v * v;
    }
    sums[c] = s;
    sumsq[c] = s2;
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(n_chunks)));
  if (workers == 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::int64_t c = w; c < n_chunks; c += workers) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  double s = 0.0, s2 = 0.0;
  for (std::int64_t c = 0; c < n_chunks; ++c) {
    s += sums[c];
    s2 += sumsq[c];
  }
  const auto n = static_cast<double>(samples);
  const double mean = s / n;
  const double var = std::max(0.0, (s2 - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), options.antithetic ? 2 * samples : samples, options.seed};
}

std::string to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::bs: return "bs";
    case OracleKind::geometric: return "geometric";
    case OracleKind::gh: return "gh";
    case OracleKind::mc: return "mc";
  }
  return "?";
}

OracleKind oracle_kind_from_string(const std::string& s) {
  if (s == "bs") return OracleKind::bs;
  if (s == "geometric") return OracleKind::geometric;
  if (s == "gh") return OracleKind::gh;
  if (s == "mc") return OracleKind::mc;
  throw InvalidInput("unknown reference method '" + s + "' (expected bs, geometric, gh or mc)");
}

OracleKind default_oracle(const ProblemSpec& spec) {
  if (spec.payoff == PayoffKind::geometric_call) return OracleKind::geometric;
  return spec.d == 1 ? OracleKind::bs : OracleKind::gh;
}

double reference_price(const ProblemSpec& spec, OracleKind kind, const PriceQuery& q, const OracleOptions& options) {
  if (q.x.size() != spec.d || q.mu.dim() != spec.d) throw DimensionMismatch("reference_price: query dimension differs from problem");
  switch (kind) {
    case OracleKind::bs:
      if (spec.d != 1) throw InvalidInput("reference_price: bs applies to a single asset only");
      return bs_closed_form(q.t, std::exp(q.x(0)), q.mu.r, q.mu.sigma(0), spec.strike);
    case OracleKind::geometric: {
      if (spec.payoff != PayoffKind::geometric_call)
        throw InvalidInput("reference_price: geometric closed form needs the geometric payoff");
      const double rho = spec.d > 1 ? q.mu.rho_hat(0) : 0.0;
      return geometric_closed_form(q.t, q.x, q.mu.r, q.mu.sigma(0), rho, spec.strike);
    }
    case OracleKind::gh: {
      if (spec.payoff != PayoffKind::basket_call) throw InvalidInput("reference_price: gh prices basket payoffs only");
      const int nodes = options.gh_nodes > 0 ? options.gh_nodes : default_gh_nodes(spec.d);
      return gh_basket_price(q.t, q.x, q.mu, spec.strike, nodes);
    }
    case OracleKind::mc:
      return mc_basket_price(q.t, q.x, q.mu, spec.strike, spec.payoff, options.mc).price;
  }
  throw InvalidInput("reference_price: unknown method");
}

}  // namespace dpde
