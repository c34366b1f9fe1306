// SPDX-License-Identifier: Apache-2.0
#include "dpde/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace dpde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Calls fn(i) for i in [0, n) over contiguous blocks, one per worker. Each
/// index writes only its own output slot, so results do not depend on the
/// worker count.
template <class F>
void parallel_rows(Eigen::Index n, int workers, F fn) {
  const auto w = static_cast<Eigen::Index>(std::clamp<Eigen::Index>(workers, 1, std::max<Eigen::Index>(n, 1)));
  if (w == 1) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (Eigen::Index k = 0; k < w; ++k)
    pool.emplace_back([=, &fn] {
      for (Eigen::Index i = n * k / w; i < n * (k + 1) / w; ++i) fn(i);
    });
  for (auto& th : pool) th.join();
}

Vector column_params(const ProblemSpec& spec, const Matrix& coords, Eigen::Index s) {
  return coords.col(s).tail(spec.param_count());
}

double threshold_for(const ProblemSpec& spec, const EvalOptions& options) {
  return options.iv_threshold.value_or(default_iv_threshold(spec.d));
}

}  // namespace

PriceSurface model_surface(const Model& model) {
  return [&model](const Matrix& coords) { return price_batch(model, coords); };
}

OraclePrices oracle_prices(const ProblemSpec& spec, OracleKind kind, const OracleOptions& options,
                           const Matrix& coords, int workers) {
  if (coords.rows() != spec.input_dim()) throw DimensionMismatch("oracle: coordinate rows differ from problem");
  OraclePrices out;
  out.price = Vector::Constant(coords.cols(), kNaN);
  out.errors.assign(static_cast<std::size_t>(coords.cols()), "");
  parallel_rows(coords.cols(), workers, [&](Eigen::Index s) {
    OracleOptions opt = options;
    opt.mc.seed = derive_seed(options.mc.seed, static_cast<std::uint64_t>(s));
    opt.mc.workers = 1;
    try {
      out.price(s) = reference_price(spec, kind, query_from_coordinates(spec, coords.col(s)), opt);
    } catch (const std::exception& e) {
      out.errors[static_cast<std::size_t>(s)] = e.what();
    }
  });
  return out;
}

PriceSurface oracle_surface(const ProblemSpec& spec, OracleKind kind, const OracleOptions& options, int workers) {
  return [spec, kind, options, workers](const Matrix& coords) {
    return oracle_prices(spec, kind, options, coords, workers).price;
  };
}

double iv_spot(const ProblemSpec& spec, const PriceQuery& q, bool geometric_dividend_adjusted) {
  if (spec.payoff == PayoffKind::basket_call) return q.x.array().exp().mean();
  double log_s = q.x.mean();
  if (geometric_dividend_adjusted && spec.d > 1) {
    const double sigma = q.mu.sigma(0);
    const double rho = q.mu.rho_hat(0);
    log_s -= 0.5 * (1.0 - 1.0 / spec.d) * sigma * sigma * (1.0 - rho) * q.t;
  }
  return std::exp(log_s);
}

std::vector<ScatterRow> scatter_eval(const ProblemSpec& spec, const PriceSurface& surface, int n_points, Rng& rng,
                                     const EvalOptions& options) {
  if (n_points < 0) throw InvalidInput("scatter_eval: n_points must be >= 0");
  const Range xr = spec.x_interest();
  const auto pr = spec.param_ranges();
  auto draw = [&rng](const Range& r) { return r.hi > r.lo ? rng.uniform(r.lo, r.hi) : r.lo; };

  Matrix coords(spec.input_dim(), n_points);
  for (int s = 0; s < n_points; ++s) {
    coords(0, s) = draw({spec.t_interest_min, spec.T});
    for (int i = 0; i < spec.d; ++i) coords(1 + i, s) = draw(xr);
    for (std::size_t j = 0; j < pr.size(); ++j) coords(1 + spec.d + static_cast<Eigen::Index>(j), s) = draw(pr[j]);
  }
  if (n_points == 0) return {};

  const Vector model = surface(coords);
  const OraclePrices exact = oracle_prices(spec, options.oracle, options.oracle_options, coords, options.workers);
  const double threshold = threshold_for(spec, options);

  std::vector<ScatterRow> rows(static_cast<std::size_t>(n_points));
  for (int s = 0; s < n_points; ++s) {
    ScatterRow& row = rows[static_cast<std::size_t>(s)];
    const PriceQuery q = query_from_coordinates(spec, coords.col(s));
    row.t = q.t;
    row.x = q.x;
    row.mu = column_params(spec, coords, s);
    row.exact_price = exact.price(s);
    row.model_price = model(s);
    row.error = exact.errors[static_cast<std::size_t>(s)];
    row.oracle_failed = !row.error.empty();
    row.abs_error = std::abs(row.exact_price - row.model_price);
    if (row.oracle_failed) continue;
    row.iv_rel_error = iv_relative_error(row.exact_price, row.model_price, q.t,
                                         iv_spot(spec, q, options.geometric_iv_dividend_adjusted), q.mu.r,
                                         spec.strike, threshold);
  }
  return rows;
}

BinGridSpec BinGridSpec::uniform(const ProblemSpec& spec, int sbar_bins, int munorm_bins) {
  if (sbar_bins < 1 || munorm_bins < 1) throw InvalidInput("bins: need at least one bin per axis");
  BinGridSpec g;
  for (int i = 0; i <= sbar_bins; ++i)
    g.sbar_edges.push_back(spec.spot_interest.lo + spec.spot_interest.width() * i / sbar_bins);
  for (int j = 0; j <= munorm_bins; ++j) g.munorm_edges.push_back(static_cast<double>(j) / munorm_bins);
  return g;
}

void BinGridSpec::validate(const ProblemSpec& spec) const {
  if (sbar_edges.size() < 2 || munorm_edges.size() < 2) throw InvalidInput("bins: grid is empty");
  for (std::size_t i = 0; i < sbar_edges.size(); ++i) {
    if (!spec.spot_interest.contains(sbar_edges[i]))
      throw InvalidInput("bins: mean-spot edges must lie in the interest range");
    if (i > 0 && sbar_edges[i] < sbar_edges[i - 1]) throw InvalidInput("bins: mean-spot edges must not decrease");
  }
  for (std::size_t j = 0; j < munorm_edges.size(); ++j) {
    if (!(munorm_edges[j] >= 0.0 && munorm_edges[j] <= 1.0))
      throw InvalidInput("bins: parameter-norm edges must lie in [0, 1]");
    if (j > 0 && munorm_edges[j] < munorm_edges[j - 1])
      throw InvalidInput("bins: parameter-norm edges must not decrease");
  }
}

std::optional<Vector> spots_with_mean(const ProblemSpec& spec, double s_bar, Rng& rng, int max_attempts) {
  const Range box = spec.spot_interest;
  if (!box.contains(s_bar)) return std::nullopt;
  if (spec.d == 1) return Vector::Constant(1, s_bar);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Vector s(spec.d);
    for (int i = 0; i < spec.d; ++i) s(i) = box.hi > box.lo ? rng.uniform(box.lo, box.hi) : box.lo;
    s *= s_bar / s.mean();
    if (s.minCoeff() >= box.lo && s.maxCoeff() <= box.hi) return s;
  }
  return std::nullopt;
}

ParamVector params_with_norm(const ProblemSpec& spec, double radius, Rng& rng) {
  if (!(radius >= 0.0 && radius <= 1.0)) throw InvalidInput("params_with_norm: radius must lie in [0, 1]");
  const auto pr = spec.param_ranges();
  const int n = static_cast<int>(pr.size());
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  if (radius > 0.0) {
    for (auto& vj : v) vj = rng.uniform(-radius, radius);
    // pin one coordinate to the sphere
    const auto j = static_cast<std::size_t>(std::min<std::uint64_t>(rng.next_u64() % n, n - 1));
    v[j] = rng.uniform() < 0.5 ? -radius : radius;
  }
  std::vector<double> c(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) c[j] = radius > 0.0 ? pr[j].mid() + v[j] * 0.5 * pr[j].width() : pr[j].mid();
  return spec.params_from_coordinates(c);
}

BinGrid binned_max_error(const ProblemSpec& spec, const PriceSurface& surface, const BinGridSpec& grid,
                         int samples_per_cell, Rng& rng, const EvalOptions& options) {
  grid.validate(spec);
  if (samples_per_cell < 1) throw InvalidInput("bins: samples_per_cell must be >= 1");
  const auto ns = static_cast<int>(grid.sbar_edges.size()) - 1;
  const auto nm = static_cast<int>(grid.munorm_edges.size()) - 1;
  auto draw = [&rng](double lo, double hi) { return hi > lo ? rng.uniform(lo, hi) : lo; };

  std::vector<Vector> cols;
  std::vector<std::pair<int, int>> cell_of;
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nm; ++j)
      for (int k = 0; k < samples_per_cell; ++k) {
        const double s_bar = draw(grid.sbar_edges[i], grid.sbar_edges[i + 1]);
        const double radius = draw(grid.munorm_edges[j], grid.munorm_edges[j + 1]);
        const auto spots = spots_with_mean(spec, s_bar, rng);
        const ParamVector mu = params_with_norm(spec, radius, rng);
        if (!spots) continue;
        cols.push_back(query_coordinates(spec, {spec.T, spots->array().log().matrix(), mu}));
        cell_of.emplace_back(i, j);
      }

  BinGrid out;
  out.sbar_edges = grid.sbar_edges;
  out.munorm_edges = grid.munorm_edges;
  out.max_abs_error = Matrix::Constant(ns, nm, kNaN);
  out.count = Eigen::MatrixXi::Zero(ns, nm);
  out.failures = Eigen::MatrixXi::Zero(ns, nm);
  if (cols.empty()) return out;

  Matrix coords(spec.input_dim(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t s = 0; s < cols.size(); ++s) coords.col(static_cast<Eigen::Index>(s)) = cols[s];
  const Vector model = surface(coords);
  const OraclePrices exact = oracle_prices(spec, options.oracle, options.oracle_options, coords, options.workers);

  for (std::size_t s = 0; s < cols.size(); ++s) {
    const auto [i, j] = cell_of[s];
    ++out.count(i, j);
    if (!exact.errors[s].empty()) {
      ++out.failures(i, j);
      continue;
    }
    const double err = std::abs(exact.price(static_cast<Eigen::Index>(s)) - model(static_cast<Eigen::Index>(s)));
    double& cell = out.max_abs_error(i, j);
    cell = std::isnan(cell) ? err : std::max(cell, err);
  }
  return out;
}

PriceDerivatives eval_greeks(const Model& model, const PriceQuery& q, bool with_params) {
  return greeks(model, q, with_params);
}

ConvergenceReport convergence_report(const TrainReport& report) {
  ConvergenceReport out;
  out.rows = report.history;
  std::vector<double> loss, mae;
  for (const auto& r : out.rows) {
    if (out.best_epoch == 0 || r.loss_total < out.best_loss) {
      out.best_epoch = r.epoch;
      out.best_loss = r.loss_total;
    }
    if (r.val_mae) {
      loss.push_back(r.loss_total);
      mae.push_back(*r.val_mae);
    }
  }
  if (loss.size() >= 2) out.spearman_loss_mae = spearman(loss, mae);
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInput("spearman: need two equal-length series of >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const Eigen::Map<const Vector> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Vector> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  return den > 0.0 ? xc.dot(yc) / den : 0.0;
}

std::vector<std::string> param_names(const ProblemSpec& spec) {
  std::vector<std::string> names{"r"};
  if (spec.payoff == PayoffKind::basket_call) {
    for (int i = 1; i <= spec.d; ++i) names.push_back("sigma" + std::to_string(i));
    for (int i = 1; i < spec.d; ++i) names.push_back("rhohat" + std::to_string(i));
  } else {
    names.push_back("sigma");
    if (spec.d > 1) names.push_back("rho");
  }
  return names;
}

std::vector<std::string> scatter_header(const ProblemSpec& spec) {
  std::vector<std::string> h{"t"};
  for (int i = 1; i <= spec.d; ++i) h.push_back("x" + std::to_string(i));
  for (auto& n : param_names(spec)) h.push_back(n);
  for (const char* n : {"exact", "model", "abs_err", "iv_rel_err"}) h.emplace_back(n);
  return h;
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw InvalidInput("csv: not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string chomp(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

}  // namespace

void write_scatter_csv(std::ostream& os, const ProblemSpec& spec, const std::vector<ScatterRow>& rows) {
  os << join(scatter_header(spec)) << '\n';
  for (const auto& r : rows) {
    os << fmt(r.t);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ',' << fmt(r.x(i));
    for (Eigen::Index j = 0; j < r.mu.size(); ++j) os << ',' << fmt(r.mu(j));
    os << ',' << fmt(r.exact_price) << ',' << fmt(r.model_price) << ',' << fmt(r.abs_error) << ',';
    if (r.oracle_failed)
      os << "failed";
    else if (r.iv_rel_error)
      os << fmt(*r.iv_rel_error);
    else
      os << "skipped";
    os << '\n';
  }
}

std::vector<ScatterRow> read_scatter_csv(std::istream& is, const ProblemSpec& spec) {
  const auto header = scatter_header(spec);
  std::string line;
  if (!std::getline(is, line) || chomp(line) != join(header)) throw InvalidInput("scatter csv: unexpected header");
  std::vector<ScatterRow> rows;
  const int np = spec.param_count();
  while (std::getline(is, line)) {
    line = chomp(line);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw InvalidInput("scatter csv: wrong column count");
    ScatterRow r;
    std::size_t c = 0;
    r.t = parse_double(cells[c++]);
    r.x.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) r.x(i) = parse_double(cells[c++]);
    r.mu.resize(np);
    for (int j = 0; j < np; ++j) r.mu(j) = parse_double(cells[c++]);
    r.exact_price = parse_double(cells[c++]);
    r.model_price = parse_double(cells[c++]);
    r.abs_error = parse_double(cells[c++]);
    const std::string& iv = cells[c];
    if (iv == "failed")
      r.oracle_failed = true;
    else if (iv != "skipped")
      r.iv_rel_error = parse_double(iv);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_bins_csv(std::ostream& os, const BinGrid& grid) {
  os << bins_header() << '\n';
  for (Eigen::Index i = 0; i < grid.count.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.count.cols(); ++j)
      os << fmt(grid.sbar_edges[i]) << ',' << fmt(grid.sbar_edges[i + 1]) << ',' << fmt(grid.munorm_edges[j]) << ','
         << fmt(grid.munorm_edges[j + 1]) << ',' << fmt(grid.max_abs_error(i, j)) << ',' << grid.count(i, j) << '\n';
}

std::vector<BinRow> read_bins_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || chomp(line) != bins_header()) throw InvalidInput("bins csv: unexpected header");
  std::vector<BinRow> rows;
  while (std::getline(is, line)) {
    line = chomp(line);
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 6) throw InvalidInput("bins csv: wrong column count");
    const double count = parse_double(c[5]);
    if (count < 0 || count != std::floor(count)) throw InvalidInput("bins csv: count must be a whole number");
    rows.push_back({parse_double(c[0]), parse_double(c[1]), parse_double(c[2]), parse_double(c[3]),
                    parse_double(c[4]), static_cast<long>(count)});
  }
  return rows;
}

}  // namespace dpde
