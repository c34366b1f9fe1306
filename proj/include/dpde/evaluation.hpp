// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dpde/impliedvol.hpp"
#include "dpde/model.hpp"
#include "dpde/pricers.hpp"
#include "dpde/training.hpp"

namespace dpde {

/// Prices for every coordinate column (t, x, parameter coordinates).
using PriceSurface = std::function<Vector(const Matrix& coords)>;

PriceSurface model_surface(const Model& model);

struct OraclePrices {
  Vector price;                     // NaN where the oracle failed
  std::vector<std::string> errors;  // empty string where it succeeded
};

/// Oracle prices column by column; failures are recorded per column instead
/// of aborting. Monte-Carlo seeds derive from (options.mc.seed, column), so
/// a column's price does not depend on the batch it arrives in.
OraclePrices oracle_prices(const ProblemSpec& spec, OracleKind kind, const OracleOptions& options,
                           const Matrix& coords, int workers = 1);

/// An oracle wired in as the surface under test (self-test closure); failed
/// columns come back as NaN.
PriceSurface oracle_surface(const ProblemSpec& spec, OracleKind kind, const OracleOptions& options,
                            int workers = 1);

struct EvalOptions {
  OracleKind oracle = OracleKind::bs;
  OracleOptions oracle_options;
  std::optional<double> iv_threshold;  // default_iv_threshold(d) when empty
  /// Geometric payoffs: invert against the dividend-adjusted geometric mean
  /// spot exp(mean x - beta t) instead of the plain geometric mean.
  bool geometric_iv_dividend_adjusted = false;
  int workers = 1;
};

/// Spot used to read a price as a univariate call.
double iv_spot(const ProblemSpec& spec, const PriceQuery& q, bool geometric_dividend_adjusted = false);

struct ScatterRow {
  double t = 0.0;
  Vector x;
  Vector mu;  // parameter coordinates
  double exact_price = 0.0;
  double model_price = 0.0;
  double abs_error = 0.0;
  std::optional<double> iv_rel_error;  // empty: skipped by the threshold rule
  bool oracle_failed = false;
  std::string error;
};

/// Uniform draws over the interest box: t from [t_interest_min, T], log-spots
/// from the interest range, parameters from the parameter box.
std::vector<ScatterRow> scatter_eval(const ProblemSpec& spec, const PriceSurface& surface, int n_points, Rng& rng,
                                     const EvalOptions& options);

struct BinGridSpec {
  std::vector<double> sbar_edges;    // mean spot, within the interest range
  std::vector<double> munorm_edges;  // max-norm radius of normalised parameters, in [0, 1]

  /// 10 x 10 cells over the interest range and [0, 1].
  static BinGridSpec uniform(const ProblemSpec& spec, int sbar_bins = 10, int munorm_bins = 10);
  void validate(const ProblemSpec& spec) const;
};

struct BinGrid {
  std::vector<double> sbar_edges;
  std::vector<double> munorm_edges;
  Matrix max_abs_error;        // (sbar bins, munorm bins); NaN for empty cells
  Eigen::MatrixXi count;       // accepted samples per cell
  Eigen::MatrixXi failures;    // samples whose oracle failed

  long total() const { return count.cast<long>().sum(); }
};

/// Spot vector with arithmetic mean `s_bar`: uniform draw over the interest
/// range, rescaled multiplicatively, rejected if it leaves the range. Empty
/// after `max_attempts` rejections.
std::optional<Vector> spots_with_mean(const ProblemSpec& spec, double s_bar, Rng& rng, int max_attempts = 1000);

/// Parameters whose normalised coordinates lie on the max-norm sphere of the
/// given radius; radius 0 is the box centre exactly.
ParamVector params_with_norm(const ProblemSpec& spec, double radius, Rng& rng);

/// Maximum absolute error per (mean spot, parameter norm) cell at t = T.
/// Edges may repeat to form a zero-width cell (e.g. radius exactly 0).
BinGrid binned_max_error(const ProblemSpec& spec, const PriceSurface& surface, const BinGridSpec& grid,
                         int samples_per_cell, Rng& rng, const EvalOptions& options);

/// Network Greeks; see greeks(). Spot deltas follow from d_x_i / S_i.
PriceDerivatives eval_greeks(const Model& model, const PriceQuery& q, bool with_params = false);

struct ConvergenceReport {
  std::vector<EpochRecord> rows;
  int best_epoch = 0;  // 0 for an empty history
  double best_loss = 0.0;
  std::optional<double> spearman_loss_mae;  // needs >= 2 epochs with validation MAE
};

ConvergenceReport convergence_report(const TrainReport& report);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Scatter header: t,x1..xd,<parameter names>,exact,model,abs_err,iv_rel_err.
std::vector<std::string> scatter_header(const ProblemSpec& spec);
/// Parameter coordinate names: r,sigma1..sigmad,rhohat1..rhohat{d-1} (basket)
/// or r,sigma,rho (geometric).
std::vector<std::string> param_names(const ProblemSpec& spec);

void write_scatter_csv(std::ostream& os, const ProblemSpec& spec, const std::vector<ScatterRow>& rows);
std::vector<ScatterRow> read_scatter_csv(std::istream& is, const ProblemSpec& spec);

inline const char* bins_header() { return "sbar_lo,sbar_hi,munorm_lo,munorm_hi,max_abs_err,count"; }
void write_bins_csv(std::ostream& os, const BinGrid& grid);

struct BinRow {
  double sbar_lo, sbar_hi, munorm_lo, munorm_hi, max_abs_err;
  long count;
};
std::vector<BinRow> read_bins_csv(std::istream& is);

}  // namespace dpde
