// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpde/model.hpp"
#include "dpde/pricers.hpp"

namespace dpde {

struct TrainConfig {
  int n_points = 10000;  // per residual term and batch
  int batches_per_epoch = 10;
  int patience = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 2000;
  std::uint64_t seed = 0;
  int depth = 9;
  int width = 90;
  Activation gate = Activation::tanh;
  double boundary_weight = 0.0;  // reserved; only 0 is accepted
  bool resample = true;          // fresh points for every batch
  int workers = 1;
  int validation_points = 10000;  // 0 disables the validation MAE column
  bool validation_at_default_params = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  static AdamState zeros(Eigen::Index n) { return {Vector::Zero(n), Vector::Zero(n), 0}; }
};

/// One bias-corrected Adam update of theta in place.
void adam_step(AdamState& state, Vector& theta, const Vector& grad, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct LossTerms {
  double interior = 0.0;
  double initial = 0.0;
  double total() const { return interior + initial; }
};

struct LossGradient {
  LossTerms loss;
  Vector grad;  // flattening order of NetworkParams
};

/// Coefficients c such that u_t + A u = sum_c c * (channel c of u) for the
/// JetDirections::pde layout; one column per coordinate column.
Matrix residual_coefficients(const ProblemSpec& spec, const Matrix& coords);

/// Mean squared PDE residual over interior points (columns t, x, mu).
double interior_residual(const Model& model, const Matrix& interior);
/// Mean squared residual from explicit derivative bundles.
double interior_residual(std::span<const DerivativeBundle> bundles, std::span<const ParamVector> params);
/// Mean squared mismatch u(0, x) - payoff(x) over initial points.
double initial_residual(const Model& model, const Matrix& initial);
LossTerms total_loss(const Model& model, const Matrix& interior, const Matrix& initial);

/// Loss and its exact gradient in the network weights. Points are processed
/// in fixed-size chunks whose partial results are summed in chunk order, so
/// the result is independent of the worker count.
LossGradient loss_and_gradient(const Model& model, const Matrix& interior, const Matrix& initial, int workers = 1);

/// Largest chunk width used by loss_and_gradient; depends only on the
/// architecture and the jet layout. Point sets are split into equal chunks
/// no wider than this.
int gradient_chunk_size(const Architecture& arch, const JetLayout& layout);

struct EpochRecord {
  int epoch = 0;
  double loss_interior = 0.0;
  double loss_initial = 0.0;
  double loss_total = 0.0;
  std::optional<double> val_mae;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_loss = 0.0;
  int epochs_run = 0;
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string validation_oracle;
};

/// Fixed evaluation set inside the interest box with oracle prices.
struct ValidationSet {
  Matrix coords;
  Vector exact;
  OracleKind oracle = OracleKind::bs;
};

/// `n` uniform points over the interest box (t from [t_interest_min, T]),
/// parameters at the box centre or uniform over the box. Empty when no
/// closed-form or quadrature oracle is affordable (gh with d > 3).
ValidationSet make_validation_set(const ProblemSpec& spec, int n, std::uint64_t seed, bool at_default_params);

double mean_abs_error(const Model& model, const ValidationSet& set);

struct TrainResult {
  Model model;
  TrainReport report;
};

/// Adam over freshly sampled batches with early stopping on the epoch-mean
/// loss; returns the weights at the best epoch. Throws NonFiniteLoss with
/// the epoch, batch and loss components when the loss stops being finite.
TrainResult train(const ProblemSpec& spec, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dpde
