// SPDX-License-Identifier: Apache-2.0
#include "dpde/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace dpde {

void TrainConfig::validate() const {
  if (n_points < 1) throw ConfigError("train.n_points: must be >= 1");
  if (batches_per_epoch < 1) throw ConfigError("train.batches_per_epoch: must be >= 1");
  if (patience < 1) throw ConfigError("train.patience: must be >= 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs: must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate: must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon: must be positive");
  if (depth < 1) throw ConfigError("train.depth: must be >= 1");
  if (width < 1) throw ConfigError("train.width: must be >= 1");
  if (boundary_weight != 0.0)
    throw ConfigError("train.boundary_weight: boundary residual training is not supported; must be 0");
  if (workers < 1) throw ConfigError("train.workers: must be >= 1");
  if (validation_points < 0) throw ConfigError("train.validation_points: must be >= 0");
}

void adam_step(AdamState& state, Vector& theta, const Vector& grad, double lr, double beta1, double beta2,
               double eps) {
  if (state.m.size() != theta.size() || state.v.size() != theta.size() || grad.size() != theta.size())
    throw DimensionMismatch("adam_step: state, theta and gradient sizes differ");
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  theta.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

Matrix residual_coefficients(const ProblemSpec& spec, const Matrix& coords) {
  const int d = spec.d;
  const JetDirections dirs = JetDirections::pde(d);
  const auto batch = coords.cols();
  Matrix coef(dirs.layout.channels(), batch);
  for (Eigen::Index s = 0; s < batch; ++s) {
    const Vector mu_coords = coords.col(s).tail(spec.param_count());
    const ParamVector mu = spec.params_from_coordinates(std::span<const double>(mu_coords.data(), mu_coords.size()));
    const Matrix rho = correlation_matrix(mu);
    coef(0, s) = mu.r;
    coef(1, s) = 1.0;
    for (int i = 0; i < d; ++i) coef(2 + i, s) = -(mu.r - 0.5 * mu.sigma(i) * mu.sigma(i));
    for (int p = 0; p < static_cast<int>(dirs.layout.pairs.size()); ++p) {
      const int i = dirs.layout.pairs[p][0] - 1;
      const int j = dirs.layout.pairs[p][1] - 1;
      // the packed pair stands for both (i, j) and (j, i) in the double sum
      coef(dirs.layout.pair_channel(p), s) =
          i == j ? -0.5 * mu.sigma(i) * mu.sigma(i) : -rho(i, j) * mu.sigma(i) * mu.sigma(j);
    }
  }
  return coef;
}

int gradient_chunk_size(const Architecture& arch, const JetLayout& layout) {
  // about 12 stored (width x channels*batch) matrices per gated layer
  const double bytes_per_sample = 8.0 * arch.width * layout.channels() * (12.0 * arch.depth + 4.0);
  const double budget = 256.0 * 1024 * 1024;
  return std::clamp(static_cast<int>(budget / bytes_per_sample), 16, 1024);
}

namespace {

struct ChunkResult {
  double loss = 0.0;
  Vector grad;
};

/// Sum over one chunk of squared PDE residuals (divided by `denom`), and
/// optionally its weight gradient.
ChunkResult interior_chunk(const Model& model, const InputScaling& scaling, const Matrix& coords, double denom,
                           bool want_grad) {
  const JetDirections dirs = JetDirections::pde(model.spec.d);
  const auto batch = static_cast<int>(coords.cols());
  const int channels = dirs.layout.channels();
  thread_local BatchTape tape;  // reused so buffers are not reallocated per chunk
  forward_batch(model.params, dirs.layout, input_jets(scaling, coords, dirs), batch, tape);
  const Matrix loc = localisation_jets(model.spec, coords, dirs);
  const Matrix coef = residual_coefficients(model.spec, coords);

  Vector residual = Vector::Zero(batch);
  for (int c = 0; c < channels; ++c)
    residual.array() += coef.row(c).transpose().array() *
                        (channel(tape.out, c, batch).transpose().array() + loc.row(c).transpose().array());
  ChunkResult out;
  out.loss = residual.squaredNorm() / denom;
  if (!want_grad) return out;

  Matrix out_bar(1, tape.out.cols());
  for (int c = 0; c < channels; ++c)
    channel(out_bar, c, batch) = (2.0 / denom) * (coef.row(c).array() * residual.transpose().array()).matrix();
  NetworkParams grad = NetworkParams::zeros(model.params.arch);
  backward_batch(model.params, tape, out_bar, grad);
  out.grad = flatten(grad);
  return out;
}

ChunkResult initial_chunk(const Model& model, const InputScaling& scaling, const Matrix& coords, double denom,
                          bool want_grad) {
  const JetDirections dirs = JetDirections::value_only();
  const auto batch = static_cast<int>(coords.cols());
  thread_local BatchTape tape;
  forward_batch(model.params, dirs.layout, input_jets(scaling, coords, dirs), batch, tape);
  const Matrix loc = localisation_jets(model.spec, coords, dirs);

  Vector diff(batch);
  for (int s = 0; s < batch; ++s)
    diff(s) = tape.out(0, s) + loc(0, s) - payoff(model.spec, coords.col(s).segment(1, model.spec.d));
  ChunkResult out;
  out.loss = diff.squaredNorm() / denom;
  if (!want_grad) return out;

  const Matrix out_bar = (2.0 / denom) * diff.transpose();
  NetworkParams grad = NetworkParams::zeros(model.params.arch);
  backward_batch(model.params, tape, out_bar, grad);
  out.grad = flatten(grad);
  return out;
}

struct Task {
  bool interior;
  Eigen::Index begin;
  int batch;
};

/// Equal-width chunks of at most `max_chunk` columns.
int even_chunk(Eigen::Index n, int max_chunk) {
  if (n == 0) return max_chunk;
  const Eigen::Index pieces = (n + max_chunk - 1) / max_chunk;
  return static_cast<int>((n + pieces - 1) / pieces);
}

std::vector<Task> make_tasks(Eigen::Index n_interior, Eigen::Index n_initial, int max_int, int max_ic) {
  const int chunk_int = even_chunk(n_interior, max_int);
  const int chunk_ic = even_chunk(n_initial, max_ic);
  std::vector<Task> tasks;
  for (Eigen::Index b = 0; b < n_interior; b += chunk_int)
    tasks.push_back({true, b, static_cast<int>(std::min<Eigen::Index>(chunk_int, n_interior - b))});
  for (Eigen::Index b = 0; b < n_initial; b += chunk_ic)
    tasks.push_back({false, b, static_cast<int>(std::min<Eigen::Index>(chunk_ic, n_initial - b))});
  return tasks;
}

LossGradient evaluate(const Model& model, const Matrix& interior, const Matrix& initial, int workers, bool want_grad) {
  const Architecture& arch = model.params.arch;
  if (arch.input_dim != model.spec.input_dim())
    throw DimensionMismatch("loss: network input width differs from the problem");
  const InputScaling scaling(model.spec);
  const auto tasks = make_tasks(interior.cols(), initial.cols(),
                                gradient_chunk_size(arch, JetDirections::pde(model.spec.d).layout),
                                gradient_chunk_size(arch, JetLayout::value_only()));
  const double n_int = static_cast<double>(std::max<Eigen::Index>(interior.cols(), 1));
  const double n_ic = static_cast<double>(std::max<Eigen::Index>(initial.cols(), 1));

  auto run = [&](const Task& t) {
    return t.interior ? interior_chunk(model, scaling, interior.middleCols(t.begin, t.batch), n_int, want_grad)
                      : initial_chunk(model, scaling, initial.middleCols(t.begin, t.batch), n_ic, want_grad);
  };

  LossGradient out;
  if (want_grad) out.grad = Vector::Zero(static_cast<Eigen::Index>(arch.parameter_count()));
  auto reduce = [&](const Task& t, const ChunkResult& r) {
    (t.interior ? out.loss.interior : out.loss.initial) += r.loss;
    if (want_grad) out.grad += r.grad;
  };

  const int w = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
  if (w == 1) {
    for (const auto& t : tasks) reduce(t, run(t));
    return out;
  }
  // waves of w tasks, reduced in task order
  std::vector<ChunkResult> results(w);
  for (std::size_t wave = 0; wave < tasks.size(); wave += w) {
    const std::size_t n = std::min<std::size_t>(w, tasks.size() - wave);
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back([&, i] { results[i] = run(tasks[wave + i]); });
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < n; ++i) reduce(tasks[wave + i], results[i]);
  }
  return out;
}

}  // namespace

double interior_residual(const Model& model, const Matrix& interior) {
  if (interior.cols() < 1) throw InvalidInput("interior_residual: empty batch");
  return evaluate(model, interior, Matrix(interior.rows(), 0), 1, false).loss.interior;
}

double interior_residual(std::span<const DerivativeBundle> bundles, std::span<const ParamVector> params) {
  if (bundles.empty() || bundles.size() != params.size())
    throw InvalidInput("interior_residual: need one parameter vector per bundle");
  double sum = 0.0;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const double r = pde_residual(params[i], bundles[i]);
    sum += r * r;
  }
  return sum / static_cast<double>(bundles.size());
}

double initial_residual(const Model& model, const Matrix& initial) {
  if (initial.cols() < 1) throw InvalidInput("initial_residual: empty batch");
  return evaluate(model, Matrix(initial.rows(), 0), initial, 1, false).loss.initial;
}

LossTerms total_loss(const Model& model, const Matrix& interior, const Matrix& initial) {
  return evaluate(model, interior, initial, 1, false).loss;
}

LossGradient loss_and_gradient(const Model& model, const Matrix& interior, const Matrix& initial, int workers) {
  return evaluate(model, interior, initial, workers, true);
}

ValidationSet make_validation_set(const ProblemSpec& spec, int n, std::uint64_t seed, bool at_default_params) {
  ValidationSet set;
  set.oracle = default_oracle(spec);
  if (n <= 0 || (set.oracle == OracleKind::gh && spec.d > 3)) return set;

  Rng rng(seed);
  const Range xr = spec.x_interest();
  const auto ranges = spec.param_ranges();
  const ParamVector centre = spec.default_params();
  set.coords.resize(spec.input_dim(), n);
  set.exact.resize(n);
  for (int s = 0; s < n; ++s) {
    PriceQuery q;
    q.t = spec.t_interest_min < spec.T ? rng.uniform(spec.t_interest_min, spec.T) : spec.T;
    q.x.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) q.x(i) = rng.uniform(xr.lo, xr.hi);
    if (at_default_params) {
      q.mu = centre;
    } else {
      std::vector<double> c;
      for (const auto& r : ranges) c.push_back(r.hi > r.lo ? rng.uniform(r.lo, r.hi) : r.lo);
      q.mu = spec.params_from_coordinates(c);
    }
    set.coords.col(s) = query_coordinates(spec, q);
    set.exact(s) = reference_price(spec, set.oracle, q);
  }
  return set;
}

double mean_abs_error(const Model& model, const ValidationSet& set) {
  if (set.coords.cols() == 0) throw InvalidInput("mean_abs_error: empty validation set");
  return (price_batch(model, set.coords) - set.exact).cwiseAbs().mean();
}

TrainResult train(const ProblemSpec& spec, const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  spec.validate();
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  const Architecture arch = architecture_for(spec, cfg.depth, cfg.width, cfg.gate);
  Rng init_rng(derive_seed(cfg.seed, 0));
  Rng sample_rng(derive_seed(cfg.seed, 1));
  Model model{spec, init_glorot(arch, init_rng)};
  Vector theta = flatten(model.params);
  AdamState adam = AdamState::zeros(theta.size());

  const ValidationSet validation =
      make_validation_set(spec, cfg.validation_points, derive_seed(cfg.seed, 2), cfg.validation_at_default_params);
  const bool validate = validation.coords.cols() > 0;

  TrainResult result;
  TrainReport& report = result.report;
  report.seed = cfg.seed;
  report.workers = cfg.workers;
  report.validation_oracle = validate ? to_string(validation.oracle) : "";
  report.best_loss = std::numeric_limits<double>::infinity();
  Vector best_theta = theta;

  Matrix interior, initial;
  if (!cfg.resample) {
    interior = sample_interior(spec, cfg.n_points, sample_rng);
    initial = sample_initial(spec, cfg.n_points, sample_rng);
  }

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    LossTerms sum;
    for (int b = 1; b <= cfg.batches_per_epoch; ++b) {
      if (cfg.resample) {
        interior = sample_interior(spec, cfg.n_points, sample_rng);
        initial = sample_initial(spec, cfg.n_points, sample_rng);
      }
      model.params = unflatten(arch, theta);
      const LossGradient lg = loss_and_gradient(model, interior, initial, cfg.workers);
      if (!std::isfinite(lg.loss.total()) || !lg.grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << b << ": interior=" << lg.loss.interior
            << " initial=" << lg.loss.initial;
        throw NonFiniteLoss(msg.str());
      }
      adam_step(adam, theta, lg.grad, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
      sum.interior += lg.loss.interior;
      sum.initial += lg.loss.initial;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_interior = sum.interior / cfg.batches_per_epoch;
    rec.loss_initial = sum.initial / cfg.batches_per_epoch;
    rec.loss_total = rec.loss_interior + rec.loss_initial;
    if (validate) {
      model.params = unflatten(arch, theta);
      rec.val_mae = mean_abs_error(model, validation);
    }
    report.history.push_back(rec);
    report.epochs_run = epoch;
    if (rec.loss_total < report.best_loss) {
      report.best_loss = rec.loss_total;
      report.best_epoch = epoch;
      best_theta = theta;
    }
    if (on_epoch) on_epoch(rec);
    if (epoch - report.best_epoch >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }

  model.params = unflatten(arch, best_theta);
  result.model = std::move(model);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace dpde
