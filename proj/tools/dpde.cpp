// SPDX-License-Identifier: Apache-2.0
// dpde: train, price and evaluate parametric basket-option networks.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpde/evaluation.hpp"
#include "dpde/impliedvol.hpp"
#include "dpde/io.hpp"
#include "dpde/model.hpp"
#include "dpde/pricers.hpp"
#include "dpde/training.hpp"

namespace {

using namespace dpde;
using Json = nlohmann::ordered_json;

constexpr const char* kWorkersEnv = "DPDE_WORKERS";

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != cell.size()) throw InvalidInput(std::string(flag) + ": not a number: '" + cell + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidInput(std::string(flag) + ": empty list");
  return out;
}

/// --workers wins, then the environment, then the config value.
int resolve_workers(int flag, int fallback) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError(std::string(kWorkersEnv) + ": expected a positive integer");
    return static_cast<int>(v);
  }
  return fallback;
}

std::string full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

/// Market scenario flags shared by price, reference and greeks.
struct QueryFlags {
  double t = 1.0;
  std::string spots;
  std::optional<double> r;
  std::string sigmas;
  std::string rhohats;

  void add(CLI::App* cmd) {
    cmd->add_option("--t", t, "time to maturity in years")->required();
    cmd->add_option("--spots", spots, "spot prices s1,..,sd")->required();
    cmd->add_option("--r", r, "interest rate (default: box centre)");
    cmd->add_option("--sigmas", sigmas, "volatilities (one value, or one per asset)");
    cmd->add_option("--rhohats", rhohats, "correlation inputs (d-1 chained values, or one for geometric)");
  }

  PriceQuery query(const ProblemSpec& spec) const {
    const auto s = parse_list(spots, "--spots");
    if (static_cast<int>(s.size()) != spec.d)
      throw DimensionMismatch("--spots: expected " + std::to_string(spec.d) + " values");
    PriceQuery q;
    q.t = t;
    q.x.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) {
      if (!(s[i] > 0.0)) throw InvalidInput("--spots: spot prices must be positive");
      q.x(i) = std::log(s[i]);
    }
    q.mu = spec.default_params();
    if (r) q.mu.r = *r;
    if (!sigmas.empty()) {
      const auto v = parse_list(sigmas, "--sigmas");
      if (v.size() == 1)
        q.mu.sigma.setConstant(v[0]);
      else if (static_cast<int>(v.size()) == spec.d && spec.payoff == PayoffKind::basket_call)
        q.mu.sigma = Eigen::Map<const Vector>(v.data(), spec.d);
      else if (static_cast<int>(v.size()) == spec.d && Eigen::Map<const Vector>(v.data(), spec.d).isConstant(v[0]))
        q.mu.sigma.setConstant(v[0]);
      else
        throw DimensionMismatch("--sigmas: expected 1 or " + std::to_string(spec.d) + " values" +
                                (spec.payoff == PayoffKind::geometric_call ? " (all equal for geometric payoffs)" : ""));
    }
    if (!rhohats.empty()) {
      const auto v = parse_list(rhohats, "--rhohats");
      if (static_cast<Eigen::Index>(v.size()) != q.mu.rho_hat.size())
        throw DimensionMismatch("--rhohats: expected " + std::to_string(q.mu.rho_hat.size()) + " values");
      q.mu.rho_hat = Eigen::Map<const Vector>(v.data(), q.mu.rho_hat.size());
    }
    q.mu.validate();
    return q;
  }
};

void warn_if_outside(const ProblemSpec& spec, const PriceQuery& q) {
  const InputScaling box(spec);
  if (!box.in_box(query_coordinates(spec, q)))
    std::cerr << "warning: query lies outside the computational box; the network extrapolates\n";
}

std::ostream* open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return &std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw InvalidInput("cannot write '" + path + "'");
  return &file;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
  int workers = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  Config cfg = a.config.empty() ? Config{} : load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.max_epochs) cfg.train.max_epochs = *a.max_epochs;
  cfg.train.workers = resolve_workers(a.workers, cfg.train.workers);
  cfg.train.validate();

  const auto on_epoch = [&](const EpochRecord& r) {
    if (a.quiet || (r.epoch % 10 != 0 && r.epoch != 1)) return;
    std::cerr << "epoch " << r.epoch << "  loss " << std::scientific << std::setprecision(4) << r.loss_total;
    if (r.val_mae) std::cerr << "  val_mae " << std::fixed << std::setprecision(5) << *r.val_mae;
    std::cerr << std::defaultfloat << "\n";
  };
  const TrainResult res = train(cfg.problem, cfg.train, on_epoch);
  save_model(a.out, res.model, TrainMeta::from_report(res.report));
  std::ofstream csv(train_report_path(a.out), std::ios::trunc);
  write_train_report_csv(csv, res.report);
  save_meta_sidecar(a.out, res.report);

  std::cout << "model: " << a.out << "\nepochs: " << res.report.epochs_run << " (best " << res.report.best_epoch
            << ", loss " << full(res.report.best_loss) << ")\n";
  if (!res.report.history.empty() && res.report.history[res.report.best_epoch - 1].val_mae)
    std::cout << "validation MAE at best epoch: " << *res.report.history[res.report.best_epoch - 1].val_mae << " ("
              << res.report.validation_oracle << ")\n";
  std::cout << "wall clock: " << std::fixed << std::setprecision(1) << res.report.wall_clock_seconds << " s, workers "
            << res.report.workers << "\n";
  return 0;
}

// ---- price ---------------------------------------------------------------------

struct PriceArgs {
  std::string model, batch;
  QueryFlags q;
  bool json = false;
};

int cmd_price(const PriceArgs& a) {
  const Model model = load_model(a.model);
  const ProblemSpec& spec = model.spec;
  if (!a.batch.empty()) {
    // header t,s1..sd,<parameter names>; writes the rows back with a price column
    std::ifstream in(a.batch);
    if (!in) throw InvalidInput("cannot open '" + a.batch + "'");
    std::vector<std::string> expect{"t"};
    for (int i = 1; i <= spec.d; ++i) expect.push_back("s" + std::to_string(i));
    for (auto& n : param_names(spec)) expect.push_back(n);
    std::string line;
    std::getline(in, line);
    while (!line.empty() && line.back() == '\r') line.pop_back();
    std::string header;
    for (std::size_t i = 0; i < expect.size(); ++i) header += (i ? "," : "") + expect[i];
    if (line != header) throw InvalidInput("--batch: expected header '" + header + "'");
    std::vector<Vector> cols;
    std::vector<std::string> raw;
    while (std::getline(in, line)) {
      while (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto v = parse_list(line, "--batch");
      if (v.size() != expect.size()) throw InvalidInput("--batch: wrong column count in '" + line + "'");
      Vector c(spec.input_dim());
      c(0) = v[0];
      for (int i = 0; i < spec.d; ++i) {
        if (!(v[1 + i] > 0.0)) throw InvalidInput("--batch: spot prices must be positive");
        c(1 + i) = std::log(v[1 + i]);
      }
      for (int j = 0; j < spec.param_count(); ++j) c(1 + spec.d + j) = v[1 + spec.d + j];
      cols.push_back(c);
      raw.push_back(line);
    }
    Matrix coords(spec.input_dim(), static_cast<Eigen::Index>(cols.size()));
    const InputScaling box(spec);
    int outside = 0;
    for (std::size_t s = 0; s < cols.size(); ++s) {
      coords.col(static_cast<Eigen::Index>(s)) = cols[s];
      outside += !box.in_box(cols[s]);
    }
    if (outside) std::cerr << "warning: " << outside << " rows lie outside the computational box\n";
    const Vector p = cols.empty() ? Vector() : price_batch(model, coords);
    std::cout << header << ",price\n";
    for (std::size_t s = 0; s < cols.size(); ++s)
      std::cout << raw[s] << ',' << (a.json ? full(p(static_cast<Eigen::Index>(s))) : fixed6(p(static_cast<Eigen::Index>(s))))
                << '\n';
    return 0;
  }

  const PriceQuery q = a.q.query(spec);
  warn_if_outside(spec, q);
  const auto start = std::chrono::steady_clock::now();
  const double p = price(model, q);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (a.json) {
    Json j;
    j["price"] = p;
    j["latency_ms"] = ms;
    std::cout << j.dump() << "\n";
  } else {
    std::cout << fixed6(p) << "\n";
  }
  return 0;
}

// ---- reference -----------------------------------------------------------------

struct ReferenceArgs {
  std::string method = "gh";
  std::string payoff = "basket_call";
  double strike = 100.0;
  QueryFlags q;
  double paths = 1e6;
  std::uint64_t seed = 1;
  bool antithetic = false;
  int nodes = 0;
  int workers = 0;
  bool json = false;
};

int cmd_reference(const ReferenceArgs& a) {
  ProblemSpec spec;
  spec.payoff = payoff_kind_from_string(a.payoff);
  spec.d = static_cast<int>(parse_list(a.q.spots, "--spots").size());
  spec.strike = a.strike;
  if (!(a.paths >= 1.0 && a.paths <= 9.2e18 && a.paths == std::floor(a.paths)))
    throw InvalidInput("--paths: expected a positive whole number");
  const PriceQuery q = a.q.query(spec);
  OracleOptions opt;
  opt.gh_nodes = a.nodes;
  opt.mc.n_paths = static_cast<std::int64_t>(a.paths);
  opt.mc.seed = a.seed;
  opt.mc.antithetic = a.antithetic;
  opt.mc.workers = resolve_workers(a.workers, 1);
  const OracleKind kind = oracle_kind_from_string(a.method);

  Json j;
  j["method"] = a.method;
  if (kind == OracleKind::mc) {
    const McEstimate e = mc_basket_price(q.t, q.x, q.mu, spec.strike, spec.payoff, opt.mc);
    j["price"] = e.price;
    j["std_error"] = e.std_error;
    j["paths"] = e.n_paths;
    j["seed"] = e.seed;
    j["workers"] = opt.mc.workers;
    if (a.json)
      std::cout << j.dump() << "\n";
    else
      std::cout << fixed6(e.price) << " +/- " << fixed6(e.std_error) << " (stderr, " << e.n_paths << " paths)\n";
    return 0;
  }
  const double p = reference_price(spec, kind, q, opt);
  j["price"] = p;
  if (a.json)
    std::cout << j.dump() << "\n";
  else
    std::cout << fixed6(p) << "\n";
  return 0;
}

// ---- evaluate / bins -----------------------------------------------------------

struct EvalArgs {
  std::string model, config, out, oracle;
  bool self_test = false;
  int points = -1;
  int samples = -1;
  int sbar_bins = -1, munorm_bins = -1;
  std::optional<std::uint64_t> seed;
  int workers = 0;
};

struct EvalContext {
  std::optional<Model> model;
  ProblemSpec spec;
  EvalConfig ecfg;
  EvalOptions options;
  PriceSurface surface;
};

EvalContext eval_context(const EvalArgs& a) {
  EvalContext c;
  Config cfg = a.config.empty() ? Config{} : load_config(a.config);
  if (a.model.empty() == !a.self_test) throw InvalidInput("give exactly one of --model and --self-test");
  if (!a.model.empty()) {
    c.model = load_model(a.model);
    c.spec = c.model->spec;
  } else {
    c.spec = cfg.problem;
  }
  c.ecfg = cfg.evaluation;
  if (!a.oracle.empty()) c.ecfg.oracle = oracle_kind_from_string(a.oracle);
  if (a.seed) c.ecfg.seed = *a.seed;
  c.options = c.ecfg.options(c.spec, resolve_workers(a.workers, cfg.train.workers));
  c.surface = c.model ? model_surface(*c.model)
                      : oracle_surface(c.spec, c.options.oracle, c.options.oracle_options, c.options.workers);
  return c;
}

int cmd_evaluate(const EvalArgs& a) {
  const EvalContext c = eval_context(a);
  Rng rng(c.ecfg.seed);
  const int n = a.points >= 0 ? a.points : c.ecfg.scatter_points;
  const auto rows = scatter_eval(c.spec, c.surface, n, rng, c.options);
  std::ofstream file;
  write_scatter_csv(*open_out(a.out, file), c.spec, rows);

  double max_err = 0.0, sum = 0.0;
  int ok = 0, failed = 0, below = 0;
  for (const auto& r : rows) {
    if (r.oracle_failed) {
      ++failed;
      continue;
    }
    ++ok;
    sum += r.abs_error;
    max_err = std::max(max_err, r.abs_error);
    below += r.abs_error < 0.3;
  }
  std::cerr << "rows " << rows.size() << ", oracle " << to_string(c.options.oracle) << ", workers " << c.options.workers
            << ", failed " << failed << "; mean abs err " << (ok ? sum / ok : 0.0) << ", max " << max_err
            << ", below 0.3: " << below << "/" << ok << "\n";
  return ok == 0 && failed > 0 ? 3 : 0;
}

int cmd_bins(const EvalArgs& a) {
  const EvalContext c = eval_context(a);
  Rng rng(c.ecfg.seed);
  const BinGridSpec grid = BinGridSpec::uniform(c.spec, a.sbar_bins > 0 ? a.sbar_bins : c.ecfg.sbar_bins,
                                                a.munorm_bins > 0 ? a.munorm_bins : c.ecfg.munorm_bins);
  const BinGrid g = binned_max_error(c.spec, c.surface, grid, a.samples > 0 ? a.samples : c.ecfg.samples_per_cell,
                                     rng, c.options);
  std::ofstream file;
  write_bins_csv(*open_out(a.out, file), g);
  std::cerr << "cells " << g.count.size() << ", samples " << g.total() << ", oracle failures " << g.failures.sum()
            << ", max abs err " << (g.max_abs_error.hasNaN() ? g.max_abs_error.unaryExpr([](double v) {
                 return std::isnan(v) ? 0.0 : v;
               }).maxCoeff()
                                                               : g.max_abs_error.maxCoeff())
            << "\n";
  return 0;
}

// ---- greeks --------------------------------------------------------------------

struct GreeksArgs {
  std::string model;
  QueryFlags q;
  bool params = false;
  bool json = false;
};

int cmd_greeks(const GreeksArgs& a) {
  const Model model = load_model(a.model);
  const ProblemSpec& spec = model.spec;
  const PriceQuery q = a.q.query(spec);
  warn_if_outside(spec, q);
  if (a.params)
    std::cerr << "note: parameter sensitivities are far less accurate than spot Greeks; training never constrains "
                 "them directly\n";
  const PriceDerivatives g = eval_greeks(model, q, a.params);
  const Vector spots = q.x.array().exp();
  const Vector delta = g.d_x.array() / spots.array();

  Json j;
  j["price"] = g.price;
  j["d_t"] = g.d_t;
  j["d_x"] = std::vector<double>(g.d_x.data(), g.d_x.data() + g.d_x.size());
  j["delta"] = std::vector<double>(delta.data(), delta.data() + delta.size());
  Json h = Json::array();
  for (Eigen::Index i = 0; i < g.d_xx.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < g.d_xx.cols(); ++k) row.push_back(g.d_xx(i, k));
    h.push_back(row);
  }
  j["d_xx"] = h;
  if (a.params) {
    const auto names = param_names(spec);
    Json mu;
    for (Eigen::Index k = 0; k < g.d_mu.size(); ++k) mu[names[static_cast<std::size_t>(k)]] = g.d_mu(k);
    j["d_mu"] = mu;
  }
  if (a.json) {
    std::cout << j.dump() << "\n";
    return 0;
  }
  std::cout << "price " << fixed6(g.price) << "\ndV/dt " << fixed6(g.d_t) << "\n";
  for (int i = 0; i < spec.d; ++i)
    std::cout << "dV/dx" << i + 1 << " " << fixed6(g.d_x(i)) << "  delta" << i + 1 << " " << fixed6(delta(i)) << "\n";
  for (int i = 0; i < spec.d; ++i)
    for (int k = i; k < spec.d; ++k)
      std::cout << "d2V/dx" << i + 1 << "dx" << k + 1 << " " << fixed6(g.d_xx(i, k)) << "\n";
  if (a.params) {
    const auto names = param_names(spec);
    for (Eigen::Index k = 0; k < g.d_mu.size(); ++k)
      std::cout << "dV/d" << names[static_cast<std::size_t>(k)] << " " << fixed6(g.d_mu(k)) << "\n";
  }
  return 0;
}

// ---- implied-vol ---------------------------------------------------------------

struct IvArgs {
  double price = 0.0, t = 1.0, spot = 100.0, r = 0.0, strike = 100.0;
  bool json = false;
};

int cmd_implied_vol(const IvArgs& a) {
  const double sigma = implied_vol({a.price, a.t, a.spot, a.r, a.strike});
  if (a.json) {
    Json j;
    j["implied_vol"] = sigma;
    std::cout << j.dump() << "\n";
  } else {
    std::cout << std::setprecision(10) << sigma << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric basket-option pricing with a single trained network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", ta.config, "JSON config (defaults when omitted)");
  train_cmd->add_option("--out", ta.out, "model file to write")->required();
  train_cmd->add_option("--seed", ta.seed, "override train.seed");
  train_cmd->add_option("--max-epochs", ta.max_epochs, "override train.max_epochs");
  train_cmd->add_option("--workers", ta.workers, std::string("worker threads (env ") + kWorkersEnv + ")");
  train_cmd->add_flag("--quiet", ta.quiet, "no per-epoch progress");

  PriceArgs pa;
  auto* price_cmd = app.add_subcommand("price", "price with a trained model");
  price_cmd->add_option("--model", pa.model, "model file")->required();
  price_cmd->add_option("--batch", pa.batch, "CSV with header t,s1..sd,<parameters>");
  price_cmd->add_option("--t", pa.q.t, "time to maturity in years");
  price_cmd->add_option("--spots", pa.q.spots, "spot prices s1,..,sd");
  price_cmd->add_option("--r", pa.q.r, "interest rate (default: box centre)");
  price_cmd->add_option("--sigmas", pa.q.sigmas, "volatilities (one value, or one per asset)");
  price_cmd->add_option("--rhohats", pa.q.rhohats, "correlation inputs");
  price_cmd->add_flag("--json", pa.json, "JSON output with full precision");

  ReferenceArgs ra;
  auto* ref_cmd = app.add_subcommand("reference", "price with a reference method");
  ref_cmd->add_option("--method", ra.method, "bs | geometric | gh | mc")->required();
  ref_cmd->add_option("--payoff", ra.payoff, "basket_call | geometric_call");
  ref_cmd->add_option("--strike", ra.strike, "strike");
  ra.q.add(ref_cmd);
  ref_cmd->add_option("--paths", ra.paths, "Monte-Carlo paths (e.g. 1e6)");
  ref_cmd->add_option("--seed", ra.seed, "Monte-Carlo seed");
  ref_cmd->add_flag("--antithetic", ra.antithetic, "antithetic variates");
  ref_cmd->add_option("--nodes", ra.nodes, "Gauss-Hermite nodes per dimension (0: default)");
  ref_cmd->add_option("--workers", ra.workers, "Monte-Carlo worker threads");
  ref_cmd->add_flag("--json", ra.json, "JSON output with full precision");

  EvalArgs ea;
  auto add_eval = [&](CLI::App* cmd) {
    cmd->add_option("--model", ea.model, "model file");
    cmd->add_flag("--self-test", ea.self_test, "use the oracle as the model (errors must vanish)");
    cmd->add_option("--config", ea.config, "config file (problem for --self-test, evaluation options)");
    cmd->add_option("--oracle", ea.oracle, "bs | geometric | gh | mc");
    cmd->add_option("--seed", ea.seed, "sampling seed");
    cmd->add_option("--out", ea.out, "CSV output (stdout by default)");
    cmd->add_option("--workers", ea.workers, "worker threads");
  };
  auto* eval_cmd = app.add_subcommand("evaluate", "scatter errors over the interest box");
  add_eval(eval_cmd);
  eval_cmd->add_option("--points", ea.points, "number of random points");
  auto* bins_cmd = app.add_subcommand("bins", "max errors per (mean spot, parameter norm) cell");
  add_eval(bins_cmd);
  bins_cmd->add_option("--samples", ea.samples, "samples per cell");
  bins_cmd->add_option("--sbar-bins", ea.sbar_bins, "mean-spot bins");
  bins_cmd->add_option("--munorm-bins", ea.munorm_bins, "parameter-norm bins");

  GreeksArgs ga;
  auto* greeks_cmd = app.add_subcommand("greeks", "derivatives of the model price");
  greeks_cmd->add_option("--model", ga.model, "model file")->required();
  ga.q.add(greeks_cmd);
  greeks_cmd->add_flag("--params", ga.params, "include parameter sensitivities (low accuracy)");
  greeks_cmd->add_flag("--json", ga.json, "JSON output");

  IvArgs ia;
  auto* iv_cmd = app.add_subcommand("implied-vol", "invert the Black-Scholes formula");
  iv_cmd->add_option("--price", ia.price, "call price")->required();
  iv_cmd->add_option("--t", ia.t, "time to maturity")->required();
  iv_cmd->add_option("--spot", ia.spot, "spot (mean spot for baskets)")->required();
  iv_cmd->add_option("--r", ia.r, "interest rate");
  iv_cmd->add_option("--strike", ia.strike, "strike");
  iv_cmd->add_flag("--json", ia.json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*price_cmd) {
      if (pa.batch.empty() && pa.q.spots.empty()) throw InvalidInput("price: give --spots or --batch");
      return cmd_price(pa);
    }
    if (*ref_cmd) return cmd_reference(ra);
    if (*eval_cmd) return cmd_evaluate(ea);
    if (*bins_cmd) return cmd_bins(ea);
    if (*greeks_cmd) return cmd_greeks(ga);
    if (*iv_cmd) return cmd_implied_vol(ia);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
