// SPDX-License-Identifier: Apache-2.0
#include "dpde/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dpde {

using nlohmann::ordered_json;
using Json = ordered_json;

namespace {

// ---- checked JSON access -----------------------------------------------------

void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.contains(key)) throw ConfigError((path.empty() ? "" : path + ".") + key + ": unknown key");
}

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

template <class T>
void read(const Json& obj, const std::string& path, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const Json& v = obj.at(key);
  const std::string where = join_path(path, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0)
        out = v.get<T>();
      else
        throw ConfigError(where + ": expected a non-negative integer");
    } else {
      out = v.get<T>();
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    out = v.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(where + ": expected a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_same_v<T, Range>) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError(where + ": expected [lo, hi]");
    out = {v[0].get<double>(), v[1].get<double>()};
  }
}

Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }

Activation activation_from_string(const std::string& s, const std::string& where) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError(where + ": unknown activation '" + s + "' (expected tanh or sigmoid)");
}

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "sigmoid"; }

// ---- problem -----------------------------------------------------------------

Json problem_json(const ProblemSpec& s) {
  Json j;
  j["d"] = s.d;
  j["payoff"] = to_string(s.payoff);
  j["strike"] = s.strike;
  j["lambda"] = s.lambda;
  j["T"] = s.T;
  j["spot_comp"] = range_json(s.spot_comp);
  j["spot_interest"] = range_json(s.spot_interest);
  j["t_interest_min"] = s.t_interest_min;
  j["param_box"] = {{"r", range_json(s.r_box)}, {"sigma", range_json(s.sigma_box)}, {"rho_hat", range_json(s.rho_box)}};
  return j;
}

ProblemSpec problem_from_json(const Json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"d", "payoff", "strike", "lambda", "T", "spot_comp", "spot_interest", "t_interest_min", "param_box"});
  ProblemSpec s;
  read(j, path, "d", s.d);
  std::string payoff = to_string(s.payoff);
  read(j, path, "payoff", payoff);
  try {
    s.payoff = payoff_kind_from_string(payoff);
  } catch (const ConfigError& e) {
    throw ConfigError(join_path(path, e.what()));
  }
  read(j, path, "strike", s.strike);
  read(j, path, "lambda", s.lambda);
  read(j, path, "T", s.T);
  read(j, path, "spot_comp", s.spot_comp);
  read(j, path, "spot_interest", s.spot_interest);
  read(j, path, "t_interest_min", s.t_interest_min);
  if (j.contains("param_box")) {
    const std::string bp = join_path(path, "param_box");
    const Json& b = j.at("param_box");
    reject_unknown(b, bp, {"r", "sigma", "rho_hat"});
    read(b, bp, "r", s.r_box);
    read(b, bp, "sigma", s.sigma_box);
    read(b, bp, "rho_hat", s.rho_box);
  }
  s.validate();
  return s;
}

// ---- train / evaluation --------------------------------------------------------

Json train_json(const TrainConfig& c) {
  Json j;
  j["n_points"] = c.n_points;
  j["batches_per_epoch"] = c.batches_per_epoch;
  j["patience"] = c.patience;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["gate"] = to_string(c.gate);
  j["boundary_weight"] = c.boundary_weight;
  j["resample"] = c.resample;
  j["workers"] = c.workers;
  j["validation_points"] = c.validation_points;
  j["validation_at_default_params"] = c.validation_at_default_params;
  return j;
}

TrainConfig train_from_json(const Json& j) {
  const std::string p = "train";
  reject_unknown(j, p,
                 {"n_points", "batches_per_epoch", "patience", "learning_rate", "beta1", "beta2", "epsilon",
                  "max_epochs", "seed", "depth", "width", "gate", "boundary_weight", "resample", "workers",
                  "validation_points", "validation_at_default_params"});
  TrainConfig c;
  read(j, p, "n_points", c.n_points);
  read(j, p, "batches_per_epoch", c.batches_per_epoch);
  read(j, p, "patience", c.patience);
  read(j, p, "learning_rate", c.learning_rate);
  read(j, p, "beta1", c.beta1);
  read(j, p, "beta2", c.beta2);
  read(j, p, "epsilon", c.epsilon);
  read(j, p, "max_epochs", c.max_epochs);
  read(j, p, "seed", c.seed);
  read(j, p, "depth", c.depth);
  read(j, p, "width", c.width);
  std::string gate = to_string(c.gate);
  read(j, p, "gate", gate);
  c.gate = activation_from_string(gate, "train.gate");
  read(j, p, "boundary_weight", c.boundary_weight);
  read(j, p, "resample", c.resample);
  read(j, p, "workers", c.workers);
  read(j, p, "validation_points", c.validation_points);
  read(j, p, "validation_at_default_params", c.validation_at_default_params);
  c.validate();
  return c;
}

Json eval_json(const EvalConfig& e) {
  Json j;
  j["oracle"] = e.oracle ? Json(to_string(*e.oracle)) : Json(nullptr);
  j["gh_nodes"] = e.gh_nodes;
  j["mc_paths"] = e.mc_paths;
  j["mc_seed"] = e.mc_seed;
  j["antithetic"] = e.antithetic;
  j["seed"] = e.seed;
  j["scatter_points"] = e.scatter_points;
  j["samples_per_cell"] = e.samples_per_cell;
  j["sbar_bins"] = e.sbar_bins;
  j["munorm_bins"] = e.munorm_bins;
  j["iv_threshold"] = e.iv_threshold ? Json(*e.iv_threshold) : Json(nullptr);
  j["geometric_iv_dividend_adjusted"] = e.geometric_iv_dividend_adjusted;
  return j;
}

EvalConfig eval_from_json(const Json& j) {
  const std::string p = "evaluation";
  reject_unknown(j, p,
                 {"oracle", "gh_nodes", "mc_paths", "mc_seed", "antithetic", "seed", "scatter_points",
                  "samples_per_cell", "sbar_bins", "munorm_bins", "iv_threshold", "geometric_iv_dividend_adjusted"});
  EvalConfig e;
  if (j.contains("oracle") && !j.at("oracle").is_null()) {
    std::string o;
    read(j, p, "oracle", o);
    try {
      e.oracle = oracle_kind_from_string(o);
    } catch (const Error& err) {
      throw ConfigError(std::string("evaluation.oracle: ") + err.what());
    }
  }
  read(j, p, "gh_nodes", e.gh_nodes);
  read(j, p, "mc_paths", e.mc_paths);
  read(j, p, "mc_seed", e.mc_seed);
  read(j, p, "antithetic", e.antithetic);
  read(j, p, "seed", e.seed);
  read(j, p, "scatter_points", e.scatter_points);
  read(j, p, "samples_per_cell", e.samples_per_cell);
  read(j, p, "sbar_bins", e.sbar_bins);
  read(j, p, "munorm_bins", e.munorm_bins);
  if (j.contains("iv_threshold") && !j.at("iv_threshold").is_null()) {
    double t = 0.0;
    read(j, p, "iv_threshold", t);
    e.iv_threshold = t;
  }
  read(j, p, "geometric_iv_dividend_adjusted", e.geometric_iv_dividend_adjusted);
  if (e.gh_nodes < 0) throw ConfigError("evaluation.gh_nodes: must be >= 0");
  if (e.mc_paths < 1) throw ConfigError("evaluation.mc_paths: must be >= 1");
  if (e.scatter_points < 0) throw ConfigError("evaluation.scatter_points: must be >= 0");
  if (e.samples_per_cell < 1) throw ConfigError("evaluation.samples_per_cell: must be >= 1");
  if (e.sbar_bins < 1) throw ConfigError("evaluation.sbar_bins: must be >= 1");
  if (e.munorm_bins < 1) throw ConfigError("evaluation.munorm_bins: must be >= 1");
  if (e.iv_threshold && !(*e.iv_threshold >= 0.0)) throw ConfigError("evaluation.iv_threshold: must be >= 0");
  return e;
}

Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": malformed JSON: " + e.what());
  }
}

// ---- weights -------------------------------------------------------------------

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_json(const Eigen::Ref<const Vector>& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

double number(const Json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

Matrix matrix_from(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw DimensionMismatch(where + ": expected " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DimensionMismatch(where + ": expected " + std::to_string(cols) + " columns");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = number(row[static_cast<std::size_t>(c)], where);
  }
  return m;
}

Vector vector_from(const Json& j, Eigen::Index n, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw DimensionMismatch(where + ": expected " + std::to_string(n) + " entries");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = number(j[static_cast<std::size_t>(i)], where);
  return v;
}

const Json& member(const Json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(join_path(path, key) + ": missing");
  return j.at(key);
}

}  // namespace

EvalOptions EvalConfig::options(const ProblemSpec& spec, int workers) const {
  EvalOptions o;
  o.oracle = oracle.value_or(default_oracle(spec));
  o.oracle_options.gh_nodes = gh_nodes;
  o.oracle_options.mc.n_paths = mc_paths;
  o.oracle_options.mc.seed = mc_seed;
  o.oracle_options.mc.antithetic = antithetic;
  o.iv_threshold = iv_threshold;
  o.geometric_iv_dividend_adjusted = geometric_iv_dividend_adjusted;
  o.workers = workers;
  return o;
}

Config config_from_string(const std::string& text) {
  const Json j = parse(text, "config");
  reject_unknown(j, "", {"problem", "train", "evaluation"});
  Config c;
  if (j.contains("problem")) c.problem = problem_from_json(j.at("problem"), "problem");
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("evaluation")) c.evaluation = eval_from_json(j.at("evaluation"));
  return c;
}

Config load_config(const std::filesystem::path& path) { return config_from_string(read_file(path)); }

std::string config_to_string(const Config& cfg) {
  Json j;
  j["problem"] = problem_json(cfg.problem);
  j["train"] = train_json(cfg.train);
  j["evaluation"] = eval_json(cfg.evaluation);
  return j.dump(2) + "\n";
}

std::string problem_to_string(const ProblemSpec& spec) { return problem_json(spec).dump(2) + "\n"; }

ProblemSpec problem_from_string(const std::string& text) { return problem_from_json(parse(text, "problem"), "problem"); }

TrainMeta TrainMeta::from_report(const TrainReport& report) {
  TrainMeta m;
  m.seed = report.seed;
  m.epochs_run = report.epochs_run;
  m.best_epoch = report.best_epoch;
  m.best_loss = report.best_loss;
  return m;
}

std::string model_to_string(const Model& model, const TrainMeta& meta) {
  const NetworkParams& p = model.params;
  Json theta;
  theta["W0"] = matrix_json(p.W0);
  theta["b0"] = vector_json(p.b0);
  Json layers = Json::array();
  for (const auto& l : p.layers) {
    Json b;
    b["Ug"] = matrix_json(l.Ug), b["Wg"] = matrix_json(l.Wg), b["bg"] = vector_json(l.bg);
    b["Uz"] = matrix_json(l.Uz), b["Wz"] = matrix_json(l.Wz), b["bz"] = vector_json(l.bz);
    b["Ur"] = matrix_json(l.Ur), b["Wr"] = matrix_json(l.Wr), b["br"] = vector_json(l.br);
    b["Uh"] = matrix_json(l.Uh), b["Wh"] = matrix_json(l.Wh), b["bh"] = vector_json(l.bh);
    layers.push_back(std::move(b));
  }
  theta["layers"] = std::move(layers);
  theta["Wout"] = vector_json(p.Wout.transpose());
  theta["bout"] = p.bout;

  Json j;
  j["version"] = kModelFormatVersion;
  j["spec"] = problem_json(model.spec);
  j["arch"] = {{"depth", p.arch.depth},
               {"width", p.arch.width},
               {"input_dim", p.arch.input_dim},
               {"gate", to_string(p.arch.gate)},
               {"parameter_count", p.arch.parameter_count()}};
  j["theta"] = std::move(theta);
  j["train_meta"] = {{"seed", meta.seed},
                     {"epochs_run", meta.epochs_run},
                     {"best_epoch", meta.best_epoch},
                     {"best_loss", meta.best_loss},
                     {"tool_version", meta.tool_version}};
  // nlohmann prints the shortest decimal that round-trips each double
  return j.dump(1) + "\n";
}

Model model_from_string(const std::string& text, TrainMeta* meta) {
  const Json j = parse(text, "model");
  reject_unknown(j, "model", {"version", "spec", "arch", "theta", "train_meta"});
  const Json& version = member(j, "version", "model");
  if (!version.is_string() || version.get<std::string>() != kModelFormatVersion)
    throw ConfigError(std::string("model.version: expected '") + kModelFormatVersion + "'");

  Model m;
  m.spec = problem_from_json(member(j, "spec", "model"), "model.spec");

  const Json& a = member(j, "arch", "model");
  reject_unknown(a, "model.arch", {"depth", "width", "input_dim", "gate", "parameter_count"});
  Architecture arch;
  read(a, "model.arch", "depth", arch.depth);
  read(a, "model.arch", "width", arch.width);
  read(a, "model.arch", "input_dim", arch.input_dim);
  std::string gate = "tanh";
  read(a, "model.arch", "gate", gate);
  arch.gate = activation_from_string(gate, "model.arch.gate");
  arch.validate();
  if (arch.input_dim != m.spec.input_dim())
    throw DimensionMismatch("model.arch.input_dim: differs from the problem's input width");
  if (a.contains("parameter_count")) {
    std::size_t count = 0;
    read(a, "model.arch", "parameter_count", count);
    if (count != arch.parameter_count()) throw DimensionMismatch("model.arch.parameter_count: inconsistent");
  }

  const Json& t = member(j, "theta", "model");
  reject_unknown(t, "model.theta", {"W0", "b0", "layers", "Wout", "bout"});
  const int mw = arch.width, n = arch.input_dim;
  NetworkParams p = NetworkParams::zeros(arch);
  p.W0 = matrix_from(member(t, "W0", "model.theta"), mw, n, "model.theta.W0");
  p.b0 = vector_from(member(t, "b0", "model.theta"), mw, "model.theta.b0");
  const Json& layers = member(t, "layers", "model.theta");
  if (!layers.is_array() || static_cast<int>(layers.size()) != arch.depth)
    throw DimensionMismatch("model.theta.layers: expected " + std::to_string(arch.depth) + " layers");
  for (int l = 0; l < arch.depth; ++l) {
    const Json& b = layers[static_cast<std::size_t>(l)];
    const std::string lp = "model.theta.layers[" + std::to_string(l) + "]";
    reject_unknown(b, lp, {"Ug", "Wg", "bg", "Uz", "Wz", "bz", "Ur", "Wr", "br", "Uh", "Wh", "bh"});
    GatedLayer& g = p.layers[static_cast<std::size_t>(l)];
    auto U = [&](const char* k) { return matrix_from(member(b, k, lp), mw, n, lp + "." + k); };
    auto W = [&](const char* k) { return matrix_from(member(b, k, lp), mw, mw, lp + "." + k); };
    auto B = [&](const char* k) { return vector_from(member(b, k, lp), mw, lp + "." + k); };
    g.Ug = U("Ug"), g.Wg = W("Wg"), g.bg = B("bg");
    g.Uz = U("Uz"), g.Wz = W("Wz"), g.bz = B("bz");
    g.Ur = U("Ur"), g.Wr = W("Wr"), g.br = B("br");
    g.Uh = U("Uh"), g.Wh = W("Wh"), g.bh = B("bh");
  }
  p.Wout = vector_from(member(t, "Wout", "model.theta"), mw, "model.theta.Wout").transpose();
  p.bout = number(member(t, "bout", "model.theta"), "model.theta.bout");
  m.params = std::move(p);

  if (meta) {
    *meta = TrainMeta{};
    if (j.contains("train_meta")) {
      const Json& tm = j.at("train_meta");
      const std::string mp = "model.train_meta";
      reject_unknown(tm, mp, {"seed", "epochs_run", "best_epoch", "best_loss", "tool_version"});
      read(tm, mp, "seed", meta->seed);
      read(tm, mp, "epochs_run", meta->epochs_run);
      read(tm, mp, "best_epoch", meta->best_epoch);
      read(tm, mp, "best_loss", meta->best_loss);
      read(tm, mp, "tool_version", meta->tool_version);
    }
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model, const TrainMeta& meta) {
  write_file(path, model_to_string(model, meta));
}

Model load_model(const std::filesystem::path& path, TrainMeta* meta) { return model_from_string(read_file(path), meta); }

std::filesystem::path meta_sidecar_path(const std::filesystem::path& model_path) {
  return model_path.string() + ".meta.json";
}

std::filesystem::path train_report_path(const std::filesystem::path& model_path) {
  return model_path.string() + ".report.csv";
}

void save_meta_sidecar(const std::filesystem::path& model_path, const TrainReport& report) {
  Json j;
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  j["workers"] = report.workers;
  j["seed"] = report.seed;
  j["epochs_run"] = report.epochs_run;
  j["best_epoch"] = report.best_epoch;
  j["best_loss"] = report.best_loss;
  j["stopped_early"] = report.stopped_early;
  j["validation_oracle"] = report.validation_oracle;
  j["tool_version"] = kToolVersion;
  write_file(meta_sidecar_path(model_path), j.dump(2) + "\n");
}

namespace {

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_train_report_csv(std::ostream& os, const TrainReport& report) {
  os << train_report_header() << '\n';
  for (const auto& r : report.history) {
    os << r.epoch << ',' << fmt17(r.loss_interior) << ',' << fmt17(r.loss_initial) << ',' << fmt17(r.loss_total)
       << ',';
    if (r.val_mae) os << fmt17(*r.val_mae);
    os << '\n';
  }
}

std::vector<EpochRecord> read_train_report_csv(std::istream& is) {
  std::string line;
  auto chomp = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  };
  if (!std::getline(is, line)) throw InvalidInput("report csv: missing header");
  chomp(line);
  if (line != train_report_header()) throw InvalidInput("report csv: unexpected header");
  std::vector<EpochRecord> rows;
  while (std::getline(is, line)) {
    chomp(line);
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (line.back() == ',') c.emplace_back();
    if (c.size() != 5) throw InvalidInput("report csv: wrong column count");
    try {
      EpochRecord r;
      r.epoch = std::stoi(c[0]);
      r.loss_interior = std::stod(c[1]);
      r.loss_initial = std::stod(c[2]);
      r.loss_total = std::stod(c[3]);
      if (!c[4].empty()) r.val_mae = std::stod(c[4]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw InvalidInput("report csv: malformed number in '" + line + "'");
    }
  }
  return rows;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InvalidInput("write failed for '" + path.string() + "'");
}

}  // namespace dpde
