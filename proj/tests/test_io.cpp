#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "dpde/errors.hpp"
#include "dpde/io.hpp"

using namespace dpde;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "dpde_io_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("empty config gives defaults") {
    const Config c = config_from_string("{}");
    CHECK(c.problem.d == 1);
    CHECK(c.problem.strike == 100.0);
    CHECK(c.problem.lambda == 0.1);
    CHECK(c.problem.T == 4.0);
    CHECK(c.train.depth == 9);
    CHECK(c.train.width == 90);
    CHECK(c.train.n_points == 10000);
    CHECK(c.train.patience == 50);
    CHECK(c.train.learning_rate == 1e-3);
    CHECK_FALSE(c.evaluation.oracle.has_value());
  }

  TEST_CASE("config round trip") {
    Config c = config_from_string(R"({"problem": {"d": 3, "payoff": "geometric_call",
        "param_box": {"rho_hat": [0.1, 0.4]}}, "train": {"seed": 17, "gate": "sigmoid"},
        "evaluation": {"oracle": "mc", "iv_threshold": 0.25}})");
    CHECK(c.problem.d == 3);
    CHECK(c.problem.payoff == PayoffKind::geometric_call);
    CHECK(c.problem.rho_box.hi == 0.4);
    CHECK(c.train.seed == 17);
    CHECK(c.train.gate == Activation::sigmoid);
    CHECK(c.evaluation.oracle == OracleKind::mc);
    CHECK(c.evaluation.iv_threshold == 0.25);
    const Config back = config_from_string(config_to_string(c));
    CHECK(config_to_string(back) == config_to_string(c));
    CHECK(problem_from_string(problem_to_string(c.problem)).rho_box.lo == 0.1);
  }

  TEST_CASE("unknown keys and bad values name the field") {
    CHECK(error_of(R"({"problme": {}})").find("problme") != std::string::npos);
    CHECK(error_of(R"({"train": {"lr": 0.1}})").find("train.lr") != std::string::npos);
    CHECK(error_of(R"({"problem": {"param_box": {"mu": [0, 1]}}})").find("problem.param_box.mu") != std::string::npos);
    CHECK(error_of(R"({"problem": {"param_box": {"rho_hat": [0.2, 1.5]}}})").find("param_box.rho_hat") !=
          std::string::npos);
    CHECK(error_of(R"({"train": {"boundary_weight": 0.5}})").find("train.boundary_weight") != std::string::npos);
    CHECK(error_of(R"({"train": {"depth": "nine"}})").find("train.depth") != std::string::npos);
    CHECK(error_of(R"({"problem": {"payoff": "put"}})").find("problem") != std::string::npos);
    CHECK(error_of(R"({"evaluation": {"oracle": "exact"}})").find("evaluation.oracle") != std::string::npos);
    CHECK_FALSE(error_of("{not json").empty());
    CHECK(error_of(R"({"train": {"boundary_weight": 0}})").empty());
  }

  TEST_CASE("model round trip prices bit-exactly") {
    ProblemSpec spec;
    spec.d = 2;
    Rng rng(3);
    const Model m{spec, init_glorot(architecture_for(spec, 2, 7, Activation::sigmoid), rng)};
    TrainMeta meta;
    meta.seed = 42;
    meta.epochs_run = 12;
    meta.best_epoch = 9;
    meta.best_loss = 0.1234567890123456789;
    const std::string text = model_to_string(m, meta);
    TrainMeta back_meta;
    const Model back = model_from_string(text, &back_meta);
    CHECK(back.params == m.params);
    CHECK(back_meta.seed == 42);
    CHECK(back_meta.best_loss == meta.best_loss);
    CHECK(back_meta.tool_version == std::string(kToolVersion));
    CHECK(text.find(kModelFormatVersion) != std::string::npos);
    const Matrix pts = sample_interior(spec, 100, rng);
    CHECK(price_batch(back, pts) == price_batch(m, pts));
    CHECK(model_to_string(back, back_meta) == text);

    const auto path = temp_dir() / "m.json";
    save_model(path, m, meta);
    CHECK(read_file(path) == text);
    CHECK(load_model(path).params == m.params);
  }

  TEST_CASE("malformed model files are rejected") {
    ProblemSpec spec;
    const Model m{spec, NetworkParams::zeros(architecture_for(spec, 1, 2))};
    std::string text = model_to_string(m);
    CHECK_THROWS_AS(model_from_string("{}"), ConfigError);
    std::string wrong = text;
    wrong.replace(wrong.find(kModelFormatVersion), std::string(kModelFormatVersion).size(), "dpde-model/9");
    CHECK_THROWS_AS(model_from_string(wrong), ConfigError);
    CHECK_THROWS_AS(load_model(temp_dir() / "missing.json"), Error);
  }

  TEST_CASE("training report csv round trip") {
    TrainReport r;
    for (int i = 1; i <= 3; ++i) {
      EpochRecord e;
      e.epoch = i;
      e.loss_interior = 0.1 / i;
      e.loss_initial = 0.3 / (i * 7.0);
      e.loss_total = e.loss_interior + e.loss_initial;
      if (i != 2) e.val_mae = 0.01 * i + 1e-17;
      r.history.push_back(e);
    }
    std::stringstream ss;
    write_train_report_csv(ss, r);
    CHECK(ss.str().rfind(train_report_header(), 0) == 0);
    const auto back = read_train_report_csv(ss);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].epoch == r.history[i].epoch);
      CHECK(back[i].loss_interior == r.history[i].loss_interior);
      CHECK(back[i].loss_total == r.history[i].loss_total);
      CHECK(back[i].val_mae == r.history[i].val_mae);
    }
    CHECK(train_report_path("a/m.json").filename() == "m.json.report.csv");
    CHECK(meta_sidecar_path("a/m.json").filename() == "m.json.meta.json");
  }
}
