// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "dpde/evaluation.hpp"
#include "dpde/model.hpp"
#include "dpde/training.hpp"

namespace dpde {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kModelFormatVersion = "dpde-model/1";

/// Evaluation options of a config file.
struct EvalConfig {
  std::optional<OracleKind> oracle;  // default_oracle(problem) when empty
  int gh_nodes = 0;
  std::int64_t mc_paths = 1'000'000;
  std::uint64_t mc_seed = 1;
  bool antithetic = false;
  std::uint64_t seed = 0;
  int scatter_points = 1000;
  int samples_per_cell = 10000;
  int sbar_bins = 10;
  int munorm_bins = 10;
  std::optional<double> iv_threshold;
  bool geometric_iv_dividend_adjusted = false;

  EvalOptions options(const ProblemSpec& spec, int workers) const;
};

/// {"problem": {...}, "train": {...}, "evaluation": {...}}; every field is
/// optional, unknown keys are rejected, and errors name the field path.
struct Config {
  ProblemSpec problem;
  TrainConfig train;
  EvalConfig evaluation;
};

Config config_from_string(const std::string& text);
Config load_config(const std::filesystem::path& path);
std::string config_to_string(const Config& cfg);

std::string problem_to_string(const ProblemSpec& spec);
ProblemSpec problem_from_string(const std::string& text);

/// Training facts stored in the model file. Deliberately free of wall-clock
/// and worker-count data (neither changes the weights) so that equal seeds
/// give byte-identical files; both go to the `<model>.meta.json` sidecar.
struct TrainMeta {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_loss = 0.0;
  std::string tool_version = kToolVersion;

  static TrainMeta from_report(const TrainReport& report);
};

std::string model_to_string(const Model& model, const TrainMeta& meta = {});
/// Throws ConfigError on schema problems and DimensionMismatch when the
/// weight blocks disagree with the architecture.
Model model_from_string(const std::string& text, TrainMeta* meta = nullptr);

void save_model(const std::filesystem::path& path, const Model& model, const TrainMeta& meta = {});
Model load_model(const std::filesystem::path& path, TrainMeta* meta = nullptr);

/// Wall-clock, worker count and validation oracle of a training run.
void save_meta_sidecar(const std::filesystem::path& model_path, const TrainReport& report);
std::filesystem::path meta_sidecar_path(const std::filesystem::path& model_path);

/// epoch,loss_interior,loss_initial,loss_total,val_mae (val_mae blank when absent).
inline const char* train_report_header() { return "epoch,loss_interior,loss_initial,loss_total,val_mae"; }
void write_train_report_csv(std::ostream& os, const TrainReport& report);
std::vector<EpochRecord> read_train_report_csv(std::istream& is);
std::filesystem::path train_report_path(const std::filesystem::path& model_path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace dpde
