#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framr/cohort.hpp"
#include "framr/emr_store.hpp"
#include "framr/evaluation.hpp"
#include "framr/imputation.hpp"
#include "framr/modeling.hpp"
#include "framr/quality.hpp"
#include "framr/synth.hpp"

namespace framr::pipeline {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kDefaultSeed = 20160121;

struct QualitySettings {
  Date as_of = Date::from_ymd(2016, 1, 1);
  int max_staleness_days = 365;
  /// Empty means quality::default_rules(as_of year).
  std::vector<quality::PlausibilityRule> plausibility;
  std::vector<quality::ConcordanceVariable> concordance{
      {"bmi", quality::VariableKind::continuous, {"bmi"}, 5.0},
      {"systolic_bp", quality::VariableKind::continuous, {"systolic_bp"}, 10.0}};
};

/// Sample-size planning used for the small-set warnings in fit/evaluate.
struct Planning {
  double auc = 0.55;
  double alpha = 0.05;
  double power = 0.80;
  double controls_per_case = 10.0;
};

/// Everything a run needs. Stage seeds are always derived from `seed`.
struct PipelineConfig {
  std::uint64_t seed = kDefaultSeed;
  std::optional<fs::path> data_dir;     // existing extract; otherwise run-all generates one
  std::optional<fs::path> definitions;  // rule file; otherwise the built-in set
  emr::SchemaConfig schema = emr::SchemaConfig::defaults();
  synth::GeneratorConfig generator;
  QualitySettings quality;
  cohort::CohortConfig cohort;
  impute::ImputationConfig imputation;
  eval::PartitionSpec partition;
  std::vector<model::ModelSpec> candidates = model::default_candidates();
  model::SelectionOptions selection;
  double level = 0.95;
  Planning planning;
  impute::SimulationConfig simulation;
  std::string simulation_target = "bmi";

  /// Relative paths resolve against `base`. Throws ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base = {});
  static PipelineConfig load(const fs::path& path);
  nlohmann::json to_json() const;

  /// Re-derives every stage seed from the master seed.
  void set_seed(std::uint64_t master);
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

rules::DefinitionSet load_definitions(const PipelineConfig& config);

// Stages. Each writes its artifacts plus a manifest.json into `out`.
void run_generate(const PipelineConfig& config, const fs::path& out);
void run_quality(const PipelineConfig& config, const fs::path& data_dir, const fs::path& out);
void run_cohort(const PipelineConfig& config, const fs::path& data_dir, const fs::path& out);
void run_impute(const PipelineConfig& config, const fs::path& cohort_dir, const fs::path& out);
void run_fit(const PipelineConfig& config, const fs::path& impute_dir, const fs::path& out);
void run_evaluate(const PipelineConfig& config, const fs::path& model_path, const fs::path& impute_dir,
                  const fs::path& out);
void run_simulation(const PipelineConfig& config, const fs::path& cohort_dir, const fs::path& out);

/// generate (unless data_dir is set), quality, cohort, impute, fit, evaluate
/// into subdirectories of `out`, plus a top-level manifest.
void run_all(const PipelineConfig& config, const fs::path& out);

/// Imputed copies split by the stored partition.
struct Splits {
  std::vector<Dataset> train, dev, validation;
};
Splits load_splits(const fs::path& impute_dir);

}  // namespace framr::pipeline
