#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "framr/dataset.hpp"

namespace framr::impute {

enum class MethodKind { pmm, normal_linear, logistic };

struct Method {
  MethodKind kind = MethodKind::pmm;
  int donors = 5;  // pmm only

  /// "pmm", "pmm(7)", "normal_linear" or "logistic". Throws ConfigError.
  static Method parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const Method&) const = default;
};

/// pmm(5) for continuous and count variables, logistic for binary.
Method default_method(VarType type);

struct ImputationConfig {
  int m = 20;
  int cycles = 10;
  std::uint64_t seed = 0;
  /// Overrides of the per-type default method.
  std::map<std::string, Method> variable_methods;
  /// Overrides of the default predictor set (every other column).
  std::map<std::string, std::vector<std::string>> predictors;
  /// Ridge added to X'X as a multiple of its diagonal (linear methods).
  double ridge = 1e-5;

  void validate() const;
  static ImputationConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ImputedSet {
  std::vector<Dataset> copies;
  std::vector<std::uint64_t> copy_seeds;
  /// mask[c][r]: cell (row r, column c) was missing and has been imputed.
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<std::string> visit_order;
  std::map<std::string, std::string> methods;
  std::map<std::string, std::vector<std::string>> predictors;
  int cycles = 0;
  std::uint64_t seed = 0;

  int m() const { return static_cast<int>(copies.size()); }
  nlohmann::json manifest() const;
  /// copy_01.csv ... copy_MM.csv, mask.csv, imputation_manifest.json.
  void write(const std::filesystem::path& dir) const;
  static ImputedSet read(const std::filesystem::path& dir);
};

/// Chained-equations multiple imputation. Copies are independent given
/// per-copy seeds derived from config.seed and run in parallel; each copy's
/// cycles are sequential. Throws DataError for a variable with no observed
/// values and NumericalError (with copy/cycle/variable) on a failed fit.
ImputedSet impute(const Dataset& data, const ImputationConfig& config);

// ---------------------------------------------------------------------------
// Reliability simulation

enum class Mechanism { mcar, mar };

struct SimulationConfig {
  std::vector<double> rates{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  Mechanism mechanism = Mechanism::mcar;
  /// Covariate driving deletion under mar, and the log-odds change per SD.
  std::string mar_covariate;
  double mar_strength = 2.0;
  int replications = 50;
  /// Resample the complete cases with replacement in each replication, so
  /// the complete-case table acts as the population and its mean as truth.
  bool bootstrap = true;
  double level = 0.95;
  std::uint64_t seed = 0;
  ImputationConfig imputation;

  void validate() const;
  static SimulationConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SimulationRow {
  double rate = 0;
  int replications = 0;
  double rmse = 0;     // mean over replications
  double rmse_se = 0;  // Monte-Carlo standard error of that mean
  double bias = 0;
  double bias_se = 0;
  double coverage = 0;  // share of Rubin intervals covering the true mean
  double deleted_fraction = 0;
};

/// Deletes `target` values at each rate (nested deletions and shared imputation
/// seeds across rates within a replication), imputes, and scores imputed
/// against held-out values. Throws DataError on an empty table.
std::vector<SimulationRow> missingness_simulation(const Dataset& complete_cases, const std::string& target,
                                                  const SimulationConfig& config);

nlohmann::json to_json(const std::vector<SimulationRow>& rows);

}  // namespace framr::impute
