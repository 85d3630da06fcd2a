#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framr/dataset.hpp"
#include "framr/modeling.hpp"

namespace framr::eval {

// ---------------------------------------------------------------------------
// Partitioning

enum class Part : std::uint8_t { train, dev, validation };
std::string_view to_string(Part p);
Part part_from_string(std::string_view s);

struct PartitionSpec {
  double train = 0.5;
  double dev = 0.25;
  double validation = 0.25;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless every fraction is > 0 and they sum to 1.
  void validate() const;
};

/// Set sizes: cumulative boundaries round(n * cumulative fraction), halves up.
std::array<std::size_t, 3> partition_sizes(std::size_t n, const PartitionSpec& spec);

/// Labels in row order from a seeded shuffle; depends only on n, seed and
/// fractions.
std::vector<Part> partition(std::size_t n, const PartitionSpec& spec);

/// Row indices carrying label `p`, ascending.
std::vector<std::size_t> rows_with(const std::vector<Part>& labels, Part p);

// ---------------------------------------------------------------------------
// Discrimination

struct AucResult {
  double auc = 0;
  double variance = 0;  // DeLong
  double ci_low = 0;
  double ci_high = 0;
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
};

/// Mann-Whitney AUC (ties count one half) with a DeLong interval truncated to
/// [0, 1]. Throws DataError when a group is empty.
AucResult auc(const std::vector<double>& cases, const std::vector<double>& controls, double level = 0.95);

/// Splits scores by 0/1 outcome and calls auc().
AucResult auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& outcomes, double level = 0.95);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // positive iff score >= threshold; +inf for the origin
};

std::vector<RocPoint> roc_points(const Eigen::VectorXd& scores, const Eigen::VectorXd& outcomes);

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationRow {
  int decile = 0;  // 1-based, ascending risk
  std::size_t n = 0;
  double mean_pred = 0;
  double obs_rate = 0;
};

/// Rows sorted by prediction (stable), cut into `groups` equal-count groups;
/// the remainder goes one row each to the lowest groups. Throws DataError
/// when n < groups.
std::vector<CalibrationRow> calibration_table(const Eigen::VectorXd& pred, const Eigen::VectorXd& outcomes,
                                              int groups = 10);

/// Row-count-weighted mean |mean_pred - obs_rate| over groups.
double expected_calibration_error(const std::vector<CalibrationRow>& table);

struct HosmerLemeshow {
  double statistic = 0;
  int dof = 0;
  double p_value = 1;
  bool large_sample_warning = false;
};

inline constexpr std::size_t kHosmerLemeshowLargeN = 5000;
inline constexpr std::string_view kHosmerLemeshowCaveat =
    "Hosmer-Lemeshow is over-sensitive in large samples; small p-values may not indicate meaningful miscalibration";

/// Decile-grouped chi-square with dof = groups - 2. Throws DataError when
/// n < 2 * groups or all predictions are identical.
HosmerLemeshow hosmer_lemeshow(const Eigen::VectorXd& pred, const Eigen::VectorXd& outcomes, int groups = 10);

// ---------------------------------------------------------------------------
// Sample size

struct SampleSize {
  double raw = 0;
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
};

/// Cases and controls needed to distinguish AUC `alt_auc` from 0.5 under the
/// binormal variance function, two-sided at `alpha`. Throws ConfigError.
SampleSize sample_size_auc(double alt_auc, double alpha, double power, double kappa);

// ---------------------------------------------------------------------------
// Pooled evaluation

/// Rubin pooling of a scalar: mean, mean within-variance, between-variance.
model::PooledMetric pool_scalar(const std::vector<double>& estimates, const std::vector<double>& variances);

struct EvalReport {
  std::size_t n = 0;
  std::size_t n_events = 0;
  int m = 0;
  double level = 0.95;
  model::PooledMetric auc;
  double auc_ci_low = 0;
  double auc_ci_high = 0;
  std::vector<double> per_copy_auc;
  model::PooledMetric ece;
  std::vector<double> per_copy_ece;
  std::vector<CalibrationRow> calibration;  // from copy-averaged predictions
  std::optional<HosmerLemeshow> hl;
  std::vector<RocPoint> roc;  // from copy-averaged predictions

  nlohmann::json to_json() const;
  void write_calibration_csv(const std::filesystem::path& path) const;
  void write_roc_csv(const std::filesystem::path& path) const;
};

/// Scores the pooled model on each evaluation copy and pools AUC and ECE.
/// Throws DataError when copies disagree on rows or outcome.
EvalReport evaluate_pooled(const model::PooledModel& model, const std::vector<Dataset>& copies, double level = 0.95);

}  // namespace framr::eval
