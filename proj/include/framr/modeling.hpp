#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "framr/dataset.hpp"

namespace framr::model {

inline constexpr std::string_view kOutcome = "outcome";
inline constexpr std::string_view kSexCoding = "sex: female = 1, male = 0";

enum class Family { logistic_linear, additive_spline };
enum class Transform { raw, log_continuous, plus_quadratic };

std::string_view to_string(Family f);
std::string_view to_string(Transform t);

struct ModelSpec {
  std::string name;
  Family family = Family::logistic_linear;
  Transform transform = Transform::raw;
  std::vector<std::string> predictors{"age", "sex", "bmi", "leg_injury", "osteoporosis"};
  /// Under log_continuous, use log(x + offset); unset means plain log(x).
  std::optional<double> log_offset;
  int basis_size = 8;
  std::vector<double> lambda_grid{1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4};

  /// Throws ConfigError.
  void validate() const;
  static ModelSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Logistic raw, logistic on logs, logistic plus squares, additive spline,
/// additive spline on logs. Log candidates carry a +1 offset.
std::vector<ModelSpec> default_candidates();

// ---------------------------------------------------------------------------
// Design matrices

enum class Term { intercept, identity, log, square, spline };

struct DesignColumn {
  std::string name;
  std::string variable;  // empty for the intercept
  Term term = Term::identity;
  int basis_index = -1;  // spline basis function (0-based, the first is dropped)
};

/// Cubic B-spline basis (all K functions) at x on a clamped knot vector;
/// x outside the boundary knots is clamped.
std::vector<double> bspline_basis(const std::vector<double>& knots, double x, int degree = 3);

/// Clamped cubic knot vector with `basis_size - 4` interior knots at
/// quantiles of `values`. Throws NumericalError when knots coincide.
std::vector<double> quantile_knots(std::vector<double> values, int basis_size);

/// Column layout for a spec, fixed once from a reference table (spline knots
/// come from it) and reused for every copy and for scoring.
class DesignTemplate {
 public:
  DesignTemplate() = default;
  /// Continuous predictors are those whose column type is not binary.
  DesignTemplate(const ModelSpec& spec, const Dataset& reference);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<DesignColumn>& columns() const { return columns_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return columns_.size(); }
  const std::map<std::string, std::vector<double>>& knots() const { return knots_; }

  /// Throws DataError on missing predictors or non-positive log arguments.
  Eigen::MatrixXd build(const Dataset& data) const;
  /// One design row from named covariate values. Throws DataError.
  Eigen::RowVectorXd build_row(const std::map<std::string, double>& record) const;

  /// Second-difference penalty on each spline block (the dropped first
  /// coefficient is fixed at zero); zero elsewhere.
  Eigen::MatrixXd penalty() const;
  bool penalized() const { return spec_.family == Family::additive_spline; }

  nlohmann::json to_json() const;
  static DesignTemplate from_json(const nlohmann::json& j);

  bool operator==(const DesignTemplate& o) const;

 private:
  double transformed(const DesignColumn& c, double x) const;

  ModelSpec spec_;
  std::vector<std::string> continuous_, binary_;
  std::vector<DesignColumn> columns_;
  std::map<std::string, std::vector<double>> knots_;
};

/// Outcome vector; throws DataError on missing or non-0/1 values.
Eigen::VectorXd outcome_vector(const Dataset& data);

// ---------------------------------------------------------------------------
// Fitting

struct FitOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  int max_iter = 50;
  /// |beta_j * sd(x_j)| above this (non-intercept) is reported as separation.
  double separation_threshold = 15.0;
};

struct FittedModel {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;
  double deviance = 0;  // unpenalized
  int iterations = 0;
  std::optional<double> lambda;
  /// Max-norm of the (penalized) score at the solution.
  double gradient_norm = 0;
  std::size_t n = 0;
};

/// Maximum-likelihood logistic regression by IRLS (Newton with step
/// halving). Throws RankDeficientError, ConvergenceError, SeparationError.
FittedModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitOptions& options = {},
                         std::vector<std::string> names = {});

/// Penalized IRLS maximizing loglik - lambda/2 * beta' S beta. Covariance is
/// the inverse penalized information.
FittedModel fit_penalized_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& s,
                                   double lambda, const FitOptions& options = {},
                                   std::vector<std::string> names = {},
                                   const Eigen::VectorXd* start = nullptr);

/// Bernoulli log-likelihood at linear predictor eta.
double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& y);
/// Mean negative log-likelihood.
double log_loss(const Eigen::VectorXd& eta, const Eigen::VectorXd& y);

struct SplineFit {
  FittedModel model;
  std::vector<double> dev_log_loss;  // parallel to the lambda grid
  std::size_t chosen = 0;
};

/// Additive spline fit on `train`; lambda chosen from the spec's grid by
/// log-loss on `dev`.
SplineFit fit_additive_spline(const DesignTemplate& design, const Dataset& train, const Dataset& dev,
                              const FitOptions& options = {});

/// Fits `design` to one table (penalized at `lambda` when the family needs it).
FittedModel fit_design(const DesignTemplate& design, const Dataset& data, std::optional<double> lambda,
                       const FitOptions& options = {});

// ---------------------------------------------------------------------------
// Pooling

struct PooledModel {
  DesignTemplate design;
  std::vector<std::string> names;
  Eigen::VectorXd beta;     // mean over copies
  Eigen::VectorXd within;   // mean per-copy variance
  Eigen::VectorXd between;  // sample variance across copies (0 when m = 1)
  Eigen::VectorXd total;    // within + (1 + 1/m) * between
  Eigen::VectorXd df;       // Barnard-Rubin degrees of freedom
  int m = 0;
  std::optional<double> lambda;
  bool has_variance = true;

  Eigen::VectorXd linear_predictor(const Dataset& data) const;
  Eigen::VectorXd predict(const Dataset& data) const;
  /// Probability for one record of named covariates. Throws DataError on a
  /// missing covariate.
  double score(const std::map<std::string, double>& record) const;
  /// Two-sided t intervals at `level` from the total variance.
  std::vector<std::pair<double, double>> intervals(double level = 0.95) const;

  nlohmann::json to_json() const;
  /// Throws ConfigError on malformed input.
  static PooledModel from_json(const nlohmann::json& j);
};

/// Rubin's rules over per-copy fits sharing column names. `complete_df` is
/// the complete-data residual df (n - p) for the Barnard-Rubin correction.
PooledModel pool_rubin(const DesignTemplate& design, const std::vector<FittedModel>& fits, double complete_df);

// ---------------------------------------------------------------------------
// Selection

struct SelectionOptions {
  double auc_tolerance = 0.005;
  /// ECE differences below this count as ties, after which parsimony decides.
  double ece_tolerance = 0.005;
  FitOptions fit;
};

struct PooledMetric {
  double mean = 0;
  double within = 0;
  double between = 0;
  double total = 0;
};

struct CandidateResult {
  ModelSpec spec;
  bool ok = false;
  std::string error;
  std::size_t n_params = 0;
  std::optional<double> lambda;
  PooledMetric auc;
  PooledMetric ece;
  double dev_log_loss = 0;
};

struct Selection {
  std::vector<CandidateResult> table;
  std::size_t chosen = 0;
  DesignTemplate design;  // of the chosen candidate
  PooledModel train_model;

  const CandidateResult& winner() const { return table.at(chosen); }
  nlohmann::json to_json() const;
};

/// Fits every candidate on each training copy, pools by Rubin's rules,
/// scores the pooled model on each development copy and ranks by pooled AUC;
/// near-ties go to lower ECE and then to the simpler model. A failing
/// candidate is recorded and skipped. Throws NumericalError if all fail.
Selection select_model(const std::vector<ModelSpec>& candidates, const std::vector<Dataset>& train,
                       const std::vector<Dataset>& dev, const SelectionOptions& options = {});

/// Per-copy refit on train + dev rows with the selected layout, pooled.
PooledModel refit_final(const DesignTemplate& design, std::optional<double> lambda, const std::vector<Dataset>& train,
                        const std::vector<Dataset>& dev, const FitOptions& options = {});

}  // namespace framr::model
