#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framr/dataset.hpp"
#include "framr/date.hpp"
#include "framr/emr_store.hpp"
#include "framr/random.hpp"

namespace framr::synth {

/// Normal distribution truncated to [lo, hi].
class TruncatedNormal {
 public:
  TruncatedNormal(double mu, double sigma, double lo, double hi);

  /// Underlying (mu, sigma) chosen so the truncated distribution has the
  /// requested mean and sd. Throws ConfigError when no such pair exists.
  static TruncatedNormal with_moments(double mean, double sd, double lo, double hi);

  double mean() const;
  double sd() const;
  double sample(Rng& rng) const;

  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

 private:
  double mu_, sigma_, lo_, hi_;
  double cdf_lo_, cdf_hi_;
};

struct Demographics {
  double age_mean = 42.7;
  double age_sd = 21.8;
  double age_min = 0;
  double age_max = 105;
  double female_fraction = 0.552;
  double bmi_mean = 28.1;
  double bmi_sd = 7.9;
  double bmi_min = 10;
  double bmi_max = 100;
};

struct IndicatorPrevalence {
  double leg_injury = 0.042;
  double osteoporosis = 0.021;
};

enum class MissingMechanism { mcar, mar };

struct MissingRates {
  double birth_year = 0.15;
  double bmi = 0.28;
  double systolic_bp = 0.0;
  MissingMechanism mechanism = MissingMechanism::mcar;
  /// Under mar: log-odds change of missingness per age SD.
  double mar_age_slope = 1.0;
};

/// Coefficients on the logit scale in the order intercept, age, sex
/// (female = 1), bmi, leg_injury, osteoporosis.
using TrueModel = std::array<double, 6>;

struct GeneratorConfig {
  std::size_t n_patients = 28447;
  std::uint64_t seed = 20160121;
  Demographics demographics;
  IndicatorPrevalence indicator_prevalence;
  MissingRates missing_rates;
  TrueModel true_model{-5.29, 0.04, 0.14, 0.02, 0.36, 0.60};
  /// Adds bmi_quadratic * (bmi - bmi_mean)^2 to the linear predictor.
  double bmi_quadratic = 0.0;
  double visit_rate = 2.0;
  Date window_start = Date::from_ymd(2008, 1, 1);
  Date window_end = Date::from_ymd(2009, 12, 31);
  int followup_years = 5;
  std::string outcome_code = "715.9";
  /// Share of patients given an outcome record before the index visit.
  double prior_outcome_rate = 0.02;
  /// Share of non-event patients diagnosed at their confirmation visit.
  double confirmation_diagnosis_rate = 0.01;
  /// Rate at which birth_year 0 and out-of-range BMI values are injected.
  double implausible_injection = 0.0;

  void validate() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Model covariates for one simulated person.
struct Covariates {
  int age = 0;
  bool female = false;
  double bmi = 0;
  bool leg_injury = false;
  bool osteoporosis = false;
};

double linear_predictor(const GeneratorConfig& config, const Covariates& c);

struct TruthRow {
  std::string patient_id;
  std::optional<Date> index_date;
  /// Would be in the analysis cohort under the default cohort rules.
  bool eligible = false;
  Covariates covariates;
  double linear_predictor = 0;
  double probability = 0;
  bool event = false;
  std::optional<Date> event_date;
};

struct GroundTruth {
  TrueModel coefficients{};
  std::vector<TruthRow> rows;

  void write_csv(const std::filesystem::path& path) const;
};

struct Generated {
  emr::Tables tables;
  GroundTruth truth;
};

/// Same config (including seed) gives identical output.
Generated generate(const GeneratorConfig& config);

/// Writes the eight EMR CSV files, ground_truth.csv and generator_config.json.
void write_generated(const Generated& g, const GeneratorConfig& config, const std::filesystem::path& dir);

/// Draws model covariates only (no EMR records), for Monte-Carlo work.
/// Columns: age, sex, bmi, leg_injury, osteoporosis, linear_predictor,
/// probability, outcome.
Dataset sample_population(const GeneratorConfig& config, std::size_t n, std::uint64_t seed);

}  // namespace framr::synth
