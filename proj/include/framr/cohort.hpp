#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framr/dataset.hpp"
#include "framr/date.hpp"
#include "framr/definitions.hpp"
#include "framr/emr_store.hpp"

namespace framr::cohort {

enum class IndexVisitPolicy { earliest_in_window };

struct CohortConfig {
  Date window_start = Date::from_ymd(2008, 1, 1);
  Date window_end = Date::from_ymd(2009, 12, 31);
  int followup_years = 5;
  std::string outcome_def = "osteoarthritis";
  std::vector<std::string> indicator_defs{"leg_injury", "osteoporosis"};
  std::vector<std::string> chronic_defs{"diabetes", "hypertension", "copd", "heart_failure", "depression"};
  /// When false, only non-cases need a visit after follow-up.
  bool require_confirmation_for_cases = true;
  IndexVisitPolicy index_visit_policy = IndexVisitPolicy::earliest_in_window;
  std::string bmi_kind = "bmi";
  std::string sbp_kind = "systolic_bp";

  /// Throws ConfigError.
  void validate() const;
  static CohortConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

enum class ExclusionReason { no_index_visit, prior_outcome, no_confirmation_visit, outcome_at_confirmation };

std::string_view to_string(ExclusionReason r);

struct CohortRow {
  std::string patient_id;
  std::optional<Date> index_date;
  std::optional<int> age_at_index;
  std::optional<emr::Sex> sex;
  std::optional<double> bmi_at_index;
  std::vector<bool> indicators;  // parallel to CohortConfig::indicator_defs
  std::optional<double> systolic_bp;
  std::optional<int> chronic_disease_count;
  bool outcome = false;
  std::optional<Date> outcome_date;
  std::optional<Date> confirmation_date;
  std::optional<ExclusionReason> exclusion;
  /// Non-case whose first outcome match falls after follow-up but before the
  /// confirmation visit.
  bool late_outcome = false;

  bool included() const { return !exclusion.has_value(); }
};

struct ExclusionTally {
  std::size_t total = 0;
  std::size_t no_index_visit = 0;
  std::size_t prior_outcome = 0;
  std::size_t no_confirmation_visit = 0;
  std::size_t outcome_at_confirmation = 0;
  std::size_t included = 0;
  std::size_t cases = 0;
  std::size_t non_cases = 0;
  std::size_t late_outcome_non_cases = 0;

  nlohmann::json to_json() const;
};

struct Cohort {
  CohortConfig config;
  std::vector<CohortRow> rows;  // every patient, ascending patient_id
  ExclusionTally tally;

  /// Included rows as an analysis table with columns age, sex (female = 1),
  /// bmi, <indicators>, systolic_bp, chronic_disease_count, outcome.
  Dataset analysis_dataset() const;

  void write_csv(const std::filesystem::path& path) const;
  static Cohort read_csv(const std::filesystem::path& path, const CohortConfig& config);
};

/// Builds the retrospective cohort. Per-patient work runs in parallel;
/// output order is fixed by patient_id.
Cohort build_cohort(const emr::EmrStore& store, const rules::DefinitionSet& definitions, const CohortConfig& config);

/// Measurement of `kind` at `index_date`: exact-date value (mean of same-date
/// values), else linear interpolation between the nearest values strictly
/// before and after, else the nearest one-sided value, else missing.
std::optional<double> measurement_at_index(const emr::EmrStore& store, std::string_view patient_id,
                                           std::string_view kind, Date index_date);

inline std::optional<double> bmi_at_index(const emr::EmrStore& store, std::string_view patient_id, Date index_date) {
  return measurement_at_index(store, patient_id, emr::kBmi, index_date);
}

/// index_date.year - birth_year.
std::optional<int> age_at_index(std::optional<int> birth_year, Date index_date);

/// Number of `chronic_defs` that match as of index_date.
int chronic_disease_count(const emr::EmrStore& store, std::string_view patient_id, Date index_date,
                          const rules::DefinitionSet& definitions, const std::vector<std::string>& chronic_defs);

}  // namespace framr::cohort
