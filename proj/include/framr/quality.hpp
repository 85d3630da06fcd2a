#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "framr/date.hpp"
#include "framr/emr_store.hpp"

namespace framr::quality {

/// Values strictly outside [min, max] are implausible and get blanked.
/// `target` is "birth_year" or a measurement kind ("bmi", "systolic_bp", ...).
struct PlausibilityRule {
  std::string target;
  double min = 0;
  double max = 0;
};

/// BMI (10, 100) kg/m^2, birth_year [1880, as_of_year], SBP (50, 300) mmHg.
std::vector<PlausibilityRule> default_rules(int as_of_year);

struct RuleCount {
  PlausibilityRule rule;
  std::size_t blanked = 0;
};

/// Two same-date values for one variable from different sources that differ
/// by more than the variable's tolerance.
struct ConcordanceFinding {
  std::string variable;
  std::string patient_id;
  Date date;
  std::vector<std::pair<std::string, double>> values;  // (source kind, value)
};

enum class VariableKind { continuous, event };

/// Data elements that record the same risk indicator. For continuous
/// variables `sources` are measurement kinds; for event-style indicators
/// presence in one source and absence in another is never a conflict.
struct ConcordanceVariable {
  std::string variable;
  VariableKind kind = VariableKind::continuous;
  std::vector<std::string> sources;
  double tolerance = 5.0;
};

struct CurrencyResult {
  bool pass = false;
  Date latest_record;
  Date as_of;
  int staleness_days = 0;
  int max_staleness_days = 0;
};

struct QualityReport {
  std::vector<RuleCount> plausibility;
  std::vector<ConcordanceFinding> concordance;
  std::vector<std::string> concordance_skipped;  // variables with fewer than two sources
  std::optional<CurrencyResult> currency;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Blanks implausible values. Throws ConfigError for an unknown target or
/// min > max. Idempotent.
std::pair<emr::EmrStore, QualityReport> apply_plausibility(const emr::EmrStore& store,
                                                           const std::vector<PlausibilityRule>& rules);

/// Findings are for human review; nothing is resolved automatically.
std::vector<ConcordanceFinding> concordance_report(const emr::EmrStore& store,
                                                   const std::vector<ConcordanceVariable>& variables,
                                                   std::vector<std::string>* skipped = nullptr);

/// Pass iff (as_of - latest record date) <= max_staleness_days. Throws
/// DataError for a store without dated records.
CurrencyResult currency_check(const emr::EmrStore& store, Date as_of, int max_staleness_days);

}  // namespace framr::quality
