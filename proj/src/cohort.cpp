#include "framr/cohort.hpp"

#include <exception>
#include <fstream>
#include <limits>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "framr/csv.hpp"
#include "framr/errors.hpp"

namespace framr::cohort {

using rules::evaluate;

void CohortConfig::validate() const {
  if (window_start > window_end) throw ConfigError("cohort window_start is after window_end");
  if (followup_years < 1) throw ConfigError("cohort followup_years must be >= 1");
  if (outcome_def.empty()) throw ConfigError("cohort outcome_def is empty");
}

CohortConfig CohortConfig::from_json(const nlohmann::json& j) {
  CohortConfig c;
  if (j.contains("window_start")) c.window_start = Date::parse(j.at("window_start").get<std::string>());
  if (j.contains("window_end")) c.window_end = Date::parse(j.at("window_end").get<std::string>());
  c.followup_years = j.value("followup_years", c.followup_years);
  c.outcome_def = j.value("outcome_def", c.outcome_def);
  c.indicator_defs = j.value("indicator_defs", c.indicator_defs);
  c.chronic_defs = j.value("chronic_defs", c.chronic_defs);
  c.require_confirmation_for_cases = j.value("require_confirmation_for_cases", c.require_confirmation_for_cases);
  if (j.contains("index_visit_policy") && j.at("index_visit_policy") != "earliest_in_window") {
    throw ConfigError("index_visit_policy must be earliest_in_window");
  }
  c.bmi_kind = j.value("bmi_kind", c.bmi_kind);
  c.sbp_kind = j.value("sbp_kind", c.sbp_kind);
  c.validate();
  return c;
}

nlohmann::json CohortConfig::to_json() const {
  return {{"window_start", window_start.to_string()},
          {"window_end", window_end.to_string()},
          {"followup_years", followup_years},
          {"outcome_def", outcome_def},
          {"indicator_defs", indicator_defs},
          {"chronic_defs", chronic_defs},
          {"require_confirmation_for_cases", require_confirmation_for_cases},
          {"index_visit_policy", "earliest_in_window"},
          {"bmi_kind", bmi_kind},
          {"sbp_kind", sbp_kind}};
}

std::string_view to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::no_index_visit: return "no_index_visit";
    case ExclusionReason::prior_outcome: return "prior_outcome";
    case ExclusionReason::no_confirmation_visit: return "no_confirmation_visit";
    case ExclusionReason::outcome_at_confirmation: return "outcome_at_confirmation";
  }
  return "";
}

nlohmann::json ExclusionTally::to_json() const {
  return {{"total_patients", total},
          {"excluded",
           {{"no_index_visit", no_index_visit},
            {"prior_outcome", prior_outcome},
            {"no_confirmation_visit", no_confirmation_visit},
            {"outcome_at_confirmation", outcome_at_confirmation}}},
          {"included", included},
          {"cases", cases},
          {"non_cases", non_cases},
          {"late_outcome_non_cases", late_outcome_non_cases}};
}

std::optional<int> age_at_index(std::optional<int> birth_year, Date index_date) {
  if (!birth_year) return std::nullopt;
  return index_date.year() - *birth_year;
}

std::optional<double> measurement_at_index(const emr::EmrStore& store, std::string_view patient_id,
                                           std::string_view kind, Date index_date) {
  const auto& ms = store.tables().measurements;
  const auto& rows = store.patient(patient_id).measurements;

  // Mean of the values on a given date; rows are date-sorted.
  struct Point {
    Date date;
    double value;
  };
  std::vector<Point> points;
  for (std::size_t k = 0; k < rows.size();) {
    Date d = ms[rows[k]].date;
    double sum = 0;
    int n = 0;
    for (; k < rows.size() && ms[rows[k]].date == d; ++k) {
      const auto& m = ms[rows[k]];
      if (m.kind == kind && m.value) {
        sum += *m.value;
        ++n;
      }
    }
    if (n > 0) points.push_back({d, sum / n});
  }

  const Point* before = nullptr;
  const Point* after = nullptr;
  for (const auto& p : points) {
    if (p.date == index_date) return p.value;
    if (p.date < index_date) before = &p;
    if (p.date > index_date && !after) after = &p;
  }
  if (before && after) {
    double span = days_between(before->date, after->date);
    double t = days_between(before->date, index_date) / span;
    return before->value + t * (after->value - before->value);
  }
  if (before) return before->value;
  if (after) return after->value;
  return std::nullopt;
}

int chronic_disease_count(const emr::EmrStore& store, std::string_view patient_id, Date index_date,
                          const rules::DefinitionSet& definitions, const std::vector<std::string>& chronic_defs) {
  int n = 0;
  for (const auto& name : chronic_defs) {
    if (evaluate(definitions.at(name), store, patient_id, Interval::as_of(index_date)).matched) ++n;
  }
  return n;
}

namespace {

CohortRow build_row(const emr::EmrStore& store, const rules::DefinitionSet& defs, const CohortConfig& cfg,
                    const std::string& pid) {
  CohortRow row;
  row.patient_id = pid;
  const auto& ix = store.patient(pid);
  const auto& encounters = store.tables().encounters;

  // (a) index visit: earliest encounter inside the window
  for (auto i : ix.encounters) {
    Date d = encounters[i].date;
    if (d >= cfg.window_start && d <= cfg.window_end) {
      row.index_date = d;
      break;
    }
  }
  if (!row.index_date) {
    row.exclusion = ExclusionReason::no_index_visit;
    return row;
  }
  const Date index = *row.index_date;
  const Date followup_end = index.plus_years(cfg.followup_years);
  const auto& outcome = defs.at(cfg.outcome_def);

  // (b) prior outcome
  if (evaluate(outcome, store, pid, Interval::as_of(index)).matched) {
    row.exclusion = ExclusionReason::prior_outcome;
    return row;
  }

  // (c) first outcome match after index
  auto post = evaluate(outcome, store, pid, Interval{index, std::nullopt});
  const auto first_post = post.first_match_date;
  const bool in_followup = first_post && *first_post <= followup_end;

  // (d) confirmation visit: first encounter strictly after follow-up
  for (auto i : ix.encounters) {
    if (encounters[i].date > followup_end) {
      row.confirmation_date = encounters[i].date;
      break;
    }
  }
  if (!row.confirmation_date) {
    if (cfg.require_confirmation_for_cases || !in_followup) {
      row.exclusion = ExclusionReason::no_confirmation_visit;
      return row;
    }
  } else if (!in_followup && first_post && *first_post == *row.confirmation_date) {
    // (e) diagnosed at the confirmation visit itself
    row.exclusion = ExclusionReason::outcome_at_confirmation;
    return row;
  }

  row.outcome = in_followup;
  if (in_followup) row.outcome_date = first_post;
  row.late_outcome = !in_followup && first_post && row.confirmation_date && *first_post < *row.confirmation_date;

  // (f) baseline assessment as of the index visit
  const auto& demo = store.demographics(pid);
  row.age_at_index = age_at_index(demo.birth_year, index);
  row.sex = demo.sex;
  row.bmi_at_index = measurement_at_index(store, pid, cfg.bmi_kind, index);
  row.systolic_bp = measurement_at_index(store, pid, cfg.sbp_kind, index);
  for (const auto& name : cfg.indicator_defs) {
    row.indicators.push_back(evaluate(defs.at(name), store, pid, Interval::as_of(index)).matched);
  }
  row.chronic_disease_count = chronic_disease_count(store, pid, index, defs, cfg.chronic_defs);
  return row;
}

}  // namespace

Cohort build_cohort(const emr::EmrStore& store, const rules::DefinitionSet& definitions, const CohortConfig& config) {
  config.validate();
  const auto& outcome = definitions.at(config.outcome_def);
  if (outcome.expr.contains_negation()) {
    throw ConfigError("outcome definition '" + config.outcome_def + "' must not use negation");
  }
  for (const auto& n : config.indicator_defs) definitions.at(n);
  for (const auto& n : config.chronic_defs) definitions.at(n);

  const auto& ids = store.patient_ids();
  Cohort cohort;
  cohort.config = config;
  cohort.rows.resize(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());

  const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      cohort.rows[i] = build_row(store, definitions, config, ids[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw DataError("cohort construction failed for patient " + ids[i] + ": " + e.what());
    }
  }

  auto& t = cohort.tally;
  t.total = cohort.rows.size();
  for (const auto& r : cohort.rows) {
    if (r.exclusion) {
      switch (*r.exclusion) {
        case ExclusionReason::no_index_visit: ++t.no_index_visit; break;
        case ExclusionReason::prior_outcome: ++t.prior_outcome; break;
        case ExclusionReason::no_confirmation_visit: ++t.no_confirmation_visit; break;
        case ExclusionReason::outcome_at_confirmation: ++t.outcome_at_confirmation; break;
      }
      continue;
    }
    ++t.included;
    if (r.outcome) {
      ++t.cases;
    } else {
      ++t.non_cases;
      if (r.late_outcome) ++t.late_outcome_non_cases;
    }
  }
  if (t.late_outcome_non_cases > 0) {
    spdlog::warn("{} non-case(s) have an outcome match between the end of follow-up and the confirmation visit",
                 t.late_outcome_non_cases);
  }
  return cohort;
}

Dataset Cohort::analysis_dataset() const {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> ids;
  std::vector<const CohortRow*> in;
  for (const auto& r : rows) {
    if (r.included()) {
      ids.push_back(r.patient_id);
      in.push_back(&r);
    }
  }
  Dataset d(std::move(ids));
  auto column = [&](std::string name, VarType type, auto get) {
    Column c{std::move(name), type, {}};
    c.values.reserve(in.size());
    for (const auto* r : in) c.values.push_back(get(*r));
    d.add_column(std::move(c));
  };
  column("age", VarType::continuous, [&](const CohortRow& r) { return r.age_at_index ? *r.age_at_index : nan; });
  column("sex", VarType::binary,
         [&](const CohortRow& r) { return r.sex ? (*r.sex == emr::Sex::female ? 1.0 : 0.0) : nan; });
  column("bmi", VarType::continuous, [&](const CohortRow& r) { return r.bmi_at_index.value_or(nan); });
  for (std::size_t k = 0; k < config.indicator_defs.size(); ++k) {
    column(config.indicator_defs[k], VarType::binary,
           [&](const CohortRow& r) { return r.indicators.at(k) ? 1.0 : 0.0; });
  }
  column("systolic_bp", VarType::continuous, [&](const CohortRow& r) { return r.systolic_bp.value_or(nan); });
  column("chronic_disease_count", VarType::count, [&](const CohortRow& r) {
    return r.chronic_disease_count ? static_cast<double>(*r.chronic_disease_count) : nan;
  });
  column("outcome", VarType::binary, [&](const CohortRow& r) { return r.outcome ? 1.0 : 0.0; });
  return d;
}

void Cohort::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<std::string> header{"patient_id", "index_date", "age", "sex", "bmi"};
  for (const auto& n : config.indicator_defs) header.push_back(n);
  for (const char* h : {"systolic_bp", "chronic_disease_count", "outcome", "outcome_date", "confirmation_date",
                        "exclusion_reason", "late_outcome"}) {
    header.emplace_back(h);
  }
  csv::write_row(out, header);
  auto date = [](const std::optional<Date>& d) { return d ? d->to_string() : std::string(); };
  for (const auto& r : rows) {
    std::vector<std::string> f{r.patient_id, date(r.index_date),
                               r.age_at_index ? std::to_string(*r.age_at_index) : "",
                               r.sex ? std::string(emr::to_string(*r.sex)) : "", csv::format_optional(r.bmi_at_index)};
    for (std::size_t k = 0; k < config.indicator_defs.size(); ++k) {
      f.push_back(r.included() ? (r.indicators.at(k) ? "1" : "0") : "");
    }
    f.push_back(csv::format_optional(r.systolic_bp));
    f.push_back(r.chronic_disease_count ? std::to_string(*r.chronic_disease_count) : "");
    f.push_back(r.included() ? (r.outcome ? "1" : "0") : "");
    f.push_back(date(r.outcome_date));
    f.push_back(date(r.confirmation_date));
    f.push_back(r.exclusion ? std::string(to_string(*r.exclusion)) : "");
    f.push_back(r.late_outcome ? "1" : "0");
    csv::write_row(out, f);
  }
}

Cohort Cohort::read_csv(const std::filesystem::path& path, const CohortConfig& config) {
  auto t = csv::read_file(path);
  Cohort c;
  c.config = config;
  auto col = [&](std::string_view n) { return t.column(n); };
  const auto c_id = col("patient_id"), c_idx = col("index_date"), c_age = col("age"), c_sex = col("sex"),
             c_bmi = col("bmi"), c_sbp = col("systolic_bp"), c_cdc = col("chronic_disease_count"),
             c_out = col("outcome"), c_od = col("outcome_date"), c_cd = col("confirmation_date"),
             c_ex = col("exclusion_reason"), c_late = col("late_outcome");
  std::vector<std::size_t> c_ind;
  for (const auto& n : config.indicator_defs) c_ind.push_back(col(n));

  for (const auto& row : t.rows) {
    auto at = [&](std::size_t k) -> const std::string& { return row.fields[k]; };
    auto w = [&](std::size_t k) { return t.source + ":" + std::to_string(row.line) + ":" + std::to_string(k + 1); };
    auto date = [&](std::size_t k) -> std::optional<Date> {
      if (at(k).empty()) return std::nullopt;
      auto d = Date::try_parse(at(k));
      if (!d) throw DataError(w(k) + ": unparseable date '" + at(k) + "'");
      return d;
    };
    CohortRow r;
    r.patient_id = at(c_id);
    r.index_date = date(c_idx);
    if (auto a = csv::parse_optional_int(at(c_age), w(c_age))) r.age_at_index = static_cast<int>(*a);
    if (at(c_sex) == "female") r.sex = emr::Sex::female;
    if (at(c_sex) == "male") r.sex = emr::Sex::male;
    r.bmi_at_index = csv::parse_optional_double(at(c_bmi), w(c_bmi));
    r.systolic_bp = csv::parse_optional_double(at(c_sbp), w(c_sbp));
    if (auto n = csv::parse_optional_int(at(c_cdc), w(c_cdc))) r.chronic_disease_count = static_cast<int>(*n);
    r.outcome = at(c_out) == "1";
    r.outcome_date = date(c_od);
    r.confirmation_date = date(c_cd);
    for (auto reason : {ExclusionReason::no_index_visit, ExclusionReason::prior_outcome,
                        ExclusionReason::no_confirmation_visit, ExclusionReason::outcome_at_confirmation}) {
      if (at(c_ex) == to_string(reason)) r.exclusion = reason;
    }
    if (!at(c_ex).empty() && !r.exclusion) throw DataError(w(c_ex) + ": unknown exclusion reason");
    r.late_outcome = at(c_late) == "1";
    for (auto k : c_ind) r.indicators.push_back(at(k) == "1");
    c.rows.push_back(std::move(r));
  }

  auto& tl = c.tally;
  tl.total = c.rows.size();
  for (const auto& r : c.rows) {
    if (!r.exclusion) {
      ++tl.included;
      r.outcome ? ++tl.cases : ++tl.non_cases;
      if (!r.outcome && r.late_outcome) ++tl.late_outcome_non_cases;
      continue;
    }
    switch (*r.exclusion) {
      case ExclusionReason::no_index_visit: ++tl.no_index_visit; break;
      case ExclusionReason::prior_outcome: ++tl.prior_outcome; break;
      case ExclusionReason::no_confirmation_visit: ++tl.no_confirmation_visit; break;
      case ExclusionReason::outcome_at_confirmation: ++tl.outcome_at_confirmation; break;
    }
  }
  return c;
}

}  // namespace framr::cohort
