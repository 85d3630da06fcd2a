#include "framr/quality.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "framr/errors.hpp"

namespace framr::quality {

std::vector<PlausibilityRule> default_rules(int as_of_year) {
  return {
      {"bmi", 10.0, 100.0},
      {"birth_year", 1880.0, static_cast<double>(as_of_year)},
      {"systolic_bp", 50.0, 300.0},
  };
}

std::pair<emr::EmrStore, QualityReport> apply_plausibility(const emr::EmrStore& store,
                                                           const std::vector<PlausibilityRule>& rules) {
  std::set<std::string> kinds{std::string(emr::kBmi), std::string(emr::kSystolicBp)};
  for (const auto& m : store.tables().measurements) kinds.insert(m.kind);

  for (const auto& r : rules) {
    if (!(r.min <= r.max)) throw ConfigError("plausibility rule for '" + r.target + "' has min > max");
    if (r.target != "birth_year" && !kinds.contains(r.target)) {
      throw ConfigError("plausibility rule targets unknown variable '" + r.target + "'");
    }
  }

  emr::Tables t = store.tables();
  QualityReport report;
  auto outside = [](double v, const PlausibilityRule& r) { return v < r.min || v > r.max; };

  for (const auto& rule : rules) {
    RuleCount count{rule, 0};
    if (rule.target == "birth_year") {
      for (auto& p : t.patients) {
        if (p.birth_year && outside(*p.birth_year, rule)) {
          p.birth_year.reset();
          ++count.blanked;
        }
      }
    } else {
      for (auto& m : t.measurements) {
        if (m.kind == rule.target && m.value && outside(*m.value, rule)) {
          m.value.reset();
          ++count.blanked;
        }
      }
    }
    report.plausibility.push_back(count);
  }
  return {emr::EmrStore(std::move(t)), std::move(report)};
}

std::vector<ConcordanceFinding> concordance_report(const emr::EmrStore& store,
                                                   const std::vector<ConcordanceVariable>& variables,
                                                   std::vector<std::string>* skipped) {
  std::vector<ConcordanceFinding> findings;
  const auto& ms = store.tables().measurements;

  for (const auto& var : variables) {
    std::set<std::string> sources(var.sources.begin(), var.sources.end());
    if (sources.size() < 2) {
      if (skipped) skipped->push_back(var.variable);
      continue;
    }
    // Absence in one source is not a contradiction for event-style indicators.
    if (var.kind == VariableKind::event) continue;

    for (const auto& pid : store.patient_ids()) {
      const auto& ix = store.patient(pid);
      // measurement rows are date-sorted; group by date
      std::size_t i = 0;
      const auto& rows = ix.measurements;
      while (i < rows.size()) {
        std::size_t j = i;
        Date d = ms[rows[i]].date;
        std::vector<std::pair<std::string, double>> vals;
        while (j < rows.size() && ms[rows[j]].date == d) {
          const auto& m = ms[rows[j]];
          if (m.value && sources.contains(m.kind)) vals.emplace_back(m.kind, *m.value);
          ++j;
        }
        bool conflict = false;
        for (std::size_t a = 0; a < vals.size() && !conflict; ++a) {
          for (std::size_t b = a + 1; b < vals.size(); ++b) {
            if (vals[a].first != vals[b].first && std::abs(vals[a].second - vals[b].second) > var.tolerance) {
              conflict = true;
              break;
            }
          }
        }
        if (conflict) findings.push_back({var.variable, pid, d, std::move(vals)});
        i = j;
      }
    }
  }
  return findings;
}

CurrencyResult currency_check(const emr::EmrStore& store, Date as_of, int max_staleness_days) {
  auto latest = store.latest_record_date();
  if (!latest) throw DataError("currency check on a store without dated records");
  CurrencyResult r;
  r.latest_record = *latest;
  r.as_of = as_of;
  r.staleness_days = days_between(*latest, as_of);
  r.max_staleness_days = max_staleness_days;
  r.pass = r.staleness_days <= max_staleness_days;
  return r;
}

nlohmann::json QualityReport::to_json() const {
  nlohmann::json j;
  j["plausibility"] = nlohmann::json::array();
  for (const auto& c : plausibility) {
    j["plausibility"].push_back(
        {{"target", c.rule.target}, {"min", c.rule.min}, {"max", c.rule.max}, {"blanked", c.blanked}});
  }
  j["concordance"] = nlohmann::json::array();
  for (const auto& f : concordance) {
    nlohmann::json vals = nlohmann::json::array();
    for (const auto& [src, v] : f.values) vals.push_back({{"source", src}, {"value", v}});
    j["concordance"].push_back(
        {{"variable", f.variable}, {"patient_id", f.patient_id}, {"date", f.date.to_string()}, {"values", vals}});
  }
  j["concordance_skipped"] = concordance_skipped;
  if (currency) {
    j["currency"] = {{"pass", currency->pass},
                     {"latest_record", currency->latest_record.to_string()},
                     {"as_of", currency->as_of.to_string()},
                     {"staleness_days", currency->staleness_days},
                     {"max_staleness_days", currency->max_staleness_days}};
  }
  return j;
}

std::string QualityReport::to_text() const {
  std::ostringstream out;
  out << "Plausibility\n";
  for (const auto& c : plausibility) {
    out << "  " << c.rule.target << " outside [" << c.rule.min << ", " << c.rule.max << "]: " << c.blanked
        << " value(s) set to missing\n";
  }
  out << "Concordance\n";
  if (concordance.empty()) out << "  no disagreements found\n";
  for (const auto& f : concordance) {
    out << "  " << f.patient_id << " " << f.variable << " on " << f.date.to_string() << ":";
    for (const auto& [src, v] : f.values) out << " " << src << "=" << v;
    out << "  (review required)\n";
  }
  for (const auto& v : concordance_skipped) out << "  " << v << ": single source, not checked\n";
  if (currency) {
    out << "Currency\n  latest record " << currency->latest_record.to_string() << ", as of "
        << currency->as_of.to_string() << ": " << currency->staleness_days << " day(s) stale (limit "
        << currency->max_staleness_days << ") -> " << (currency->pass ? "PASS" : "FAIL") << "\n";
  }
  return out.str();
}

}  // namespace framr::quality
