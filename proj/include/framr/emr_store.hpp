#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "framr/date.hpp"

namespace framr::emr {

enum class Sex { female, male };

/// Every dated table in the extract. Enumerator order is the lexicographic
/// order of the table names, which is the same-date tie-break in timelines.
enum class SourceTable {
  billing,
  encounter,
  encounter_diagnosis,
  health_condition,
  measurement,
  medication,
  risk_factor,
};

std::string_view to_string(SourceTable s);
std::optional<SourceTable> source_from_string(std::string_view s);
std::string_view to_string(Sex s);

struct PatientDemographics {
  std::string patient_id;
  std::optional<int> birth_year;
  std::optional<Sex> sex;
};

struct Encounter {
  std::string encounter_id;
  std::string patient_id;
  Date date;
};

/// Shared shape of the billing, health_condition and encounter_diagnosis tables.
struct CodedRecord {
  std::string patient_id;
  Date date;
  std::string code;
  SourceTable source = SourceTable::billing;
};

struct RiskFactorEntry {
  std::string patient_id;
  Date date;
  std::string term;
};

struct MedicationRecord {
  std::string patient_id;
  Date date;
  std::string drug_name;
};

inline constexpr std::string_view kBmi = "bmi";
inline constexpr std::string_view kSystolicBp = "systolic_bp";

/// `kind` is free text: "bmi" (kg/m^2), "systolic_bp" (mmHg) or any other label,
/// which is preserved as-is. `value` is empty when missing or blanked by a
/// plausibility rule.
struct Measurement {
  std::string patient_id;
  Date date;
  std::string kind;
  std::optional<double> value;
};

/// Raw tables as read from (or written to) the CSV extract, in file row order.
struct Tables {
  std::vector<PatientDemographics> patients;
  std::vector<Encounter> encounters;
  std::vector<CodedRecord> coded;  // all three coded sources
  std::vector<RiskFactorEntry> risk_factors;
  std::vector<MedicationRecord> medications;
  std::vector<Measurement> measurements;
};

/// Per-patient row indexes into Tables, each sorted by (date, key, row).
struct PatientIndex {
  std::size_t demographics = 0;
  std::vector<std::size_t> encounters;
  std::vector<std::size_t> coded;
  std::vector<std::size_t> risk_factors;
  std::vector<std::size_t> medications;
  std::vector<std::size_t> measurements;
};

/// File name -> ordered column list.
struct SchemaConfig {
  std::map<std::string, std::vector<std::string>> files;

  static SchemaConfig defaults();
  static SchemaConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// One entry in a patient's merged chronological view.
struct TimelineEntry {
  Date date;
  SourceTable source;
  std::string key;  // code, term, drug name, measurement kind or encounter id
  std::size_t row;  // index into the matching Tables vector
};

/// Immutable, validated and indexed view of an EMR extract.
class EmrStore {
 public:
  /// Validates referential integrity and builds per-patient indexes.
  /// Throws DataError.
  explicit EmrStore(Tables tables);

  const Tables& tables() const { return tables_; }

  bool has_patient(std::string_view patient_id) const;
  /// Throws DataError for an unknown id.
  const PatientIndex& patient(std::string_view patient_id) const;
  const PatientDemographics& demographics(std::string_view patient_id) const;
  /// Patient ids in ascending lexicographic order.
  const std::vector<std::string>& patient_ids() const { return sorted_ids_; }
  std::size_t patient_count() const { return tables_.patients.size(); }

  /// Row counts per CSV file name.
  std::map<std::string, std::size_t> row_counts() const;

  /// Latest date over every dated record, if any exist.
  std::optional<Date> latest_record_date() const;

  /// All dated records for one patient, ascending by date; same-date ties by
  /// (source table name, key).
  std::vector<TimelineEntry> patient_timeline(std::string_view patient_id) const;

 private:
  Tables tables_;
  std::unordered_map<std::string, PatientIndex> index_;
  std::vector<std::string> sorted_ids_;
};

/// Reads the eight CSV files in `dir` using `schema`. Throws DataError naming
/// file, line and column on malformed input.
EmrStore ingest(const std::filesystem::path& dir, const SchemaConfig& schema = SchemaConfig::defaults());

/// Writes the store back to CSV files (rows in original table order).
void write_tables(const Tables& tables, const std::filesystem::path& dir,
                  const SchemaConfig& schema = SchemaConfig::defaults());

}  // namespace framr::emr
