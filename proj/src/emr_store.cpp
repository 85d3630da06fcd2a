#include "framr/emr_store.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <tuple>

#include <json.hpp>

#include "framr/csv.hpp"
#include "framr/errors.hpp"

namespace framr::emr {

namespace {

constexpr std::array<std::string_view, 7> kSourceNames = {
    "billing",     "encounter",  "encounter_diagnosis", "health_condition",
    "measurement", "medication", "risk_factor"};

struct FileSpec {
  std::string_view file;
  std::vector<std::string> columns;
};

const std::vector<FileSpec>& default_files() {
  static const std::vector<FileSpec> files = {
      {"patients.csv", {"patient_id", "birth_year", "sex"}},
      {"encounters.csv", {"encounter_id", "patient_id", "encounter_date"}},
      {"billing.csv", {"patient_id", "record_date", "code"}},
      {"health_condition.csv", {"patient_id", "record_date", "code"}},
      {"encounter_diagnosis.csv", {"patient_id", "record_date", "code"}},
      {"risk_factor.csv", {"patient_id", "record_date", "term"}},
      {"medication.csv", {"patient_id", "record_date", "drug_name"}},
      {"measurement.csv", {"patient_id", "record_date", "kind", "value"}},
  };
  return files;
}

std::string where(const csv::Table& t, const csv::Row& row, std::size_t col) {
  return t.source + ":" + std::to_string(row.line) + ":" + std::to_string(col + 1);
}

Date parse_date_field(const csv::Table& t, const csv::Row& row, std::size_t col) {
  auto d = Date::try_parse(row.fields[col]);
  if (!d) {
    throw DataError(where(t, row, col) + ": unparseable date '" + row.fields[col] + "'");
  }
  return *d;
}

const std::string& require_nonempty(const csv::Table& t, const csv::Row& row, std::size_t col) {
  const auto& f = row.fields[col];
  if (f.empty()) throw DataError(where(t, row, col) + ": required field '" + t.header[col] + "' is empty");
  return f;
}

csv::Table load(const std::filesystem::path& dir, const SchemaConfig& schema, const std::string& file) {
  auto path = dir / file;
  if (!std::filesystem::exists(path)) throw DataError("missing file " + path.string());
  auto table = csv::read_file(path);
  auto it = schema.files.find(file);
  if (it == schema.files.end()) throw ConfigError("schema has no entry for " + file);
  if (table.header != it->second) {
    std::string expected;
    for (const auto& c : it->second) expected += (expected.empty() ? "" : ",") + c;
    throw DataError(file + ":1: header does not match schema (expected " + expected + ")");
  }
  return table;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

template <typename Rows, typename KeyFn>
void sort_index(std::vector<std::size_t>& idx, const Rows& rows, KeyFn key) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::forward_as_tuple(rows[a].date, key(rows[a]), a) <
           std::forward_as_tuple(rows[b].date, key(rows[b]), b);
  });
}

}  // namespace

std::string_view to_string(SourceTable s) { return kSourceNames[static_cast<std::size_t>(s)]; }

std::optional<SourceTable> source_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == s) return static_cast<SourceTable>(i);
  }
  return std::nullopt;
}

std::string_view to_string(Sex s) { return s == Sex::female ? "female" : "male"; }

SchemaConfig SchemaConfig::defaults() {
  SchemaConfig s;
  for (const auto& f : default_files()) s.files[std::string(f.file)] = f.columns;
  return s;
}

SchemaConfig SchemaConfig::from_json(const nlohmann::json& j) {
  SchemaConfig s = defaults();
  for (const auto& [file, cols] : j.items()) {
    if (!s.files.contains(file)) throw ConfigError("schema: unknown file '" + file + "'");
    s.files[file] = cols.get<std::vector<std::string>>();
  }
  // Every file must still provide the columns the reader needs.
  for (const auto& f : default_files()) {
    const auto& cols = s.files[std::string(f.file)];
    for (const auto& needed : f.columns) {
      if (std::find(cols.begin(), cols.end(), needed) == cols.end()) {
        throw ConfigError("schema: " + std::string(f.file) + " lacks required column '" + needed + "'");
      }
    }
  }
  return s;
}

nlohmann::json SchemaConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [file, cols] : files) j[file] = cols;
  return j;
}

EmrStore::EmrStore(Tables tables) : tables_(std::move(tables)) {
  for (std::size_t i = 0; i < tables_.patients.size(); ++i) {
    const auto& p = tables_.patients[i];
    if (p.patient_id.empty()) throw DataError("patients: empty patient_id at row " + std::to_string(i + 1));
    auto [it, inserted] = index_.try_emplace(p.patient_id);
    if (!inserted) throw DataError("patients: duplicate patient_id '" + p.patient_id + "'");
    it->second.demographics = i;
    sorted_ids_.push_back(p.patient_id);
  }
  std::sort(sorted_ids_.begin(), sorted_ids_.end());

  auto lookup = [&](const std::string& id, std::string_view table, std::size_t row) -> PatientIndex& {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw DataError(std::string(table) + ": row " + std::to_string(row + 1) +
                      " references unknown patient_id '" + id + "'");
    }
    return it->second;
  };

  for (std::size_t i = 0; i < tables_.encounters.size(); ++i) {
    lookup(tables_.encounters[i].patient_id, "encounters", i).encounters.push_back(i);
  }
  for (std::size_t i = 0; i < tables_.coded.size(); ++i) {
    const auto& r = tables_.coded[i];
    if (r.code.empty()) throw DataError(std::string(to_string(r.source)) + ": empty code");
    lookup(r.patient_id, to_string(r.source), i).coded.push_back(i);
  }
  for (std::size_t i = 0; i < tables_.risk_factors.size(); ++i) {
    lookup(tables_.risk_factors[i].patient_id, "risk_factor", i).risk_factors.push_back(i);
  }
  for (std::size_t i = 0; i < tables_.medications.size(); ++i) {
    lookup(tables_.medications[i].patient_id, "medication", i).medications.push_back(i);
  }
  for (std::size_t i = 0; i < tables_.measurements.size(); ++i) {
    lookup(tables_.measurements[i].patient_id, "measurement", i).measurements.push_back(i);
  }

  for (auto& [id, ix] : index_) {
    sort_index(ix.encounters, tables_.encounters, [](const Encounter& e) -> const std::string& {
      return e.encounter_id;
    });
    std::sort(ix.coded.begin(), ix.coded.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = tables_.coded[a];
      const auto& y = tables_.coded[b];
      return std::tie(x.date, x.source, x.code, a) < std::tie(y.date, y.source, y.code, b);
    });
    sort_index(ix.risk_factors, tables_.risk_factors,
               [](const RiskFactorEntry& e) -> const std::string& { return e.term; });
    sort_index(ix.medications, tables_.medications,
               [](const MedicationRecord& e) -> const std::string& { return e.drug_name; });
    sort_index(ix.measurements, tables_.measurements,
               [](const Measurement& e) -> const std::string& { return e.kind; });
  }
}

bool EmrStore::has_patient(std::string_view patient_id) const {
  return index_.contains(std::string(patient_id));
}

const PatientIndex& EmrStore::patient(std::string_view patient_id) const {
  auto it = index_.find(std::string(patient_id));
  if (it == index_.end()) throw DataError("unknown patient_id '" + std::string(patient_id) + "'");
  return it->second;
}

const PatientDemographics& EmrStore::demographics(std::string_view patient_id) const {
  return tables_.patients[patient(patient_id).demographics];
}

std::map<std::string, std::size_t> EmrStore::row_counts() const {
  std::map<std::string, std::size_t> counts;
  counts["patients.csv"] = tables_.patients.size();
  counts["encounters.csv"] = tables_.encounters.size();
  counts["billing.csv"] = 0;
  counts["health_condition.csv"] = 0;
  counts["encounter_diagnosis.csv"] = 0;
  for (const auto& r : tables_.coded) ++counts[std::string(to_string(r.source)) + ".csv"];
  counts["risk_factor.csv"] = tables_.risk_factors.size();
  counts["medication.csv"] = tables_.medications.size();
  counts["measurement.csv"] = tables_.measurements.size();
  return counts;
}

std::optional<Date> EmrStore::latest_record_date() const {
  std::optional<Date> latest;
  auto see = [&](Date d) {
    if (!latest || d > *latest) latest = d;
  };
  for (const auto& r : tables_.encounters) see(r.date);
  for (const auto& r : tables_.coded) see(r.date);
  for (const auto& r : tables_.risk_factors) see(r.date);
  for (const auto& r : tables_.medications) see(r.date);
  for (const auto& r : tables_.measurements) see(r.date);
  return latest;
}

std::vector<TimelineEntry> EmrStore::patient_timeline(std::string_view patient_id) const {
  const auto& ix = patient(patient_id);
  std::vector<TimelineEntry> out;
  for (auto i : ix.encounters) {
    out.push_back({tables_.encounters[i].date, SourceTable::encounter, tables_.encounters[i].encounter_id, i});
  }
  for (auto i : ix.coded) out.push_back({tables_.coded[i].date, tables_.coded[i].source, tables_.coded[i].code, i});
  for (auto i : ix.risk_factors) {
    out.push_back({tables_.risk_factors[i].date, SourceTable::risk_factor, tables_.risk_factors[i].term, i});
  }
  for (auto i : ix.medications) {
    out.push_back({tables_.medications[i].date, SourceTable::medication, tables_.medications[i].drug_name, i});
  }
  for (auto i : ix.measurements) {
    out.push_back({tables_.measurements[i].date, SourceTable::measurement, tables_.measurements[i].kind, i});
  }
  std::sort(out.begin(), out.end(), [](const TimelineEntry& a, const TimelineEntry& b) {
    return std::tie(a.date, a.source, a.key, a.row) < std::tie(b.date, b.source, b.key, b.row);
  });
  return out;
}

EmrStore ingest(const std::filesystem::path& dir, const SchemaConfig& schema) {
  Tables t;

  {
    auto tab = load(dir, schema, "patients.csv");
    auto c_id = tab.column("patient_id"), c_by = tab.column("birth_year"), c_sex = tab.column("sex");
    for (const auto& row : tab.rows) {
      PatientDemographics p;
      p.patient_id = require_nonempty(tab, row, c_id);
      auto by = csv::parse_optional_int(row.fields[c_by], where(tab, row, c_by));
      if (by) p.birth_year = static_cast<int>(*by);
      const auto& sex = row.fields[c_sex];
      if (sex == "female") {
        p.sex = Sex::female;
      } else if (sex == "male") {
        p.sex = Sex::male;
      } else if (!sex.empty()) {
        throw DataError(where(tab, row, c_sex) + ": sex must be 'female', 'male' or empty, got '" + sex + "'");
      }
      t.patients.push_back(std::move(p));
    }
  }
  {
    auto tab = load(dir, schema, "encounters.csv");
    auto c_eid = tab.column("encounter_id"), c_id = tab.column("patient_id"), c_d = tab.column("encounter_date");
    for (const auto& row : tab.rows) {
      t.encounters.push_back({require_nonempty(tab, row, c_eid), require_nonempty(tab, row, c_id),
                              parse_date_field(tab, row, c_d)});
    }
  }
  for (auto source : {SourceTable::billing, SourceTable::health_condition, SourceTable::encounter_diagnosis}) {
    auto tab = load(dir, schema, std::string(to_string(source)) + ".csv");
    auto c_id = tab.column("patient_id"), c_d = tab.column("record_date"), c_code = tab.column("code");
    for (const auto& row : tab.rows) {
      t.coded.push_back({require_nonempty(tab, row, c_id), parse_date_field(tab, row, c_d),
                         require_nonempty(tab, row, c_code), source});
    }
  }
  {
    auto tab = load(dir, schema, "risk_factor.csv");
    auto c_id = tab.column("patient_id"), c_d = tab.column("record_date"), c_term = tab.column("term");
    for (const auto& row : tab.rows) {
      if (trim(row.fields[c_term]).empty()) {
        throw DataError(where(tab, row, c_term) + ": term is empty");
      }
      t.risk_factors.push_back({require_nonempty(tab, row, c_id), parse_date_field(tab, row, c_d), row.fields[c_term]});
    }
  }
  {
    auto tab = load(dir, schema, "medication.csv");
    auto c_id = tab.column("patient_id"), c_d = tab.column("record_date"), c_drug = tab.column("drug_name");
    for (const auto& row : tab.rows) {
      t.medications.push_back({require_nonempty(tab, row, c_id), parse_date_field(tab, row, c_d),
                               require_nonempty(tab, row, c_drug)});
    }
  }
  {
    auto tab = load(dir, schema, "measurement.csv");
    auto c_id = tab.column("patient_id"), c_d = tab.column("record_date"), c_kind = tab.column("kind"),
         c_val = tab.column("value");
    for (const auto& row : tab.rows) {
      t.measurements.push_back({require_nonempty(tab, row, c_id), parse_date_field(tab, row, c_d),
                                require_nonempty(tab, row, c_kind),
                                csv::parse_optional_double(row.fields[c_val], where(tab, row, c_val))});
    }
  }

  return EmrStore(std::move(t));
}

void write_tables(const Tables& t, const std::filesystem::path& dir, const SchemaConfig& schema) {
  std::filesystem::create_directories(dir);

  // Each writer maps a column name to its field text for one row.
  auto write = [&](const std::string& file, std::size_t n, auto field_of) {
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / file).string());
    const auto& cols = schema.files.at(file);
    csv::write_row(out, cols);
    std::vector<std::string> fields(cols.size());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < cols.size(); ++c) fields[c] = field_of(i, cols[c]);
      csv::write_row(out, fields);
    }
  };

  write("patients.csv", t.patients.size(), [&](std::size_t i, const std::string& col) -> std::string {
    const auto& p = t.patients[i];
    if (col == "patient_id") return p.patient_id;
    if (col == "birth_year") return p.birth_year ? std::to_string(*p.birth_year) : "";
    if (col == "sex") return p.sex ? std::string(to_string(*p.sex)) : "";
    return "";
  });
  write("encounters.csv", t.encounters.size(), [&](std::size_t i, const std::string& col) -> std::string {
    const auto& e = t.encounters[i];
    if (col == "encounter_id") return e.encounter_id;
    if (col == "patient_id") return e.patient_id;
    if (col == "encounter_date") return e.date.to_string();
    return "";
  });
  for (auto source : {SourceTable::billing, SourceTable::health_condition, SourceTable::encounter_diagnosis}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < t.coded.size(); ++i) {
      if (t.coded[i].source == source) rows.push_back(i);
    }
    write(std::string(to_string(source)) + ".csv", rows.size(),
          [&](std::size_t i, const std::string& col) -> std::string {
            const auto& r = t.coded[rows[i]];
            if (col == "patient_id") return r.patient_id;
            if (col == "record_date") return r.date.to_string();
            if (col == "code") return r.code;
            return "";
          });
  }
  write("risk_factor.csv", t.risk_factors.size(), [&](std::size_t i, const std::string& col) -> std::string {
    const auto& r = t.risk_factors[i];
    if (col == "patient_id") return r.patient_id;
    if (col == "record_date") return r.date.to_string();
    if (col == "term") return r.term;
    return "";
  });
  write("medication.csv", t.medications.size(), [&](std::size_t i, const std::string& col) -> std::string {
    const auto& r = t.medications[i];
    if (col == "patient_id") return r.patient_id;
    if (col == "record_date") return r.date.to_string();
    if (col == "drug_name") return r.drug_name;
    return "";
  });
  write("measurement.csv", t.measurements.size(), [&](std::size_t i, const std::string& col) -> std::string {
    const auto& r = t.measurements[i];
    if (col == "patient_id") return r.patient_id;
    if (col == "record_date") return r.date.to_string();
    if (col == "kind") return r.kind;
    if (col == "value") return csv::format_optional(r.value);
    return "";
  });
}

}  // namespace framr::emr
