#include "framr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "framr/csv.hpp"
#include "framr/errors.hpp"

namespace framr {

std::string_view to_string(VarType t) {
  switch (t) {
    case VarType::continuous: return "continuous";
    case VarType::binary: return "binary";
    case VarType::count: return "count";
  }
  return "continuous";
}

VarType var_type_from_string(std::string_view s) {
  if (s == "continuous") return VarType::continuous;
  if (s == "binary") return VarType::binary;
  if (s == "count") return VarType::count;
  throw ConfigError("unknown variable type '" + std::string(s) + "'");
}

std::size_t Column::missing_count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }));
}

void Dataset::add_column(Column c) {
  if (c.values.size() != rows()) {
    throw std::invalid_argument("column '" + c.name + "' has " + std::to_string(c.values.size()) +
                                " values, dataset has " + std::to_string(rows()) + " rows");
  }
  if (has(c.name)) throw std::invalid_argument("duplicate column '" + c.name + "'");
  columns_.push_back(std::move(c));
}

bool Dataset::has(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
}

std::size_t Dataset::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  throw ConfigError("dataset has no variable '" + std::string(name) + "'");
}

std::vector<std::string> Dataset::names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

bool Dataset::complete() const {
  return std::all_of(columns_.begin(), columns_.end(), [](const Column& c) { return c.missing_count() == 0; });
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(row_ids_.at(r));
  Dataset out(std::move(ids));
  for (const auto& c : columns_) {
    Column sub{c.name, c.type, {}};
    sub.values.reserve(rows.size());
    for (auto r : rows) sub.values.push_back(c.values[r]);
    out.columns_.push_back(std::move(sub));
  }
  return out;
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat: column count mismatch");
  std::vector<std::string> ids = a.row_ids_;
  ids.insert(ids.end(), b.row_ids_.begin(), b.row_ids_.end());
  Dataset out(std::move(ids));
  for (std::size_t i = 0; i < a.cols(); ++i) {
    const auto& ca = a.columns_[i];
    const auto& cb = b.columns_[i];
    if (ca.name != cb.name || ca.type != cb.type) throw std::invalid_argument("concat: column mismatch at " + ca.name);
    Column c{ca.name, ca.type, ca.values};
    c.values.insert(c.values.end(), cb.values.begin(), cb.values.end());
    out.columns_.push_back(std::move(c));
  }
  return out;
}

void Dataset::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<std::string> fields{"patient_id"};
  for (const auto& c : columns_) fields.push_back(c.name);
  csv::write_row(out, fields);
  for (std::size_t r = 0; r < rows(); ++r) {
    fields.assign(1, row_ids_[r]);
    for (const auto& c : columns_) fields.push_back(c.missing(r) ? std::string() : csv::format_double(c.values[r]));
    csv::write_row(out, fields);
  }
}

Dataset Dataset::read_csv(const std::filesystem::path& path, const std::vector<VarType>& types) {
  auto table = csv::read_file(path);
  if (table.header.empty() || table.header[0] != "patient_id") {
    throw DataError(table.source + ": first column must be patient_id");
  }
  if (table.header.size() != types.size() + 1) {
    throw DataError(table.source + ": expected " + std::to_string(types.size()) + " variable columns");
  }
  std::vector<std::string> ids;
  for (const auto& row : table.rows) ids.push_back(row.fields[0]);
  Dataset out(std::move(ids));
  for (std::size_t c = 1; c < table.header.size(); ++c) {
    Column col{table.header[c], types[c - 1], {}};
    for (const auto& row : table.rows) {
      auto v = csv::parse_optional_double(row.fields[c],
                                          table.source + ":" + std::to_string(row.line) + ":" + std::to_string(c + 1));
      col.values.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
    }
    out.add_column(std::move(col));
  }
  return out;
}

bool Dataset::operator==(const Dataset& o) const {
  if (row_ids_ != o.row_ids_ || columns_.size() != o.columns_.size()) return false;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& a = columns_[i];
    const auto& b = o.columns_[i];
    if (a.name != b.name || a.type != b.type) return false;
    for (std::size_t r = 0; r < a.values.size(); ++r) {
      bool am = std::isnan(a.values[r]), bm = std::isnan(b.values[r]);
      if (am != bm || (!am && a.values[r] != b.values[r])) return false;
    }
  }
  return true;
}

}  // namespace framr
