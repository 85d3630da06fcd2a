#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace framr {

enum class VarType { continuous, binary, count };

std::string_view to_string(VarType t);
VarType var_type_from_string(std::string_view s);

/// One analysis variable. NaN marks a missing cell.
struct Column {
  std::string name;
  VarType type = VarType::continuous;
  std::vector<double> values;

  bool missing(std::size_t row) const { return std::isnan(values[row]); }
  std::size_t missing_count() const;
};

/// Rectangular analysis table: one row per patient, named typed columns.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<std::string> row_ids) : row_ids_(std::move(row_ids)) {}

  std::size_t rows() const { return row_ids_.size(); }
  std::size_t cols() const { return columns_.size(); }

  const std::vector<std::string>& row_ids() const { return row_ids_; }

  /// Throws std::invalid_argument on a length mismatch or duplicate name.
  void add_column(Column c);

  bool has(std::string_view name) const;
  /// Throws ConfigError for an unknown name.
  std::size_t index_of(std::string_view name) const;
  const Column& column(std::size_t i) const { return columns_[i]; }
  Column& column(std::size_t i) { return columns_[i]; }
  const Column& column(std::string_view name) const { return columns_[index_of(name)]; }
  Column& column(std::string_view name) { return columns_[index_of(name)]; }
  const std::vector<Column>& columns() const { return columns_; }

  std::vector<std::string> names() const;

  /// True when no cell is missing.
  bool complete() const;

  Dataset select_rows(std::span<const std::size_t> rows) const;
  /// Row-wise concatenation; column names and types must agree.
  static Dataset concat(const Dataset& a, const Dataset& b);

  /// CSV with a leading `patient_id` column; missing cells are empty.
  void write_csv(const std::filesystem::path& path) const;
  /// `types` gives the VarType for each column after patient_id.
  static Dataset read_csv(const std::filesystem::path& path, const std::vector<VarType>& types);

  bool operator==(const Dataset& o) const;

 private:
  std::vector<std::string> row_ids_;
  std::vector<Column> columns_;
};

}  // namespace framr
