#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "framr/date.hpp"
#include "framr/emr_store.hpp"

namespace framr::rules {

using emr::SourceTable;

/// Subset of the three coded-record tables.
class SourceSet {
 public:
  constexpr SourceSet() = default;
  static SourceSet all_coded();
  static bool is_coded(SourceTable s);

  /// Throws std::invalid_argument if `s` is not a coded-record table.
  void insert(SourceTable s);
  bool contains(SourceTable s) const;
  bool empty() const { return bits_ == 0; }
  /// Canonical order: billing, health_condition, encounter_diagnosis.
  std::vector<SourceTable> members() const;

  bool operator==(const SourceSet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

struct RuleExpr;

/// ICD-9 roots low..high inclusive, e.g. 820-829.
struct CodeRange {
  int low = 0;
  int high = 0;
  SourceSet sources;
  bool operator==(const CodeRange&) const = default;
};

/// A single three-digit ICD-9 root such as "733".
struct CodeExact {
  std::string root;
  SourceSet sources;
  bool operator==(const CodeExact&) const = default;
};

/// Case-insensitive substring match against free-text entries of one table
/// (risk_factor terms or health_condition entries).
struct TermMatch {
  std::string text;
  SourceTable table = SourceTable::risk_factor;
  bool operator==(const TermMatch&) const = default;
};

/// Case-insensitive exact match on medication drug names.
struct MedicationAny {
  std::vector<std::string> names;
  bool operator==(const MedicationAny&) const = default;
};

struct AnyOf {
  std::vector<RuleExpr> children;
  bool operator==(const AnyOf&) const;
};

struct AllOf {
  std::vector<RuleExpr> children;
  bool operator==(const AllOf&) const;
};

struct Negation {
  std::shared_ptr<const RuleExpr> child;
  bool operator==(const Negation&) const;
};

struct RuleExpr {
  using Node = std::variant<CodeRange, CodeExact, TermMatch, MedicationAny, AnyOf, AllOf, Negation>;
  Node node;

  bool operator==(const RuleExpr& other) const { return node == other.node; }
  bool contains_negation() const;
};

struct DefinitionSpec {
  std::string name;
  RuleExpr expr;
  std::string description;
  bool operator==(const DefinitionSpec&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Parses a definition file. Grammar in docs/definitions.md. Contiguous `#`
/// comment lines directly above a `def` become its description.
std::vector<DefinitionSpec> parse_definitions(std::string_view text);

/// Canonical text form; parse_definitions(format(x)) == x.
std::string format(const RuleExpr& expr);
std::string format(const DefinitionSpec& def);
std::string format(const std::vector<DefinitionSpec>& defs);

/// Name -> definition lookup built from a parsed file.
class DefinitionSet {
 public:
  DefinitionSet() = default;
  explicit DefinitionSet(std::vector<DefinitionSpec> defs);

  bool contains(std::string_view name) const;
  /// Throws ConfigError for an unknown name.
  const DefinitionSpec& at(std::string_view name) const;
  const std::vector<DefinitionSpec>& all() const { return defs_; }

 private:
  std::vector<DefinitionSpec> defs_;
  std::map<std::string, std::size_t, std::less<>> by_name_;
};

/// Reference to the record that satisfied an atom.
struct RecordRef {
  SourceTable source = SourceTable::billing;
  std::size_t row = 0;
  Date date;
  auto operator<=>(const RecordRef&) const = default;
};

struct EvalResult {
  bool matched = false;
  std::optional<Date> first_match_date;
  std::vector<RecordRef> matching_records;  // sorted, unique
  std::size_t unparseable_codes = 0;        // coded records skipped for a bad root
};

/// Three-digit numeric root of an ICD-9 code ("733.0" -> 733). Roots that are
/// not exactly three ASCII digits ("0844", "V45", "12") yield nullopt.
std::optional<int> code_root(std::string_view code);

/// Evaluates `expr` for one patient over records dated inside `interval`.
/// For AllOf, first_match_date is the earliest date on which every child has
/// matched. Throws DataError for an unknown patient.
EvalResult evaluate(const RuleExpr& expr, const emr::EmrStore& store, std::string_view patient_id,
                    const Interval& interval);
EvalResult evaluate(const DefinitionSpec& def, const emr::EmrStore& store, std::string_view patient_id,
                    const Interval& interval);

/// Leg-injury and osteoporosis indicator definitions plus the placeholder outcome definition
/// and the chronic-condition definitions used as an imputation auxiliary.
std::string_view default_definitions_text();

}  // namespace framr::rules
