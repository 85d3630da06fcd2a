#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace framr::csv {

/// One parsed data row with the 1-based line number it started on.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

struct Table {
  std::string source;  // file name used in error messages
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column index by header name, or throws DataError.
  std::size_t column(std::string_view name) const;
};

/// RFC 4180 style: comma separated, double-quote quoting, LF or CRLF line ends.
Table parse(std::string_view text, std::string source_name);
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest round-trip decimal representation.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

/// Parse helpers; empty string means missing. Throw DataError with `where` context.
std::optional<double> parse_optional_double(std::string_view s, std::string_view where);
std::optional<long long> parse_optional_int(std::string_view s, std::string_view where);

}  // namespace framr::csv
