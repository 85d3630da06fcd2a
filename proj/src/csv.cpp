#include "framr/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "framr/errors.hpp"

namespace framr::csv {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(source + ": missing column '" + std::string(name) + "'");
}

Table parse(std::string_view text, std::string source_name) {
  Table table;
  table.source = std::move(source_name);

  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> lines;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;

  auto end_record = [&] {
    fields.push_back(std::move(field));
    field.clear();
    // Skip completely blank lines.
    if (!(fields.size() == 1 && fields[0].empty() && !field_started)) {
      records.push_back(std::move(fields));
      lines.push_back(record_line);
    }
    fields.clear();
    field_started = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) {
          throw DataError(table.source + ":" + std::to_string(line) + ": stray quote inside field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw DataError(table.source + ": unterminated quoted field");
  if (field_started || !field.empty() || !fields.empty()) end_record();

  if (records.empty()) throw DataError(table.source + ": empty file (no header row)");
  table.header = std::move(records.front());
  if (!table.header.empty() && table.header[0].starts_with("\xEF\xBB\xBF")) {
    table.header[0].erase(0, 3);
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw DataError(table.source + ":" + std::to_string(lines[r]) + ": expected " +
                      std::to_string(table.header.size()) + " fields, found " +
                      std::to_string(records[r].size()));
    }
    table.rows.push_back(Row{lines[r], std::move(records[r])});
  }
  return table;
}

Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.filename().string());
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_optional_double(std::string_view s, std::string_view where) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(std::string(where) + ": not a finite number '" + std::string(s) + "'");
  }
  return v;
}

std::optional<long long> parse_optional_int(std::string_view s, std::string_view where) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(std::string(where) + ": not an integer '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace framr::csv
