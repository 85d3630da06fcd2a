#include "framr/date.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "framr/errors.hpp"

namespace framr {

namespace {

using std::chrono::sys_days;
using std::chrono::year_month_day;

year_month_day to_ymd(std::int32_t days) {
  return year_month_day{sys_days{std::chrono::days{days}}};
}

bool parse_digits(std::string_view s, int& out) {
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

Date Date::from_ymd(int y, unsigned m, unsigned d) {
  year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) {
    throw DataError("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                    std::to_string(d));
  }
  return from_days(static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count()));
}

std::optional<Date> Date::try_parse(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_digits(text.substr(0, 4), y) || !parse_digits(text.substr(5, 2), m) ||
      !parse_digits(text.substr(8, 2), d)) {
    return std::nullopt;
  }
  year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)}, std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return from_days(static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count()));
}

Date Date::parse(std::string_view text) {
  auto d = try_parse(text);
  if (!d) throw DataError("unparseable date '" + std::string(text) + "' (expected YYYY-MM-DD)");
  return *d;
}

int Date::year() const { return static_cast<int>(to_ymd(days_).year()); }
unsigned Date::month() const { return static_cast<unsigned>(to_ymd(days_).month()); }
unsigned Date::day() const { return static_cast<unsigned>(to_ymd(days_).day()); }

Date Date::plus_years(int n) const {
  auto ymd = to_ymd(days_);
  year_month_day shifted{ymd.year() + std::chrono::years{n}, ymd.month(), ymd.day()};
  if (!shifted.ok()) {
    // Only Feb 29 -> non-leap year can land here.
    shifted = year_month_day{shifted.year(), shifted.month(), std::chrono::day{28}};
  }
  return from_days(static_cast<std::int32_t>(sys_days{shifted}.time_since_epoch().count()));
}

std::string Date::to_string() const {
  auto ymd = to_ymd(days_);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

}  // namespace framr
