#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace framr {

/// Calendar date stored as days since 1970-01-01 (proleptic Gregorian).
class Date {
 public:
  constexpr Date() = default;

  static constexpr Date from_days(std::int32_t days) {
    Date d;
    d.days_ = days;
    return d;
  }
  /// Throws DataError on an invalid calendar date.
  static Date from_ymd(int year, unsigned month, unsigned day);
  /// Strict YYYY-MM-DD. Throws DataError.
  static Date parse(std::string_view text);
  static std::optional<Date> try_parse(std::string_view text);

  constexpr std::int32_t days() const { return days_; }
  int year() const;
  unsigned month() const;
  unsigned day() const;

  Date plus_days(std::int32_t n) const { return from_days(days_ + n); }
  /// Same month/day `n` years later; Feb 29 clamps to Feb 28.
  Date plus_years(int n) const;

  std::string to_string() const;

  constexpr auto operator<=>(const Date&) const = default;

 private:
  std::int32_t days_ = 0;
};

inline std::int32_t days_between(Date from, Date to) { return to.days() - from.days(); }

/// Date interval `(after, through]`; an absent bound is unbounded.
struct Interval {
  std::optional<Date> after;
  std::optional<Date> through;

  static Interval all() { return {}; }
  static Interval as_of(Date d) { return {std::nullopt, d}; }
  static Interval between(Date after_exclusive, Date through_inclusive) {
    return {after_exclusive, through_inclusive};
  }

  bool contains(Date d) const {
    return (!after || d > *after) && (!through || d <= *through);
  }
};

}  // namespace framr
