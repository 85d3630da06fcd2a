#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include <doctest.h>

#include "framr/csv.hpp"
#include "framr/dataset.hpp"
#include "framr/date.hpp"
#include "framr/errors.hpp"
#include "framr/random.hpp"
#include "framr/seed.hpp"

using namespace framr;
namespace fs = std::filesystem;

TEST_CASE("date: civil round trip over years 0001-9999") {
  for (std::int32_t d = -719162; d <= 2932896; d += 997) {
    const auto x = Date::from_days(d);
    CHECK(Date::from_ymd(x.year(), x.month(), x.day()) == x);
    CHECK(Date::parse(x.to_string()) == x);
  }
  CHECK(Date::from_ymd(1970, 1, 1).days() == 0);
  CHECK(Date::from_ymd(2000, 3, 1).days() - Date::from_ymd(2000, 2, 28).days() == 2);
  CHECK(Date::from_ymd(1900, 3, 1).days() - Date::from_ymd(1900, 2, 28).days() == 1);
}

TEST_CASE("date: strict parsing") {
  CHECK_THROWS_AS(Date::parse("2009-02-29"), DataError);
  CHECK_THROWS_AS(Date::parse("2009-2-01"), DataError);
  CHECK_THROWS_AS(Date::parse("2009-13-01"), DataError);
  CHECK_THROWS_AS(Date::parse("20090101"), DataError);
  CHECK_THROWS_AS(Date::parse(" 2009-01-01"), DataError);
  CHECK_FALSE(Date::try_parse("").has_value());
  CHECK(Date::parse("2008-02-29").to_string() == "2008-02-29");
}

TEST_CASE("date: plus_years clamps leap day") {
  CHECK(Date::parse("2008-02-29").plus_years(5) == Date::parse("2013-02-28"));
  CHECK(Date::parse("2008-02-29").plus_years(4) == Date::parse("2012-02-29"));
  CHECK(Date::parse("2009-12-31").plus_years(5) == Date::parse("2014-12-31"));
}

TEST_CASE("interval is half-open on the left") {
  const auto a = Date::parse("2010-01-01"), b = Date::parse("2010-12-31");
  const auto iv = Interval::between(a, b);
  CHECK_FALSE(iv.contains(a));
  CHECK(iv.contains(a.plus_days(1)));
  CHECK(iv.contains(b));
  CHECK_FALSE(iv.contains(b.plus_days(1)));
  CHECK(Interval::all().contains(Date::from_days(-100000)));
}

TEST_CASE("csv: quoting, CRLF and embedded newlines") {
  const auto t = csv::parse("a,b,c\r\n1,\"x,y\",\"he said \"\"hi\"\"\"\r\n2,\"two\nlines\",\n", "t.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].fields[1] == "x,y");
  CHECK(t.rows[0].fields[2] == "he said \"hi\"");
  CHECK(t.rows[1].fields[1] == "two\nlines");
  CHECK(t.rows[1].fields[2].empty());
  CHECK(t.rows[1].line == 3);
  CHECK(t.column("c") == 2);
  CHECK_THROWS_AS(t.column("d"), DataError);
}

TEST_CASE("csv: ragged row and unterminated quote are data errors") {
  CHECK_THROWS_AS(csv::parse("a,b\n1,2,3\n", "t.csv"), DataError);
  CHECK_THROWS_AS(csv::parse("a,b\n1,\"open\n", "t.csv"), DataError);
}

TEST_CASE("csv: escape round trips through parse") {
  for (std::string s : {"plain", "com,ma", "q\"uote", "new\nline", " padded "}) {
    const auto t = csv::parse("h\n" + csv::escape(s) + "\n", "t");
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].fields[0] == s);
  }
}

TEST_CASE("csv: shortest double formatting round trips") {
  CHECK(csv::format_double(29.4) == "29.4");
  CHECK(csv::format_double(1.0) == "1");
  CHECK(csv::format_double(0.1 + 0.2) == "0.30000000000000004");
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-10, 10));
    CHECK(std::stod(csv::format_double(v)) == v);
  }
  CHECK(csv::format_optional(std::nullopt).empty());
  CHECK_FALSE(csv::parse_optional_double("", "x").has_value());
  CHECK_THROWS_AS(csv::parse_optional_double("1.5kg", "x"), DataError);
  CHECK_THROWS_AS(csv::parse_optional_int("1.5", "x"), DataError);
}

TEST_CASE("seed derivation: deterministic and distinct") {
  static_assert(derive_seed(1, "impute") == derive_seed(1, "impute"));
  std::set<std::uint64_t> seen;
  for (const char* tag : {"generate", "impute", "partition", "simulate", "simulate-impute"})
    seen.insert(derive_seed(20160121, tag));
  for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(20160121, i));
  CHECK(seen.size() == 105);
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("rng: draws are reproducible and roughly calibrated") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

  Rng r(7);
  const int n = 200000;
  double s = 0, s2 = 0, chi = 0, below = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z, s2 += z * z;
    chi += r.chi_square(4);
    below += static_cast<double>(r.below(10));
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(0.01));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(chi / n == doctest::Approx(4.0).epsilon(0.02));
  CHECK(below / n == doctest::Approx(4.5).epsilon(0.01));
}

TEST_CASE("dataset: csv round trip keeps missing cells and types") {
  Dataset d({"p1", "p2", "p3"});
  const double na = std::numeric_limits<double>::quiet_NaN();
  d.add_column({"x", VarType::continuous, {1.25, na, -3}});
  d.add_column({"flag", VarType::binary, {1, 0, na}});
  CHECK_THROWS_AS(d.add_column({"x", VarType::continuous, {1, 2, 3}}), std::invalid_argument);
  CHECK_THROWS_AS(d.add_column({"y", VarType::continuous, {1, 2}}), std::invalid_argument);
  CHECK(d.column("x").missing_count() == 1);
  CHECK_FALSE(d.complete());

  const auto path = fs::temp_directory_path() / "framr_dataset_rt.csv";
  d.write_csv(path);
  const auto back = Dataset::read_csv(path, {VarType::continuous, VarType::binary});
  CHECK(back == d);
  fs::remove(path);

  const std::size_t rows[] = {2, 0};
  const auto sub = d.select_rows(rows);
  CHECK(sub.row_ids() == std::vector<std::string>{"p3", "p1"});
  CHECK(Dataset::concat(d, sub).rows() == 5);
}
