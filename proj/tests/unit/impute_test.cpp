#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include <doctest.h>

#include "framr/errors.hpp"
#include "framr/imputation.hpp"
#include "framr/kernels.hpp"
#include "framr/random.hpp"
#include "framr/synth.hpp"

using namespace framr;
namespace fs = std::filesystem;

namespace {

const double kNa = std::numeric_limits<double>::quiet_NaN();

// age, sex, bmi, leg_injury, osteoporosis, outcome with bmi and sex holes.
Dataset holed(std::size_t n, double bmi_missing, double sex_missing, std::uint64_t seed) {
  synth::GeneratorConfig g;
  const auto pop = synth::sample_population(g, n, seed);
  Dataset d(pop.row_ids());
  for (const char* name : {"age", "sex", "bmi", "leg_injury", "osteoporosis", "outcome"}) d.add_column(pop.column(name));
  Rng rng(seed + 1);
  for (std::size_t r = 0; r < n; ++r) {
    if (rng.bernoulli(bmi_missing)) d.column("bmi").values[r] = kNa;
    if (rng.bernoulli(sex_missing)) d.column("sex").values[r] = kNa;
  }
  return d;
}

impute::ImputationConfig small_config(std::uint64_t seed = 17) {
  impute::ImputationConfig c;
  c.m = 4;
  c.cycles = 3;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("method parsing") {
  CHECK(impute::Method::parse("pmm") == impute::Method{impute::MethodKind::pmm, 5});
  CHECK(impute::Method::parse("pmm(7)").donors == 7);
  CHECK(impute::Method::parse("normal_linear").kind == impute::MethodKind::normal_linear);
  CHECK(impute::Method::parse("pmm(3)").to_string() == "pmm(3)");
  CHECK_THROWS_AS(impute::Method::parse("pmm(0)"), ConfigError);
  CHECK_THROWS_AS(impute::Method::parse("pmm(x)"), ConfigError);
  CHECK_THROWS_AS(impute::Method::parse("mean"), ConfigError);
  CHECK(impute::default_method(VarType::binary).kind == impute::MethodKind::logistic);
  CHECK(impute::default_method(VarType::count).kind == impute::MethodKind::pmm);
}

TEST_CASE("config json round trip and validation") {
  auto c = small_config();
  c.variable_methods["bmi"] = impute::Method::parse("normal_linear");
  c.predictors["bmi"] = {"age", "outcome"};
  const auto back = impute::ImputationConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.m = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("nothing missing gives identical copies") {
  const auto d = holed(300, 0, 0, 1);
  const auto set = impute::impute(d, small_config());
  REQUIRE(set.m() == 4);
  for (const auto& c : set.copies) CHECK(c == d);
}

TEST_CASE("observed cells are untouched and imputed cells are filled") {
  const auto d = holed(800, 0.3, 0.1, 2);
  const auto set = impute::impute(d, small_config());
  CHECK(set.visit_order == std::vector<std::string>{"bmi", "sex"});
  CHECK(set.methods.at("bmi") == "pmm(5)");
  CHECK(set.methods.at("sex") == "logistic");
  std::set<double> observed_bmi;
  for (double v : d.column("bmi").values)
    if (!std::isnan(v)) observed_bmi.insert(v);
  for (const auto& copy : set.copies) {
    CHECK(copy.complete());
    for (std::size_t c = 0; c < d.cols(); ++c) {
      for (std::size_t r = 0; r < d.rows(); ++r) {
        const bool was_missing = d.column(c).missing(r);
        CHECK(static_cast<bool>(set.mask[c][r]) == was_missing);
        if (!was_missing) REQUIRE(copy.column(c).values[r] == d.column(c).values[r]);
      }
    }
    // PMM only ever donates observed values; logistic draws stay binary.
    for (std::size_t r = 0; r < d.rows(); ++r) {
      REQUIRE(observed_bmi.count(copy.column("bmi").values[r]) == 1);
      const double s = copy.column("sex").values[r];
      REQUIRE((s == 0.0 || s == 1.0));
    }
  }
  CHECK_FALSE(set.copies[0] == set.copies[1]);
}

TEST_CASE("normal_linear draws vary between copies around the regression") {
  const auto d = holed(600, 0.4, 0, 3);
  auto c = small_config();
  c.variable_methods["bmi"] = impute::Method::parse("normal_linear");
  const auto set = impute::impute(d, c);
  std::size_t differ = 0, cells = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    if (!d.column("bmi").missing(r)) continue;
    ++cells;
    differ += set.copies[0].column("bmi").values[r] != set.copies[1].column("bmi").values[r];
  }
  CHECK(cells > 0);
  CHECK(differ == cells);
}

TEST_CASE("results do not depend on thread count and survive a disk round trip") {
  const auto d = holed(500, 0.25, 0.05, 4);
  kernels::set_threads(1);
  const auto one = impute::impute(d, small_config(9));
  kernels::set_threads(4);
  const auto four = impute::impute(d, small_config(9));
  kernels::set_threads(0);
  REQUIRE(one.m() == four.m());
  for (int k = 0; k < one.m(); ++k) CHECK(one.copies[k] == four.copies[k]);
  CHECK(one.copy_seeds == four.copy_seeds);

  const auto dir = fs::temp_directory_path() / "framr_unit_imputed";
  fs::remove_all(dir);
  one.write(dir);
  CHECK(fs::exists(dir / "copy_01.csv"));
  CHECK(fs::exists(dir / "copy_04.csv"));
  const auto back = impute::ImputedSet::read(dir);
  REQUIRE(back.m() == one.m());
  for (int k = 0; k < one.m(); ++k) CHECK(back.copies[k] == one.copies[k]);
  CHECK(back.mask == one.mask);
  CHECK(back.manifest() == one.manifest());
  fs::remove_all(dir);

  CHECK_FALSE(impute::impute(d, small_config(10)).copies[0] == one.copies[0]);
}

TEST_CASE("a column with no observed values is a data error") {
  auto d = holed(100, 0, 0, 5);
  for (auto& v : d.column("bmi").values) v = kNa;
  CHECK_THROWS_AS(impute::impute(d, small_config()), DataError);
}

TEST_CASE("unknown predictor or method target is a config error") {
  const auto d = holed(100, 0.2, 0, 6);
  auto c = small_config();
  c.predictors["bmi"] = {"height"};
  CHECK_THROWS_AS(impute::impute(d, c), ConfigError);
  auto e = small_config();
  e.variable_methods["weight"] = impute::Method::parse("pmm");
  CHECK_THROWS_AS(impute::impute(d, e), ConfigError);
}

TEST_CASE("missingness simulation: rate zero is exact and error grows with deletion") {
  const auto d = holed(600, 0, 0, 7);
  impute::SimulationConfig s;
  s.rates = {0.0, 0.5};
  s.replications = 3;
  s.seed = 11;
  s.imputation = small_config();
  const auto rows = impute::missingness_simulation(d, "bmi", s);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].rmse == 0);
  CHECK(rows[0].bias == 0);
  CHECK(rows[0].deleted_fraction == 0);
  CHECK(rows[1].rmse > 0);
  CHECK(rows[1].deleted_fraction == doctest::Approx(0.5).epsilon(0.15));
  CHECK(impute::to_json(rows).size() == 2);

  const auto again = impute::missingness_simulation(d, "bmi", s);
  CHECK(again[1].rmse == rows[1].rmse);

  s.mechanism = impute::Mechanism::mar;
  CHECK_THROWS_AS(s.validate(), ConfigError);  // no covariate named
  s.mar_covariate = "age";
  CHECK(impute::missingness_simulation(d, "bmi", s)[1].rmse > 0);
  CHECK_THROWS_AS(impute::missingness_simulation(Dataset{}, "bmi", s), DataError);
}
