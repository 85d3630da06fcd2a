#include <cmath>
#include <fstream>
#include <numeric>

#include <doctest.h>

#include "framr/errors.hpp"
#include "framr/evaluation.hpp"
#include "framr/kernels.hpp"
#include "framr/modeling.hpp"
#include "framr/random.hpp"
#include "framr/synth.hpp"

using namespace framr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset toy(std::size_t n, std::uint64_t seed) {
  synth::GeneratorConfig g;
  return synth::sample_population(g, n, seed);
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

// ---------------------------------------------------------------------------
// kernels

TEST_CASE("kernels: OpenMP versions are thread-count invariant and match serial") {
  Rng rng(11);
  const Eigen::Index n = 3 * kernels::kRowBlock + 17, p = 6;
  MatrixXd x(n, p);
  VectorXd w(n), v(n), b(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    w(i) = rng.uniform();
    v(i) = rng.normal();
  }
  for (Eigen::Index j = 0; j < p; ++j) b(j) = rng.normal();
  // Block reduction changes summation order relative to serial, but never
  // with the thread count.
  kernels::set_threads(1);
  const MatrixXd g1 = kernels::omp::weighted_gram(x, w);
  const VectorXd c1 = kernels::omp::cross_product(x, v);
  for (int threads : {2, 3, 4}) {
    kernels::set_threads(threads);
    CHECK(kernels::omp::weighted_gram(x, w) == g1);
    CHECK(kernels::omp::cross_product(x, v) == c1);
    CHECK(kernels::omp::linear_predictor(x, b) == kernels::serial::linear_predictor(x, b));
  }
  CHECK(g1.isApprox(kernels::serial::weighted_gram(x, w), 1e-13));
  CHECK(c1.isApprox(kernels::serial::cross_product(x, v), 1e-13));
  CHECK(kernels::serial::weighted_gram(x, w).isApprox(x.transpose() * w.asDiagonal() * x, 1e-12));

  std::vector<double> donors(500), recipients(3000), cases(700), controls(4000);
  for (auto& d : donors) d = std::round(rng.normal() * 4) / 4;  // heavy ties
  std::sort(donors.begin(), donors.end());
  for (auto& r : recipients) r = std::round(rng.normal() * 4) / 4;
  for (auto& c : cases) c = std::round(rng.normal(0.5, 1) * 3) / 3;
  for (auto& c : controls) c = std::round(rng.normal() * 3) / 3;
  for (int threads : {1, 3}) {
    kernels::set_threads(threads);
    CHECK(kernels::omp::nearest_donors(donors, recipients, 5) == kernels::serial::nearest_donors(donors, recipients, 5));
    CHECK(kernels::omp::case_placements(cases, controls) == kernels::serial::case_placements(cases, controls));
  }
  kernels::set_threads(0);
}

TEST_CASE("kernels: nearest donors against brute force") {
  const std::vector<double> donors{1, 2, 2, 3, 7};
  const std::vector<double> recipients{2, 5, 0};
  const auto idx = kernels::serial::nearest_donors(donors, recipients, 2);
  REQUIRE(idx.size() == 6);
  auto dist = [&](std::size_t r, std::uint32_t i) { return std::abs(donors[i] - recipients[r]); };
  for (std::size_t r = 0; r < recipients.size(); ++r) {
    std::vector<double> all;
    for (std::uint32_t i = 0; i < donors.size(); ++i) all.push_back(std::abs(donors[i] - recipients[r]));
    std::sort(all.begin(), all.end());
    CHECK(dist(r, idx[2 * r]) == all[0]);
    CHECK(dist(r, idx[2 * r + 1]) == all[1]);
    CHECK(idx[2 * r] != idx[2 * r + 1]);
  }
}

// ---------------------------------------------------------------------------
// fitting

TEST_CASE("fit_logistic: two-by-two table has a closed form") {
  // Cells: x=0 -> 30 events / 70 non; x=1 -> 45 / 55.
  MatrixXd x(200, 2);
  VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    const bool exposed = i >= 100;
    const int k = exposed ? i - 100 : i;
    x(i, 0) = 1, x(i, 1) = exposed;
    y(i) = k < (exposed ? 45 : 30);
  }
  const auto f = model::fit_logistic(x, y);
  CHECK(f.beta(0) == doctest::Approx(logit(0.30)).epsilon(1e-9));
  CHECK(f.beta(1) == doctest::Approx(logit(0.45) - logit(0.30)).epsilon(1e-9));
  // Woolf variance of the log odds ratio.
  CHECK(f.cov(1, 1) == doctest::Approx(1.0 / 30 + 1.0 / 70 + 1.0 / 45 + 1.0 / 55).epsilon(1e-7));
  CHECK(f.gradient_norm < 1e-8);
  const VectorXd eta = x * f.beta;
  CHECK(f.deviance == doctest::Approx(-2 * model::log_likelihood(eta, y)));
}

TEST_CASE("fit_logistic: failure modes") {
  MatrixXd x(50, 3);
  VectorXd y(50);
  for (int i = 0; i < 50; ++i) {
    x(i, 0) = 1, x(i, 1) = i, x(i, 2) = 2.0 * i;
    y(i) = i % 3 == 0;
  }
  CHECK_THROWS_AS(model::fit_logistic(x, y), RankDeficientError);
  MatrixXd s(50, 2);
  for (int i = 0; i < 50; ++i) s(i, 0) = 1, s(i, 1) = i, y(i) = i >= 25;
  CHECK_THROWS_AS(model::fit_logistic(s, y), SeparationError);
  CHECK_THROWS_AS(model::fit_logistic(s.topRows(2), y.head(2)), RankDeficientError);
}

TEST_CASE("fit_penalized_logistic: penalized score vanishes and lambda shrinks") {
  const auto data = toy(3000, 5);
  model::ModelSpec spec;
  spec.name = "spl";
  spec.family = model::Family::additive_spline;
  const model::DesignTemplate design(spec, data);
  const MatrixXd x = design.build(data);
  const VectorXd y = model::outcome_vector(data);
  const MatrixXd s = design.penalty();
  double prev = INFINITY;
  for (double lambda : {0.1, 10.0, 1000.0}) {
    const auto f = model::fit_penalized_logistic(x, y, s, lambda);
    const VectorXd p = (1.0 + (-(x * f.beta).array()).exp()).inverse().matrix();
    const VectorXd score = x.transpose() * (y - p) - lambda * s * f.beta;
    CHECK(score.lpNorm<Eigen::Infinity>() < 1e-5);
    const double roughness = f.beta.dot(s * f.beta);
    CHECK(roughness < prev);
    prev = roughness;
  }
}

TEST_CASE("bspline basis: partition of unity and knot placement") {
  Rng rng(2);
  std::vector<double> v(1000);
  for (auto& x : v) x = rng.normal(30, 6);
  const auto knots = model::quantile_knots(v, 8);
  REQUIRE(knots.size() == 12);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(knots.front() - 5, knots.back() + 5);
    const auto b = model::bspline_basis(knots, x);
    REQUIRE(b.size() == 8);
    CHECK(std::accumulate(b.begin(), b.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double bi : b) CHECK(bi >= -1e-15);
  }
  CHECK_THROWS_AS(model::quantile_knots(std::vector<double>(100, 1.0), 8), NumericalError);
}

TEST_CASE("design template: json round trip and row scoring agree with matrix") {
  const auto data = toy(2000, 9);
  for (const auto& spec : model::default_candidates()) {
    CAPTURE(spec.name);
    const model::DesignTemplate design(spec, data);
    const auto back = model::DesignTemplate::from_json(design.to_json());
    CHECK(back == design);
    const MatrixXd x = design.build(data);
    std::map<std::string, double> rec;
    for (const auto& name : spec.predictors) rec[name] = data.column(name).values[17];
    CHECK((design.build_row(rec) - x.row(17)).norm() < 1e-12);
  }
}

// ---------------------------------------------------------------------------
// pooling

TEST_CASE("pool_rubin: hand computation") {
  model::ModelSpec spec;
  spec.name = "lin";
  spec.predictors = {"age"};
  Dataset ref({"a", "b", "c"});
  ref.add_column({"age", VarType::continuous, {1, 2, 3}});
  ref.add_column({"outcome", VarType::binary, {0, 1, 0}});
  const model::DesignTemplate design(spec, ref);
  std::vector<model::FittedModel> fits(3);
  const double b1[] = {1.0, 2.0, 4.0}, v1[] = {0.5, 0.7, 0.9};
  for (int k = 0; k < 3; ++k) {
    fits[k].names = design.names();
    fits[k].beta = VectorXd::Constant(2, b1[k]);
    fits[k].cov = MatrixXd::Identity(2, 2) * v1[k];
  }
  const auto pm = model::pool_rubin(design, fits, 100);
  const double qbar = 7.0 / 3, w = 0.7, b = ((1 - qbar) * (1 - qbar) + (2 - qbar) * (2 - qbar) + (4 - qbar) * (4 - qbar)) / 2;
  const double t = w + (1 + 1.0 / 3) * b;
  CHECK(pm.beta(1) == doctest::Approx(qbar));
  CHECK(pm.within(1) == doctest::Approx(w));
  CHECK(pm.between(1) == doctest::Approx(b));
  CHECK(pm.total(1) == doctest::Approx(t));
  // Barnard-Rubin.
  const double lam = (1 + 1.0 / 3) * b / t;
  const double nu_old = 2 / (lam * lam), nu_obs = (100 + 1.0) / (100 + 3.0) * 100 * (1 - lam);
  CHECK(pm.df(1) == doctest::Approx(nu_old * nu_obs / (nu_old + nu_obs)));
  CHECK(pm.df(1) <= 100);

  const auto single = model::pool_rubin(design, {fits[0]}, 100);
  CHECK(single.between(1) == 0);
  CHECK(single.total(1) == doctest::Approx(0.5));
}

TEST_CASE("bundled model scores by hand") {
  std::ifstream in(std::string(FRAMR_DATA_DIR) + "/published_model.json");
  const auto pm = model::PooledModel::from_json(nlohmann::json::parse(in));
  CHECK_FALSE(pm.has_variance);
  const std::map<std::string, double> zero{{"age", 0}, {"sex", 0}, {"bmi", 0}, {"leg_injury", 0}, {"osteoporosis", 0}};
  CHECK(pm.score(zero) == doctest::Approx(0.005016468428524052).epsilon(1e-12));
  const std::map<std::string, double> r{{"age", 70}, {"sex", 0}, {"bmi", 35}, {"leg_injury", 1}, {"osteoporosis", 1}};
  const double eta = -5.29 + 0.04 * 70 + 0.02 * 35 + 0.36 + 0.60;
  CHECK(pm.score(r) == doctest::Approx(1 / (1 + std::exp(-eta))).epsilon(1e-12));
  CHECK_THROWS_AS(pm.score({{"age", 70}}), DataError);
  CHECK(model::PooledModel::from_json(pm.to_json()).score(r) == pm.score(r));
  CHECK_THROWS_AS(model::PooledModel::from_json(nlohmann::json{{"beta", 1}}), ConfigError);
}

// ---------------------------------------------------------------------------
// evaluation

TEST_CASE("sample size: published example and frozen values") {
  const auto a = eval::sample_size_auc(0.55, 0.05, 0.80, 10);
  CHECK(std::labs(static_cast<long>(a.n_cases) - 274) <= 2);
  CHECK(std::labs(static_cast<long>(a.n_controls) - 2737) <= 20);
  CHECK(a.raw == doctest::Approx(274.362).epsilon(1e-5));
  CHECK(a.n_cases == 275);
  CHECK(a.n_controls == 2744);
  const auto b = eval::sample_size_auc(0.75, 0.05, 0.90, 1);
  CHECK(b.raw == doctest::Approx(27.3422).epsilon(1e-5));
  CHECK(b.n_cases == 28);
  CHECK(b.n_controls == 28);
  CHECK_THROWS_AS(eval::sample_size_auc(0.5, 0.05, 0.8, 1), ConfigError);
  CHECK_THROWS_AS(eval::sample_size_auc(0.7, 0.05, 1.0, 1), ConfigError);
}

TEST_CASE("sample size: monotone in effect, alpha and power") {
  for (double kappa : {0.5, 1.0, 10.0}) {
    double prev = INFINITY;
    for (double auc = 0.52; auc < 0.99; auc += 0.01) {
      const double raw = eval::sample_size_auc(auc, 0.05, 0.8, kappa).raw;
      CHECK(raw <= prev);
      prev = raw;
    }
    prev = INFINITY;
    for (double alpha = 0.001; alpha < 0.5; alpha += 0.01) {
      const double raw = eval::sample_size_auc(0.6, alpha, 0.8, kappa).raw;
      CHECK(raw <= prev);
      prev = raw;
    }
    prev = 0;
    for (double power = 0.5; power < 0.99; power += 0.01) {
      const double raw = eval::sample_size_auc(0.6, 0.05, power, kappa).raw;
      CHECK(raw >= prev);
      prev = raw;
    }
  }
}

TEST_CASE("partition: sizes, determinism, independence from data") {
  eval::PartitionSpec spec;
  spec.seed = 99;
  for (std::size_t n : {3u, 4u, 7u, 10u, 1001u}) {
    const auto s = eval::partition_sizes(n, spec);
    CHECK(s[0] + s[1] + s[2] == n);
    const auto labels = eval::partition(n, spec);
    CHECK(eval::rows_with(labels, eval::Part::train).size() == s[0]);
    CHECK(eval::rows_with(labels, eval::Part::validation).size() == s[2]);
    CHECK(labels == eval::partition(n, spec));
  }
  CHECK(eval::partition_sizes(10, spec) == std::array<std::size_t, 3>{5, 3, 2});
  CHECK_THROWS(eval::partition(2, spec));
  spec.seed = 100;
  CHECK(eval::partition(1001, spec) != eval::partition(1001, {0.5, 0.25, 0.25, 99}));
  CHECK_THROWS_AS((eval::PartitionSpec{0.5, 0.5, 0.1, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((eval::PartitionSpec{1.0, 0.0, 0.0, 1}.validate()), ConfigError);
}

TEST_CASE("auc: DeLong variance against a direct computation") {
  Rng rng(4);
  std::vector<double> cases(40), controls(90);
  for (auto& c : cases) c = std::round(rng.normal(0.8, 1) * 2) / 2;
  for (auto& c : controls) c = std::round(rng.normal() * 2) / 2;
  auto psi = [](double a, double b) { return a > b ? 1.0 : a == b ? 0.5 : 0.0; };
  const double n1 = 40, n0 = 90;
  std::vector<double> v10(40, 0), v01(90, 0);
  double a = 0;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 90; ++j) {
      const double s = psi(cases[i], controls[j]);
      v10[i] += s / n0, v01[j] += s / n1, a += s;
    }
  a /= n1 * n0;
  double s10 = 0, s01 = 0;
  for (double v : v10) s10 += (v - a) * (v - a) / (n1 - 1);
  for (double v : v01) s01 += (v - a) * (v - a) / (n0 - 1);
  const auto r = eval::auc(cases, controls);
  CHECK(r.auc == doctest::Approx(a).epsilon(1e-14));
  CHECK(r.variance == doctest::Approx(s10 / n1 + s01 / n0).epsilon(1e-12));
  CHECK(r.ci_low < r.auc);
  CHECK(r.ci_high > r.auc);
  CHECK(r.ci_high <= 1.0);
  CHECK(eval::auc({1.0}, {1.0}).auc == 0.5);
  CHECK_THROWS_AS(eval::auc({}, {1.0}), DataError);
}

TEST_CASE("roc: monotone staircase from origin to corner") {
  VectorXd s(6), y(6);
  s << 0.9, 0.8, 0.8, 0.3, 0.2, 0.1;
  y << 1, 1, 0, 1, 0, 0;
  const auto pts = eval::roc_points(s, y);
  CHECK(pts.front().fpr == 0);
  CHECK(pts.front().tpr == 0);
  CHECK(pts.back().fpr == 1);
  CHECK(pts.back().tpr == 1);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].fpr >= pts[i - 1].fpr);
    CHECK(pts[i].tpr >= pts[i - 1].tpr);
  }
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2;
  CHECK(area == doctest::Approx(eval::auc(s, y).auc));
}

TEST_CASE("calibration table and ECE") {
  VectorXd p(23), y(23);
  for (int i = 0; i < 23; ++i) p(i) = (i + 1) / 24.0, y(i) = i % 2;
  const auto t = eval::calibration_table(p, y);
  REQUIRE(t.size() == 10);
  std::size_t n = 0;
  for (const auto& row : t) n += row.n;
  CHECK(n == 23);
  CHECK(t[0].n == 3);
  CHECK(t[2].n == 3);
  CHECK(t[3].n == 2);
  CHECK(t[0].mean_pred == doctest::Approx(2.0 / 24));
  CHECK(t[0].obs_rate == doctest::Approx(1.0 / 3));
  double ece = 0;
  for (const auto& row : t) ece += row.n * std::abs(row.mean_pred - row.obs_rate) / 23.0;
  CHECK(eval::expected_calibration_error(t) == doctest::Approx(ece));
  CHECK_THROWS_AS(eval::calibration_table(p.head(5), y.head(5)), DataError);
}

TEST_CASE("hosmer-lemeshow: statistic and large-sample flag") {
  Rng rng(8);
  const int n = 400;
  VectorXd p(n), y(n);
  for (int i = 0; i < n; ++i) p(i) = rng.uniform(0.05, 0.6), y(i) = rng.bernoulli(p(i));
  const auto hl = eval::hosmer_lemeshow(p, y);
  const auto t = eval::calibration_table(p, y);
  double chi = 0;
  for (const auto& row : t) {
    const double e = row.n * row.mean_pred, o = row.n * row.obs_rate;
    chi += (o - e) * (o - e) / (e * (1 - row.mean_pred));
  }
  CHECK(hl.statistic == doctest::Approx(chi));
  CHECK(hl.dof == 8);
  CHECK(hl.p_value > 0);
  CHECK(hl.p_value < 1);
  CHECK_FALSE(hl.large_sample_warning);
  CHECK_THROWS_AS(eval::hosmer_lemeshow(VectorXd::Constant(50, 0.2), y.head(50)), DataError);
}

TEST_CASE("pool_scalar matches Rubin") {
  const auto r = eval::pool_scalar({0.70, 0.72, 0.74}, {1e-4, 2e-4, 3e-4});
  CHECK(r.mean == doctest::Approx(0.72));
  CHECK(r.within == doctest::Approx(2e-4));
  CHECK(r.between == doctest::Approx(4e-4));
  CHECK(r.total == doctest::Approx(2e-4 + 4.0 / 3 * 4e-4));
}

TEST_CASE("selection: every candidate is fitted and scored") {
  const auto data = toy(6000, 21);
  const auto labels = eval::partition(data.rows(), {0.5, 0.25, 0.25, 3});
  const auto tr = eval::rows_with(labels, eval::Part::train), dv = eval::rows_with(labels, eval::Part::dev);
  const auto sel = model::select_model(model::default_candidates(), {data.select_rows(tr)}, {data.select_rows(dv)});
  CHECK(sel.table.size() == 5);
  CHECK(sel.winner().ok);
  for (const auto& c : sel.table) {
    if (c.ok) CHECK(c.auc.mean > 0.6);
  }
}
