#include "framr/imputation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

#include "framr/csv.hpp"
#include "framr/errors.hpp"
#include "framr/kernels.hpp"
#include "framr/modeling.hpp"
#include "framr/random.hpp"
#include "framr/seed.hpp"

namespace framr::impute {

Method Method::parse(std::string_view text) {
  if (text == "normal_linear") return {MethodKind::normal_linear, 0};
  if (text == "logistic") return {MethodKind::logistic, 0};
  if (text == "pmm") return {MethodKind::pmm, 5};
  if (text.starts_with("pmm(") && text.ends_with(")")) {
    const auto inner = text.substr(4, text.size() - 5);
    int k = 0;
    auto [ptr, ec] = std::from_chars(inner.data(), inner.data() + inner.size(), k);
    if (ec == std::errc{} && ptr == inner.data() + inner.size() && k >= 1) return {MethodKind::pmm, k};
  }
  throw ConfigError("unknown imputation method '" + std::string(text) + "'");
}

std::string Method::to_string() const {
  switch (kind) {
    case MethodKind::pmm: return "pmm(" + std::to_string(donors) + ")";
    case MethodKind::normal_linear: return "normal_linear";
    case MethodKind::logistic: return "logistic";
  }
  return "";
}

Method default_method(VarType type) {
  return type == VarType::binary ? Method{MethodKind::logistic, 0} : Method{MethodKind::pmm, 5};
}

void ImputationConfig::validate() const {
  if (m < 2) throw ConfigError("imputation m must be >= 2");
  if (cycles < 1) throw ConfigError("imputation cycles must be >= 1");
  if (!(ridge >= 0)) throw ConfigError("imputation ridge must be >= 0");
  for (const auto& [v, method] : variable_methods) {
    if (method.kind == MethodKind::pmm && method.donors < 1) throw ConfigError("pmm needs k >= 1 for " + v);
  }
}

ImputationConfig ImputationConfig::from_json(const nlohmann::json& j) {
  ImputationConfig c;
  try {
    c.m = j.value("m", c.m);
    c.cycles = j.value("cycles", c.cycles);
    c.seed = j.value("seed", c.seed);
    c.ridge = j.value("ridge", c.ridge);
    if (j.contains("variable_methods")) {
      for (const auto& [k, v] : j.at("variable_methods").items()) c.variable_methods[k] = Method::parse(v.get<std::string>());
    }
    if (j.contains("predictors")) {
      c.predictors = j.at("predictors").get<std::map<std::string, std::vector<std::string>>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("imputation config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json ImputationConfig::to_json() const {
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [k, v] : variable_methods) methods[k] = v.to_string();
  return {{"m", m}, {"cycles", cycles}, {"seed", seed}, {"ridge", ridge}, {"variable_methods", methods},
          {"predictors", predictors}};
}

// ---------------------------------------------------------------------------

namespace {

struct Plan {
  std::vector<std::size_t> order;                   // columns to impute, visit order
  std::map<std::size_t, Method> method;             // per imputed column
  std::map<std::size_t, std::vector<std::size_t>> predictors;
  std::vector<std::vector<std::size_t>> missing;    // per column: missing rows
  std::vector<std::vector<std::size_t>> observed;   // per column: observed rows
};

Plan make_plan(const Dataset& data, const ImputationConfig& cfg) {
  for (const auto& [v, _] : cfg.variable_methods) data.index_of(v);
  for (const auto& [v, ps] : cfg.predictors) {
    data.index_of(v);
    for (const auto& p : ps) {
      if (p == v) throw ConfigError("variable '" + v + "' cannot predict itself");
      data.index_of(p);
    }
  }
  Plan plan;
  const std::size_t nc = data.cols();
  plan.missing.resize(nc);
  plan.observed.resize(nc);
  std::vector<std::size_t> incomplete;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& col = data.column(c);
    for (std::size_t r = 0; r < data.rows(); ++r) (col.missing(r) ? plan.missing[c] : plan.observed[c]).push_back(r);
    if (plan.missing[c].empty()) continue;
    if (plan.observed[c].empty()) throw DataError("variable '" + col.name + "' has no observed values to impute from");
    incomplete.push_back(c);
  }
  std::stable_sort(incomplete.begin(), incomplete.end(),
                   [&](std::size_t a, std::size_t b) { return plan.missing[a].size() > plan.missing[b].size(); });
  plan.order = incomplete;
  for (auto c : incomplete) {
    const auto& name = data.column(c).name;
    auto mi = cfg.variable_methods.find(name);
    plan.method[c] = mi != cfg.variable_methods.end() ? mi->second : default_method(data.column(c).type);
    if (plan.method[c].kind == MethodKind::logistic && data.column(c).type != VarType::binary) {
      throw ConfigError("logistic imputation needs a binary variable: " + name);
    }
    std::vector<std::size_t> preds;
    auto pi = cfg.predictors.find(name);
    if (pi != cfg.predictors.end()) {
      for (const auto& p : pi->second) preds.push_back(data.index_of(p));
    } else {
      for (std::size_t o = 0; o < nc; ++o) {
        if (o != c) preds.push_back(o);
      }
    }
    if (preds.empty()) throw ConfigError("variable '" + name + "' has an empty predictor set");
    plan.predictors[c] = preds;
  }
  return plan;
}

// Intercept plus the predictor columns that vary over `rows`.
Eigen::MatrixXd predictor_matrix(const Dataset& d, const std::vector<std::size_t>& preds,
                                 const std::vector<std::size_t>& rows, std::vector<std::size_t>& kept) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(preds.size() + 1));
  x.col(0).setOnes();
  Eigen::Index j = 1;
  for (auto p : preds) {
    const auto& v = d.column(p).values;
    bool varies = false;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      x(static_cast<Eigen::Index>(k), j) = v[rows[k]];
      varies = varies || v[rows[k]] != v[rows[0]];
    }
    if (varies) {
      kept.push_back(p);
      ++j;
    }
  }
  return x.leftCols(j);
}

Eigen::MatrixXd rows_of(const Dataset& d, const std::vector<std::size_t>& kept, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kept.size() + 1));
  x.col(0).setOnes();
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const auto& v = d.column(kept[j]).values;
    for (std::size_t k = 0; k < rows.size(); ++k) x(static_cast<Eigen::Index>(k), j + 1) = v[rows[k]];
  }
  return x;
}

struct NormalDraw {
  Eigen::VectorXd coef;  // posterior mode
  Eigen::VectorXd beta;  // posterior draw
  double sigma = 0;      // drawn residual sd
};

// Bayesian linear regression draw with a small ridge.
NormalDraw normal_draw(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge, Rng& rng) {
  const Eigen::Index n = x.rows(), p = x.cols();
  Eigen::MatrixXd xtx = kernels::omp::weighted_gram(x, Eigen::VectorXd::Ones(n));
  for (Eigen::Index j = 0; j < p; ++j) xtx(j, j) += ridge * xtx(j, j);
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success) throw NumericalError("imputation regression: X'X is not positive definite");
  NormalDraw d;
  d.coef = llt.solve(kernels::omp::cross_product(x, y));
  const Eigen::VectorXd resid = y - kernels::omp::linear_predictor(x, d.coef);
  const double df = std::max<double>(static_cast<double>(n - p), 1.0);
  d.sigma = std::sqrt(resid.squaredNorm() / rng.chi_square(df));
  // beta = coef + sigma * L^{-T} z with xtx = L L^T, so Var(beta) = sigma^2 xtx^{-1}.
  Eigen::VectorXd z(p);
  for (Eigen::Index j = 0; j < p; ++j) z[j] = rng.normal();
  d.beta = d.coef + d.sigma * Eigen::VectorXd(llt.matrixU().solve(z));
  return d;
}

// One donor drawn uniformly from a k-nearest set. Discrete predictors give
// many donors the same predicted value; when the k-th distance is shared the
// set is completed by a random subset of the tied donors, so recipients with
// the same covariate pattern do not all reuse the same k donors.
std::uint32_t pick_donor(const std::vector<double>& sorted, double x, const std::uint32_t* near, int k, Rng& rng) {
  std::uint32_t lo = near[0], hi = near[0];
  double dk = 0;
  for (int j = 0; j < k; ++j) {
    lo = std::min(lo, near[j]);
    hi = std::max(hi, near[j]);
    dk = std::max(dk, std::abs(sorted[near[j]] - x));
  }
  while (lo > 0 && std::abs(sorted[lo - 1] - x) <= dk) --lo;
  while (hi + 1 < sorted.size() && std::abs(sorted[hi + 1] - x) <= dk) ++hi;
  std::uint32_t strict = 0;
  for (auto i = lo; i <= hi; ++i) strict += std::abs(sorted[i] - x) < dk;
  const auto ties = (hi - lo + 1) - strict;
  if (ties == 0 || strict >= static_cast<std::uint32_t>(k)) return near[rng.below(static_cast<std::uint64_t>(k))];
  // Strict donors are always in the set; each tie enters with equal chance.
  const auto u = rng.below(static_cast<std::uint64_t>(k));
  auto nth = [&](bool want_strict, std::uint64_t n) {
    for (auto i = lo; i <= hi; ++i) {
      if ((std::abs(sorted[i] - x) < dk) == want_strict && n-- == 0) return i;
    }
    return lo;
  };
  return u < strict ? nth(true, u) : nth(false, rng.below(ties));
}

void impute_variable(Dataset& d, std::size_t col, const Plan& plan, const ImputationConfig& cfg, Rng& rng) {
  const auto& obs = plan.observed[col];
  const auto& mis = plan.missing[col];
  auto& values = d.column(col).values;
  std::vector<std::size_t> kept;
  const Eigen::MatrixXd x_obs = predictor_matrix(d, plan.predictors.at(col), obs, kept);
  const Eigen::MatrixXd x_mis = rows_of(d, kept, mis);
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t k = 0; k < obs.size(); ++k) y[static_cast<Eigen::Index>(k)] = values[obs[k]];
  const Method& method = plan.method.at(col);

  switch (method.kind) {
    case MethodKind::normal_linear: {
      const auto draw = normal_draw(x_obs, y, cfg.ridge, rng);
      const Eigen::VectorXd pred = kernels::omp::linear_predictor(x_mis, draw.beta);
      for (std::size_t k = 0; k < mis.size(); ++k) values[mis[k]] = pred[static_cast<Eigen::Index>(k)] + draw.sigma * rng.normal();
      break;
    }
    case MethodKind::pmm: {
      // Type-2 matching: donors and recipients both scored with the posterior
      // draw. Type-1 (donors at the mode) piles recipients onto a few edge
      // donors when the predictors barely explain the target.
      const auto draw = normal_draw(x_obs, y, cfg.ridge, rng);
      const Eigen::VectorXd donor_hat = kernels::omp::linear_predictor(x_obs, draw.beta);
      const Eigen::VectorXd recip_hat = kernels::omp::linear_predictor(x_mis, draw.beta);
      std::vector<std::size_t> perm(obs.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        return donor_hat[a] != donor_hat[b] ? donor_hat[a] < donor_hat[b] : a < b;
      });
      std::vector<double> sorted(obs.size());
      for (std::size_t k = 0; k < perm.size(); ++k) sorted[k] = donor_hat[static_cast<Eigen::Index>(perm[k])];
      std::vector<double> recipients(recip_hat.data(), recip_hat.data() + recip_hat.size());
      const int k_donors = std::min<int>(method.donors, static_cast<int>(obs.size()));
      const auto near = kernels::omp::nearest_donors(sorted, recipients, k_donors);
      for (std::size_t r = 0; r < mis.size(); ++r) {
        const auto pick = pick_donor(sorted, recipients[r], &near[r * k_donors], k_donors, rng);
        values[mis[r]] = y[static_cast<Eigen::Index>(perm[pick])];
      }
      break;
    }
    case MethodKind::logistic: {
      // Bootstrap refit with a light ridge on standardized coefficients.
      const auto n = static_cast<std::uint64_t>(obs.size());
      Eigen::MatrixXd xb(x_obs.rows(), x_obs.cols());
      Eigen::VectorXd yb(y.size());
      for (Eigen::Index i = 0; i < xb.rows(); ++i) {
        const auto src = static_cast<Eigen::Index>(rng.below(n));
        xb.row(i) = x_obs.row(src);
        yb[i] = y[src];
      }
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(x_obs.cols(), x_obs.cols());
      for (Eigen::Index j = 1; j < x_obs.cols(); ++j) {
        const double mean = x_obs.col(j).mean();
        s(j, j) = (x_obs.col(j).array() - mean).square().mean();
      }
      Eigen::VectorXd beta;
      if (yb.minCoeff() == yb.maxCoeff()) {
        beta = Eigen::VectorXd::Zero(x_obs.cols());
        beta[0] = yb[0] == 1.0 ? 30.0 : -30.0;
      } else {
        beta = model::fit_penalized_logistic(xb, yb, s, 1.0).beta;
      }
      const Eigen::VectorXd eta = kernels::omp::linear_predictor(x_mis, beta);
      for (std::size_t k = 0; k < mis.size(); ++k) {
        const double p = 1.0 / (1.0 + std::exp(-eta[static_cast<Eigen::Index>(k)]));
        values[mis[k]] = rng.bernoulli(p) ? 1.0 : 0.0;
      }
      break;
    }
  }
}

Dataset impute_copy(const Dataset& data, const Plan& plan, const ImputationConfig& cfg, int copy, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d = data;
  for (auto c : plan.order) {
    auto& values = d.column(c).values;
    const auto& obs = plan.observed[c];
    for (auto r : plan.missing[c]) values[r] = data.column(c).values[obs[rng.below(obs.size())]];
  }
  for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
    for (auto c : plan.order) {
      try {
        impute_variable(d, c, plan, cfg, rng);
      } catch (const NumericalError& e) {
        throw NumericalError("imputation failed (copy " + std::to_string(copy + 1) + ", cycle " +
                             std::to_string(cycle) + ", variable " + d.column(c).name + "): " + e.what());
      }
    }
  }
  return d;
}

std::string copy_file(int k, int m) {
  std::ostringstream s;
  s << "copy_" << std::setw(std::max<int>(2, static_cast<int>(std::to_string(m).size()))) << std::setfill('0') << k + 1
    << ".csv";
  return s.str();
}

}  // namespace

ImputedSet impute(const Dataset& data, const ImputationConfig& config) {
  config.validate();
  const Plan plan = make_plan(data, config);
  ImputedSet out;
  out.cycles = config.cycles;
  out.seed = config.seed;
  out.mask.assign(data.cols(), std::vector<std::uint8_t>(data.rows(), 0));
  for (std::size_t c = 0; c < data.cols(); ++c) {
    for (auto r : plan.missing[c]) out.mask[c][r] = 1;
  }
  for (auto c : plan.order) {
    const auto& name = data.column(c).name;
    out.visit_order.push_back(name);
    out.methods[name] = plan.method.at(c).to_string();
    for (auto p : plan.predictors.at(c)) out.predictors[name].push_back(data.column(p).name);
  }
  for (int k = 0; k < config.m; ++k) out.copy_seeds.push_back(derive_seed(config.seed, static_cast<std::uint64_t>(k)));

  out.copies.resize(static_cast<std::size_t>(config.m));
  std::vector<std::exception_ptr> errors(out.copies.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int k = 0; k < config.m; ++k) {
    try {
      out.copies[k] = plan.order.empty() ? data : impute_copy(data, plan, config, k, out.copy_seeds[k]);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

nlohmann::json ImputedSet::manifest() const {
  nlohmann::json cols = nlohmann::json::array();
  if (!copies.empty()) {
    for (const auto& c : copies.front().columns()) cols.push_back({{"name", c.name}, {"type", to_string(c.type)}});
  }
  nlohmann::json files = nlohmann::json::array();
  for (int k = 0; k < m(); ++k) files.push_back(copy_file(k, m()));
  return {{"m", m()},       {"cycles", cycles},          {"seed", seed},         {"copy_seeds", copy_seeds},
          {"methods", methods}, {"predictors", predictors}, {"visit_order", visit_order}, {"columns", cols},
          {"copies", files}};
}

void ImputedSet::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < m(); ++k) copies[k].write_csv(dir / copy_file(k, m()));
  std::ofstream mask_out(dir / "mask.csv", std::ios::binary);
  if (!mask_out) throw DataError("cannot write " + (dir / "mask.csv").string());
  std::vector<std::string> header{"patient_id"};
  for (const auto& c : copies.front().columns()) header.push_back(c.name);
  csv::write_row(mask_out, header);
  for (std::size_t r = 0; r < copies.front().rows(); ++r) {
    std::vector<std::string> row{copies.front().row_ids()[r]};
    for (const auto& col : mask) row.push_back(col[r] ? "1" : "0");
    csv::write_row(mask_out, row);
  }
  std::ofstream man(dir / "imputation_manifest.json", std::ios::binary);
  man << manifest().dump(2) << '\n';
}

ImputedSet ImputedSet::read(const std::filesystem::path& dir) {
  std::ifstream in(dir / "imputation_manifest.json");
  if (!in) throw DataError("missing " + (dir / "imputation_manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("imputation_manifest.json: ") + e.what());
  }
  ImputedSet s;
  std::vector<VarType> types;
  try {
    s.cycles = j.at("cycles");
    s.seed = j.at("seed");
    s.copy_seeds = j.at("copy_seeds").get<std::vector<std::uint64_t>>();
    s.methods = j.at("methods").get<std::map<std::string, std::string>>();
    s.predictors = j.at("predictors").get<std::map<std::string, std::vector<std::string>>>();
    s.visit_order = j.at("visit_order").get<std::vector<std::string>>();
    for (const auto& c : j.at("columns")) types.push_back(var_type_from_string(c.at("type").get<std::string>()));
    for (const auto& f : j.at("copies")) s.copies.push_back(Dataset::read_csv(dir / f.get<std::string>(), types));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("imputation_manifest.json: ") + e.what());
  }
  if (s.copies.empty()) throw DataError("imputed set has no copies");
  auto mask = csv::read_file(dir / "mask.csv");
  s.mask.assign(types.size(), std::vector<std::uint8_t>(mask.rows.size(), 0));
  for (std::size_t r = 0; r < mask.rows.size(); ++r) {
    for (std::size_t c = 0; c < types.size(); ++c) s.mask[c][r] = mask.rows[r].fields.at(c + 1) == "1";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reliability simulation

void SimulationConfig::validate() const {
  if (rates.empty()) throw ConfigError("simulation needs at least one rate");
  for (double r : rates) {
    if (!(r >= 0 && r < 1)) throw ConfigError("simulation rates must lie in [0, 1)");
  }
  if (replications < 1) throw ConfigError("simulation replications must be >= 1");
  if (mechanism == Mechanism::mar && mar_covariate.empty()) throw ConfigError("mar simulation needs mar_covariate");
  if (!(level > 0 && level < 1)) throw ConfigError("simulation level must lie in (0, 1)");
  imputation.validate();
}

SimulationConfig SimulationConfig::from_json(const nlohmann::json& j) {
  SimulationConfig c;
  try {
    c.rates = j.value("rates", c.rates);
    const auto mech = j.value("mechanism", std::string("mcar"));
    if (mech == "mcar") {
      c.mechanism = Mechanism::mcar;
    } else if (mech == "mar") {
      c.mechanism = Mechanism::mar;
    } else {
      throw ConfigError("simulation mechanism must be mcar or mar");
    }
    c.mar_covariate = j.value("mar_covariate", c.mar_covariate);
    c.mar_strength = j.value("mar_strength", c.mar_strength);
    c.replications = j.value("replications", c.replications);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.level = j.value("level", c.level);
    c.seed = j.value("seed", c.seed);
    if (j.contains("imputation")) c.imputation = ImputationConfig::from_json(j.at("imputation"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json SimulationConfig::to_json() const {
  return {{"rates", rates},
          {"mechanism", mechanism == Mechanism::mcar ? "mcar" : "mar"},
          {"mar_covariate", mar_covariate},
          {"mar_strength", mar_strength},
          {"replications", replications},
          {"bootstrap", bootstrap},
          {"level", level},
          {"seed", seed},
          {"imputation", imputation.to_json()}};
}

namespace {

double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Intercept giving mean deletion probability `rate` under logit(a + s * z).
double mar_intercept(const std::vector<double>& z, double s, double rate) {
  double lo = -60, hi = 60;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0;
    for (double v : z) mean += inv_logit(mid + s * v);
    (mean / static_cast<double>(z.size()) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct RepResult {
  double rmse = 0, bias = 0, deleted = 0;
  bool covered = false;
};

}  // namespace

std::vector<SimulationRow> missingness_simulation(const Dataset& complete_cases, const std::string& target,
                                                  const SimulationConfig& config) {
  config.validate();
  if (complete_cases.rows() == 0) throw DataError("missingness simulation needs a non-empty complete-case table");
  if (!complete_cases.complete()) throw DataError("missingness simulation input has missing cells");
  const std::size_t t = complete_cases.index_of(target);
  const std::size_t n = complete_cases.rows();
  std::size_t cov = 0;
  if (config.mechanism == Mechanism::mar) cov = complete_cases.index_of(config.mar_covariate);
  for (double r : config.rates) {
    if (r == 0) spdlog::warn("missingness simulation rate 0 deletes nothing; RMSE is 0 by construction");
  }
  const auto& truth_values = complete_cases.column(t).values;
  const double truth_mean = std::accumulate(truth_values.begin(), truth_values.end(), 0.0) / static_cast<double>(n);

  const std::size_t nr = config.rates.size();
  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<std::vector<RepResult>> results(reps, std::vector<RepResult>(nr));
  std::vector<std::exception_ptr> errors(reps);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t rep = 0; rep < static_cast<std::ptrdiff_t>(reps); ++rep) {
    try {
      const std::uint64_t rep_seed = derive_seed(config.seed, static_cast<std::uint64_t>(rep));
      Rng rng(derive_seed(rep_seed, "sample"));
      Dataset sample = complete_cases;
      if (config.bootstrap) {
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = rng.below(n);
        sample = complete_cases.select_rows(rows);
      }
      std::vector<double> u(n);
      for (auto& x : u) x = rng.uniform();
      std::vector<double> z;
      if (config.mechanism == Mechanism::mar) {
        const auto& cv = sample.column(cov).values;
        const double mean = std::accumulate(cv.begin(), cv.end(), 0.0) / static_cast<double>(n);
        double ss = 0;
        for (double v : cv) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        z.resize(n);
        for (std::size_t i = 0; i < n; ++i) z[i] = sd > 0 ? (cv[i] - mean) / sd : 0.0;
      }

      ImputationConfig ic = config.imputation;
      ic.seed = derive_seed(rep_seed, "impute");
      for (std::size_t k = 0; k < nr; ++k) {
        const double rate = config.rates[k];
        std::vector<double> p(n, rate);
        if (config.mechanism == Mechanism::mar && rate > 0) {
          const double a = mar_intercept(z, config.mar_strength, rate);
          for (std::size_t i = 0; i < n; ++i) p[i] = inv_logit(a + config.mar_strength * z[i]);
        }
        Dataset damaged = sample;
        auto& col = damaged.column(t).values;
        std::vector<std::size_t> deleted;
        for (std::size_t i = 0; i < n; ++i) {
          if (u[i] < p[i]) {
            col[i] = std::numeric_limits<double>::quiet_NaN();
            deleted.push_back(i);
          }
        }
        RepResult res;
        res.deleted = static_cast<double>(deleted.size()) / static_cast<double>(n);
        if (deleted.size() == n) throw DataError("simulation deleted every value at rate " + std::to_string(rate));
        const auto set = impute(damaged, ic);
        const auto& held = sample.column(t).values;
        double se = 0, sum = 0;
        std::vector<double> means, vars;
        for (const auto& copy : set.copies) {
          const auto& v = copy.column(t).values;
          for (auto i : deleted) {
            se += (v[i] - held[i]) * (v[i] - held[i]);
            sum += v[i] - held[i];
          }
          const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
          double ss = 0;
          for (double x : v) ss += (x - mean) * (x - mean);
          means.push_back(mean);
          vars.push_back(ss / static_cast<double>(n - 1) / static_cast<double>(n));
        }
        const double cells = static_cast<double>(deleted.size() * set.copies.size());
        res.rmse = deleted.empty() ? 0.0 : std::sqrt(se / cells);
        res.bias = deleted.empty() ? 0.0 : sum / cells;

        // Rubin interval for the mean.
        const double m = static_cast<double>(means.size());
        const double qbar = std::accumulate(means.begin(), means.end(), 0.0) / m;
        const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
        double b = 0;
        for (double q : means) b += (q - qbar) * (q - qbar);
        b /= (m - 1.0);
        const double total = w + (1.0 + 1.0 / m) * b;
        double df = 1e6;
        if (b > 0) {
          const double r = (1.0 + 1.0 / m) * b / w;
          df = (m - 1.0) * (1.0 + 1.0 / r) * (1.0 + 1.0 / r);
        }
        const double q = boost::math::quantile(boost::math::students_t(df), 0.5 + config.level / 2.0);
        res.covered = std::abs(qbar - truth_mean) <= q * std::sqrt(total);
        results[rep][k] = res;
      }
    } catch (...) {
      errors[rep] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<SimulationRow> rows;
  const double R = static_cast<double>(reps);
  for (std::size_t k = 0; k < nr; ++k) {
    SimulationRow row;
    row.rate = config.rates[k];
    row.replications = config.replications;
    double s_rmse = 0, ss_rmse = 0, s_bias = 0, ss_bias = 0, cov_count = 0, del = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const auto& r = results[rep][k];
      s_rmse += r.rmse;
      ss_rmse += r.rmse * r.rmse;
      s_bias += r.bias;
      ss_bias += r.bias * r.bias;
      cov_count += r.covered ? 1 : 0;
      del += r.deleted;
    }
    row.rmse = s_rmse / R;
    row.bias = s_bias / R;
    if (reps > 1) {
      row.rmse_se = std::sqrt(std::max(0.0, (ss_rmse - R * row.rmse * row.rmse) / (R - 1.0)) / R);
      row.bias_se = std::sqrt(std::max(0.0, (ss_bias - R * row.bias * row.bias) / (R - 1.0)) / R);
    }
    row.coverage = cov_count / R;
    row.deleted_fraction = del / R;
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const std::vector<SimulationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"rate", r.rate},
                   {"replications", r.replications},
                   {"rmse", r.rmse},
                   {"rmse_se", r.rmse_se},
                   {"bias", r.bias},
                   {"bias_se", r.bias_se},
                   {"coverage", r.coverage},
                   {"deleted_fraction", r.deleted_fraction}});
  }
  return out;
}

}  // namespace framr::impute
