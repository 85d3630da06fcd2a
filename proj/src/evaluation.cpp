#include "framr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "framr/csv.hpp"
#include "framr/errors.hpp"
#include "framr/kernels.hpp"
#include "framr/random.hpp"

namespace framr::eval {

namespace {
const boost::math::normal_distribution<double> kStdNormal;
double z_quantile(double p) { return boost::math::quantile(kStdNormal, p); }
}  // namespace

std::string_view to_string(Part p) {
  switch (p) {
    case Part::train: return "train";
    case Part::dev: return "dev";
    case Part::validation: return "validation";
  }
  return "";
}

Part part_from_string(std::string_view s) {
  if (s == "train") return Part::train;
  if (s == "dev") return Part::dev;
  if (s == "validation") return Part::validation;
  throw DataError("unknown partition label '" + std::string(s) + "'");
}

void PartitionSpec::validate() const {
  if (!(train > 0 && dev > 0 && validation > 0)) throw ConfigError("partition fractions must all be > 0");
  if (std::abs(train + dev + validation - 1.0) > 1e-12) throw ConfigError("partition fractions must sum to 1");
}

std::array<std::size_t, 3> partition_sizes(std::size_t n, const PartitionSpec& spec) {
  spec.validate();
  const double nd = static_cast<double>(n);
  auto boundary = [&](double f) { return static_cast<std::size_t>(std::floor(nd * f + 0.5)); };
  const std::size_t b1 = std::min(n, boundary(spec.train));
  const std::size_t b2 = std::clamp(boundary(spec.train + spec.dev), b1, n);
  return {b1, b2 - b1, n - b2};
}

std::vector<Part> partition(std::size_t n, const PartitionSpec& spec) {
  if (n < 3) throw DataError("partition needs at least 3 rows");
  const auto sizes = partition_sizes(n, spec);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<Part> labels(n);
  for (std::size_t k = 0; k < n; ++k) {
    labels[order[k]] = k < sizes[0] ? Part::train : (k < sizes[0] + sizes[1] ? Part::dev : Part::validation);
  }
  return labels;
}

std::vector<std::size_t> rows_with(const std::vector<Part>& labels, Part p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == p) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------

AucResult auc(const std::vector<double>& cases, const std::vector<double>& controls, double level) {
  if (cases.empty() || controls.empty()) throw DataError("AUC needs at least one case and one control");
  const auto n1 = static_cast<double>(cases.size()), n0 = static_cast<double>(controls.size());
  const auto case_pl = kernels::omp::case_placements(cases, controls);
  const auto ctrl_pl = kernels::omp::case_placements(controls, cases);
  const std::int64_t doubled = std::accumulate(case_pl.begin(), case_pl.end(), std::int64_t{0});

  AucResult r;
  r.n_cases = cases.size();
  r.n_controls = controls.size();
  r.auc = static_cast<double>(doubled) / (2.0 * n1 * n0);

  // DeLong structural components.
  auto sample_var = [](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
  };
  std::vector<double> v10(cases.size()), v01(controls.size());
  for (std::size_t i = 0; i < cases.size(); ++i) v10[i] = static_cast<double>(case_pl[i]) / (2.0 * n0);
  for (std::size_t j = 0; j < controls.size(); ++j) {
    v01[j] = (2.0 * n1 - static_cast<double>(ctrl_pl[j])) / (2.0 * n1);
  }
  r.variance = sample_var(v10) / n1 + sample_var(v01) / n0;
  const double half = z_quantile(0.5 + level / 2.0) * std::sqrt(r.variance);
  r.ci_low = std::max(0.0, r.auc - half);
  r.ci_high = std::min(1.0, r.auc + half);
  return r;
}

AucResult auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& outcomes, double level) {
  if (scores.size() != outcomes.size()) throw std::invalid_argument("auc: length mismatch");
  std::vector<double> cases, controls;
  for (Eigen::Index i = 0; i < scores.size(); ++i) (outcomes[i] == 1.0 ? cases : controls).push_back(scores[i]);
  return auc(cases, controls, level);
}

std::vector<RocPoint> roc_points(const Eigen::VectorXd& scores, const Eigen::VectorXd& outcomes) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (Eigen::Index i = 0; i < outcomes.size(); ++i) (outcomes[i] == 1.0 ? pos : neg) += 1;
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = scores[order[k]];
    for (; k < order.size() && scores[order[k]] == t; ++k) (outcomes[order[k]] == 1.0 ? tp : fp) += 1;
    out.push_back({neg > 0 ? fp / neg : 0.0, pos > 0 ? tp / pos : 0.0, t});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Row indices grouped by ascending prediction; remainder to the lowest groups.
std::vector<std::vector<std::size_t>> risk_groups(const Eigen::VectorXd& pred, int groups) {
  const auto n = static_cast<std::size_t>(pred.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  const std::size_t g = static_cast<std::size_t>(groups);
  const std::size_t base = n / g, extra = n % g;
  std::vector<std::vector<std::size_t>> out(g);
  std::size_t k = 0;
  for (std::size_t grp = 0; grp < g; ++grp) {
    const std::size_t size = base + (grp < extra ? 1 : 0);
    out[grp].assign(order.begin() + k, order.begin() + k + size);
    k += size;
  }
  return out;
}

}  // namespace

std::vector<CalibrationRow> calibration_table(const Eigen::VectorXd& pred, const Eigen::VectorXd& outcomes,
                                              int groups) {
  if (pred.size() != outcomes.size()) throw std::invalid_argument("calibration: length mismatch");
  if (groups < 1 || pred.size() < groups) {
    throw DataError("calibration table needs at least " + std::to_string(groups) + " rows");
  }
  std::vector<CalibrationRow> table;
  int decile = 1;
  for (const auto& g : risk_groups(pred, groups)) {
    double sp = 0, so = 0;
    for (auto i : g) {
      sp += pred[static_cast<Eigen::Index>(i)];
      so += outcomes[static_cast<Eigen::Index>(i)];
    }
    const double n = static_cast<double>(g.size());
    table.push_back({decile++, g.size(), sp / n, so / n});
  }
  return table;
}

double expected_calibration_error(const std::vector<CalibrationRow>& table) {
  double total = 0, weighted = 0;
  for (const auto& r : table) {
    total += static_cast<double>(r.n);
    weighted += static_cast<double>(r.n) * std::abs(r.mean_pred - r.obs_rate);
  }
  return total > 0 ? weighted / total : 0.0;
}

HosmerLemeshow hosmer_lemeshow(const Eigen::VectorXd& pred, const Eigen::VectorXd& outcomes, int groups) {
  if (pred.size() != outcomes.size()) throw std::invalid_argument("hosmer_lemeshow: length mismatch");
  if (groups < 3) throw ConfigError("Hosmer-Lemeshow needs at least 3 groups");
  if (pred.size() < 2 * groups) {
    throw DataError("Hosmer-Lemeshow needs at least " + std::to_string(2 * groups) + " rows");
  }
  if (pred.minCoeff() == pred.maxCoeff()) throw DataError("Hosmer-Lemeshow: all predictions are identical");
  HosmerLemeshow hl;
  for (const auto& g : risk_groups(pred, groups)) {
    double expected = 0, observed = 0;
    for (auto i : g) {
      expected += pred[static_cast<Eigen::Index>(i)];
      observed += outcomes[static_cast<Eigen::Index>(i)];
    }
    const double n = static_cast<double>(g.size());
    const double pbar = expected / n;
    const double denom = n * pbar * (1.0 - pbar);
    if (denom <= 0) {
      if (observed != expected) throw DataError("Hosmer-Lemeshow: degenerate group with certain predictions");
      continue;
    }
    hl.statistic += (observed - expected) * (observed - expected) / denom;
  }
  hl.dof = groups - 2;
  hl.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(hl.dof), hl.statistic));
  hl.large_sample_warning = static_cast<std::size_t>(pred.size()) > kHosmerLemeshowLargeN;
  return hl;
}

// ---------------------------------------------------------------------------

SampleSize sample_size_auc(double alt_auc, double alpha, double power, double kappa) {
  if (!(alt_auc > 0.5 && alt_auc < 1.0)) {
    throw ConfigError("alt_auc must lie in (0.5, 1); an AUC of 0.5 has no detectable difference");
  }
  if (!(alpha > 0 && alpha < 1) || !(power > 0 && power < 1) || !(kappa > 0)) {
    throw ConfigError("sample size needs 0 < alpha < 1, 0 < power < 1 and kappa > 0");
  }
  auto variance = [kappa](double a_uc) {
    const double a = std::sqrt(2.0) * z_quantile(a_uc);
    return 0.0099 * std::exp(-a * a / 4.0) * ((5.0 * a * a + 8.0) + (a * a + 8.0) / kappa);
  };
  const double z_alpha = z_quantile(1.0 - alpha / 2.0);
  const double z_beta = z_quantile(power);
  const double num = z_alpha * std::sqrt(variance(0.5)) + z_beta * std::sqrt(variance(alt_auc));
  SampleSize s;
  s.raw = num * num / ((alt_auc - 0.5) * (alt_auc - 0.5));
  s.n_cases = static_cast<std::size_t>(std::ceil(s.raw));
  s.n_controls = static_cast<std::size_t>(std::ceil(kappa * s.raw));
  return s;
}

// ---------------------------------------------------------------------------

model::PooledMetric pool_scalar(const std::vector<double>& estimates, const std::vector<double>& variances) {
  if (estimates.empty() || estimates.size() != variances.size()) throw std::invalid_argument("pool_scalar: sizes");
  const double m = static_cast<double>(estimates.size());
  model::PooledMetric r;
  r.mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / m;
  r.within = std::accumulate(variances.begin(), variances.end(), 0.0) / m;
  if (estimates.size() > 1) {
    double ss = 0;
    for (double e : estimates) ss += (e - r.mean) * (e - r.mean);
    r.between = ss / (m - 1.0);
  }
  r.total = r.within + (1.0 + 1.0 / m) * r.between;
  return r;
}

EvalReport evaluate_pooled(const model::PooledModel& model, const std::vector<Dataset>& copies, double level) {
  if (copies.empty()) throw ConfigError("evaluate_pooled needs at least one copy");
  const auto& first = copies.front();
  const Eigen::VectorXd y = model::outcome_vector(first);
  for (const auto& c : copies) {
    if (c.row_ids() != first.row_ids()) throw DataError("evaluation copies have different rows");
    if (model::outcome_vector(c) != y) throw DataError("evaluation copies disagree on the outcome");
  }
  EvalReport r;
  r.n = first.rows();
  r.n_events = static_cast<std::size_t>(y.sum());
  r.m = static_cast<int>(copies.size());
  r.level = level;

  std::vector<Eigen::VectorXd> preds(copies.size());
  std::vector<double> auc_var(copies.size());
  r.per_copy_auc.resize(copies.size());
  r.per_copy_ece.resize(copies.size());
  for (std::size_t k = 0; k < copies.size(); ++k) {
    preds[k] = model.predict(copies[k]);
    const auto a = auc(preds[k], y, level);
    r.per_copy_auc[k] = a.auc;
    auc_var[k] = a.variance;
    r.per_copy_ece[k] = expected_calibration_error(calibration_table(preds[k], y));
  }
  r.auc = pool_scalar(r.per_copy_auc, auc_var);
  r.ece = pool_scalar(r.per_copy_ece, std::vector<double>(copies.size(), 0.0));

  // Rubin interval for the pooled AUC (t with the classic Rubin df).
  const double m = static_cast<double>(copies.size());
  double q = z_quantile(0.5 + level / 2.0);
  if (copies.size() > 1 && r.auc.between > 0) {
    const double ratio = (1.0 + 1.0 / m) * r.auc.between / std::max(r.auc.within, 1e-300);
    const double df = (m - 1.0) * (1.0 + 1.0 / ratio) * (1.0 + 1.0 / ratio);
    q = boost::math::quantile(boost::math::students_t(df), 0.5 + level / 2.0);
  }
  const double half = q * std::sqrt(r.auc.total);
  r.auc_ci_low = std::max(0.0, r.auc.mean - half);
  r.auc_ci_high = std::min(1.0, r.auc.mean + half);

  Eigen::VectorXd mean_pred = Eigen::VectorXd::Zero(y.size());
  for (const auto& p : preds) mean_pred += p;
  mean_pred /= m;
  r.calibration = calibration_table(mean_pred, y);
  if (mean_pred.minCoeff() != mean_pred.maxCoeff() && y.size() >= 20) r.hl = hosmer_lemeshow(mean_pred, y);
  r.roc = roc_points(mean_pred, y);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cal = nlohmann::json::array();
  for (const auto& c : calibration) {
    cal.push_back({{"decile", c.decile}, {"n", c.n}, {"mean_pred", c.mean_pred}, {"obs_rate", c.obs_rate}});
  }
  nlohmann::json j{{"n", n},
                   {"n_events", n_events},
                   {"m", m},
                   {"level", level},
                   {"auc",
                    {{"estimate", auc.mean},
                     {"ci_low", auc_ci_low},
                     {"ci_high", auc_ci_high},
                     {"within", auc.within},
                     {"between", auc.between},
                     {"total", auc.total},
                     {"per_copy", per_copy_auc}}},
                   {"ece", {{"estimate", ece.mean}, {"between", ece.between}, {"per_copy", per_copy_ece}}},
                   {"calibration_table", cal}};
  if (hl) {
    nlohmann::json h{{"statistic", hl->statistic},
                     {"dof", hl->dof},
                     {"p_value", hl->p_value},
                     {"large_sample_warning", hl->large_sample_warning}};
    if (hl->large_sample_warning) h["warning"] = kHosmerLemeshowCaveat;
    j["hosmer_lemeshow"] = h;
  } else {
    j["hosmer_lemeshow"] = nullptr;
  }
  return j;
}

void EvalReport::write_calibration_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"decile", "n", "mean_pred", "obs_rate"});
  for (const auto& c : calibration) {
    csv::write_row(out, {std::to_string(c.decile), std::to_string(c.n), csv::format_double(c.mean_pred),
                         csv::format_double(c.obs_rate)});
  }
}

void EvalReport::write_roc_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"fpr", "tpr", "threshold"});
  for (const auto& p : roc) {
    csv::write_row(out, {csv::format_double(p.fpr), csv::format_double(p.tpr),
                         std::isinf(p.threshold) ? "inf" : csv::format_double(p.threshold)});
  }
}

}  // namespace framr::eval
