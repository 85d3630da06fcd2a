#include "framr/modeling.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

#include "framr/errors.hpp"
#include "framr/evaluation.hpp"
#include "framr/kernels.hpp"

namespace framr::model {

namespace kn = kernels::omp;

std::string_view to_string(Family f) {
  return f == Family::logistic_linear ? "logistic_linear" : "additive_spline";
}

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::raw: return "raw";
    case Transform::log_continuous: return "log_continuous";
    case Transform::plus_quadratic: return "plus_quadratic";
  }
  return "";
}

void ModelSpec::validate() const {
  if (predictors.empty()) throw ConfigError("model spec '" + name + "' has no predictors");
  std::vector<std::string> sorted(predictors);
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("model spec '" + name + "' repeats a predictor");
  }
  if (family == Family::additive_spline) {
    if (transform == Transform::plus_quadratic) {
      throw ConfigError("model spec '" + name + "': plus_quadratic does not combine with additive_spline");
    }
    if (basis_size < 5) throw ConfigError("model spec '" + name + "': basis_size must be >= 5");
    if (lambda_grid.empty()) throw ConfigError("model spec '" + name + "': empty lambda grid");
    for (double l : lambda_grid) {
      if (!(l >= 0)) throw ConfigError("model spec '" + name + "': lambda must be >= 0");
    }
  }
  if (log_offset && !(*log_offset >= 0)) throw ConfigError("model spec '" + name + "': log_offset must be >= 0");
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  try {
    s.name = j.value("name", std::string());
    const auto fam = j.value("family", std::string("logistic_linear"));
    if (fam == "logistic_linear") {
      s.family = Family::logistic_linear;
    } else if (fam == "additive_spline") {
      s.family = Family::additive_spline;
    } else {
      throw ConfigError("unknown model family '" + fam + "'");
    }
    const auto tr = j.value("transform", std::string("raw"));
    if (tr == "raw") {
      s.transform = Transform::raw;
    } else if (tr == "log_continuous") {
      s.transform = Transform::log_continuous;
    } else if (tr == "plus_quadratic") {
      s.transform = Transform::plus_quadratic;
    } else {
      throw ConfigError("unknown transform '" + tr + "'");
    }
    s.predictors = j.value("predictors", s.predictors);
    if (j.contains("log_offset") && !j.at("log_offset").is_null()) s.log_offset = j.at("log_offset").get<double>();
    s.basis_size = j.value("basis_size", s.basis_size);
    s.lambda_grid = j.value("lambda_grid", s.lambda_grid);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  if (s.name.empty()) s.name = std::string(to_string(s.family)) + "/" + std::string(to_string(s.transform));
  s.validate();
  return s;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j{{"name", name},
                   {"family", to_string(family)},
                   {"transform", to_string(transform)},
                   {"predictors", predictors},
                   {"log_offset", log_offset ? nlohmann::json(*log_offset) : nlohmann::json(nullptr)}};
  if (family == Family::additive_spline) {
    j["basis_size"] = basis_size;
    j["lambda_grid"] = lambda_grid;
  }
  return j;
}

std::vector<ModelSpec> default_candidates() {
  std::vector<ModelSpec> c(5);
  c[0].name = "logistic";
  c[1].name = "logistic_log";
  c[1].transform = Transform::log_continuous;
  c[1].log_offset = 1.0;
  c[2].name = "logistic_quadratic";
  c[2].transform = Transform::plus_quadratic;
  c[3].name = "additive";
  c[3].family = Family::additive_spline;
  c[4].name = "additive_log";
  c[4].family = Family::additive_spline;
  c[4].transform = Transform::log_continuous;
  c[4].log_offset = 1.0;
  return c;
}

// ---------------------------------------------------------------------------
// B-splines

std::vector<double> bspline_basis(const std::vector<double>& u, double x, int p) {
  const int k = static_cast<int>(u.size()) - p - 1;
  if (k < p + 1) throw std::invalid_argument("bspline_basis: knot vector too short");
  x = std::clamp(x, u[p], u[k]);
  // Knot span i with u[i] <= x < u[i+1]; the right boundary uses the last span.
  int i = k - 1;
  if (x < u[k]) {
    i = static_cast<int>(std::upper_bound(u.begin() + p, u.begin() + k + 1, x) - u.begin()) - 1;
  }
  std::vector<double> n(p + 1, 0.0), left(p + 1), right(p + 1);
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - u[i + 1 - j];
    right[j] = u[i + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double t = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * t;
      saved = left[j - r] * t;
    }
    n[j] = saved;
  }
  std::vector<double> out(k, 0.0);
  for (int j = 0; j <= p; ++j) out[i - p + j] = n[j];
  return out;
}

std::vector<double> quantile_knots(std::vector<double> values, int basis_size) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.size() < static_cast<std::size_t>(basis_size)) {
    throw NumericalError("degenerate knot placement: fewer values than basis functions");
  }
  std::sort(values.begin(), values.end());
  const int interior = basis_size - 4;
  auto quantile = [&](double q) {
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  std::vector<double> knots(4, values.front());
  for (int k = 1; k <= interior; ++k) knots.push_back(quantile(static_cast<double>(k) / (interior + 1)));
  for (int k = 0; k < 4; ++k) knots.push_back(values.back());
  for (std::size_t k = 3; k + 4 < knots.size(); ++k) {
    if (!(knots[k] < knots[k + 1])) throw NumericalError("degenerate knot placement: coinciding quantile knots");
  }
  return knots;
}

// ---------------------------------------------------------------------------
// Design

DesignTemplate::DesignTemplate(const ModelSpec& spec, const Dataset& reference) : spec_(spec) {
  spec_.validate();
  for (const auto& v : spec_.predictors) {
    if (!reference.has(v)) throw ConfigError("predictor '" + v + "' is not in the data");
    (reference.column(v).type == VarType::binary ? binary_ : continuous_).push_back(v);
  }
  const bool logs = spec_.transform == Transform::log_continuous;
  columns_.push_back({"(intercept)", "", Term::intercept, -1});
  if (spec_.family == Family::additive_spline) {
    for (const auto& v : continuous_) {
      std::vector<double> xs;
      const auto& col = reference.column(v);
      xs.reserve(col.values.size());
      DesignColumn probe{v, v, logs ? Term::log : Term::identity, -1};
      for (double x : col.values) {
        if (!std::isnan(x)) xs.push_back(transformed(probe, x));
      }
      knots_[v] = quantile_knots(std::move(xs), spec_.basis_size);
      for (int b = 1; b < spec_.basis_size; ++b) {
        columns_.push_back({v + ":bs" + std::to_string(b + 1), v, Term::spline, b});
      }
    }
  } else {
    for (const auto& v : continuous_) {
      if (logs) {
        std::ostringstream name;
        name << "log(" << v;
        if (spec_.log_offset && *spec_.log_offset != 0) name << " + " << *spec_.log_offset;
        name << ")";
        columns_.push_back({name.str(), v, Term::log, -1});
      } else {
        columns_.push_back({v, v, Term::identity, -1});
      }
    }
    if (spec_.transform == Transform::plus_quadratic) {
      for (const auto& v : continuous_) columns_.push_back({v + "^2", v, Term::square, -1});
    }
  }
  for (const auto& v : binary_) columns_.push_back({v, v, Term::identity, -1});
}

std::vector<std::string> DesignTemplate::names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) out.push_back(c.name);
  return out;
}

double DesignTemplate::transformed(const DesignColumn& c, double x) const {
  switch (c.term) {
    case Term::intercept: return 1.0;
    case Term::identity: return x;
    case Term::square: return x * x;
    case Term::log: {
      const double arg = x + spec_.log_offset.value_or(0.0);
      if (!(arg > 0)) {
        throw DataError("log transform of '" + c.variable + "' needs positive values (got " + std::to_string(x) +
                        "); set log_offset in the model spec, e.g. 1");
      }
      return std::log(arg);
    }
    case Term::spline: break;
  }
  throw std::logic_error("spline columns are built per variable");
}

Eigen::MatrixXd DesignTemplate::build(const Dataset& data) const {
  const auto n = static_cast<Eigen::Index>(data.rows());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(columns_.size()));
  const bool logs = spec_.transform == Transform::log_continuous;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto& c = columns_[j];
    if (c.term == Term::intercept) {
      x.col(j).setOnes();
      continue;
    }
    const auto& values = data.column(c.variable).values;
    if (c.term == Term::spline) {
      if (c.basis_index != 1) continue;  // filled with the whole block below
      const auto& knots = knots_.at(c.variable);
      const DesignColumn probe{c.variable, c.variable, logs ? Term::log : Term::identity, -1};
      for (Eigen::Index i = 0; i < n; ++i) {
        if (std::isnan(values[i])) {
          throw DataError("missing value in predictor '" + c.variable + "' for patient " + data.row_ids()[i]);
        }
        const auto basis = bspline_basis(knots, transformed(probe, values[i]));
        for (int b = 1; b < spec_.basis_size; ++b) x(i, j + b - 1) = basis[b];
      }
      continue;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isnan(values[i])) {
        throw DataError("missing value in predictor '" + c.variable + "' for patient " + data.row_ids()[i]);
      }
      x(i, j) = transformed(c, values[i]);
    }
  }
  return x;
}

Eigen::RowVectorXd DesignTemplate::build_row(const std::map<std::string, double>& record) const {
  std::vector<std::string> ids{"record"};
  Dataset d(ids);
  for (const auto& v : spec_.predictors) {
    auto it = record.find(v);
    if (it == record.end() || std::isnan(it->second)) throw DataError("missing covariate '" + v + "'");
    const bool binary = std::find(binary_.begin(), binary_.end(), v) != binary_.end();
    d.add_column({v, binary ? VarType::binary : VarType::continuous, {it->second}});
  }
  return build(d).row(0);
}

Eigen::MatrixXd DesignTemplate::penalty() const {
  const auto p = static_cast<Eigen::Index>(columns_.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  if (!penalized()) return s;
  const int k = spec_.basis_size;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(k - 2, k);
  for (int r = 0; r < k - 2; ++r) {
    d(r, r) = 1;
    d(r, r + 1) = -2;
    d(r, r + 2) = 1;
  }
  const Eigen::MatrixXd full = d.transpose() * d;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].term != Term::spline || columns_[j].basis_index != 1) continue;
    s.block(j, j, k - 1, k - 1) = full.bottomRightCorner(k - 1, k - 1);
  }
  return s;
}

nlohmann::json DesignTemplate::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) cols.push_back(c.name);
  return {{"spec", spec_.to_json()},
          {"continuous", continuous_},
          {"binary", binary_},
          {"knots", knots_},
          {"columns", cols}};
}

DesignTemplate DesignTemplate::from_json(const nlohmann::json& j) {
  DesignTemplate t;
  try {
    const auto spec = ModelSpec::from_json(j.at("spec"));
    const auto continuous = j.at("continuous").get<std::vector<std::string>>();
    const auto binary = j.at("binary").get<std::vector<std::string>>();
    // Rebuild the layout from a one-row placeholder table, then restore knots.
    Dataset ref(std::vector<std::string>{"ref"});
    for (const auto& v : spec.predictors) {
      const bool is_binary = std::find(binary.begin(), binary.end(), v) != binary.end();
      if (!is_binary && std::find(continuous.begin(), continuous.end(), v) == continuous.end()) {
        throw ConfigError("design: predictor '" + v + "' is neither continuous nor binary");
      }
      ref.add_column({v, is_binary ? VarType::binary : VarType::continuous, {1.0}});
    }
    ModelSpec linear = spec;
    linear.family = Family::logistic_linear;
    t = DesignTemplate(linear, ref);
    t.spec_ = spec;
    if (spec.family == Family::additive_spline) {
      t.knots_ = j.at("knots").get<std::map<std::string, std::vector<double>>>();
      t.columns_.assign(1, {"(intercept)", "", Term::intercept, -1});
      for (const auto& v : t.continuous_) {
        const auto it = t.knots_.find(v);
        if (it == t.knots_.end() || it->second.size() != static_cast<std::size_t>(spec.basis_size + 4)) {
          throw ConfigError("design: bad knots for '" + v + "'");
        }
        for (int b = 1; b < spec.basis_size; ++b) {
          t.columns_.push_back({v + ":bs" + std::to_string(b + 1), v, Term::spline, b});
        }
      }
      for (const auto& v : t.binary_) t.columns_.push_back({v, v, Term::identity, -1});
    }
    if (j.contains("columns") && j.at("columns").get<std::vector<std::string>>() != t.names()) {
      throw ConfigError("design: column list does not match the spec");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("design: ") + e.what());
  }
  return t;
}

bool DesignTemplate::operator==(const DesignTemplate& o) const { return to_json() == o.to_json(); }

Eigen::VectorXd outcome_vector(const Dataset& data) {
  const auto& col = data.column(kOutcome);
  Eigen::VectorXd y(static_cast<Eigen::Index>(col.values.size()));
  for (std::size_t i = 0; i < col.values.size(); ++i) {
    const double v = col.values[i];
    if (v != 0.0 && v != 1.0) throw DataError("outcome must be 0 or 1 (patient " + data.row_ids()[i] + ")");
    y[static_cast<Eigen::Index>(i)] = v;
  }
  return y;
}

// ---------------------------------------------------------------------------
// IRLS

namespace {

double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }
double inv_logit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

}  // namespace

double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y[i] * eta[i] - softplus(eta[i]);
  return ll;
}

double log_loss(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  return -log_likelihood(eta, y) / static_cast<double>(eta.size());
}

FittedModel fit_penalized_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& s,
                                   double lambda, const FitOptions& options, std::vector<std::string> names,
                                   const Eigen::VectorXd* start) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (y.size() != n) throw std::invalid_argument("fit: outcome length mismatch");
  if (s.rows() != p || s.cols() != p) throw std::invalid_argument("fit: penalty shape mismatch");
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
  }
  if (n <= p) throw RankDeficientError("need more rows than coefficients (" + std::to_string(n) + " <= " +
                                       std::to_string(p) + ")");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw DataError("outcome must be 0 or 1");
  }

  // Internal RMS column scaling.
  Eigen::VectorXd scale(p), sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    scale[j] = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(n));
    const double mean = x.col(j).mean();
    sd[j] = std::sqrt(std::max(0.0, x.col(j).squaredNorm() / static_cast<double>(n) - mean * mean));
    if (!(scale[j] > 0) || !std::isfinite(scale[j])) {
      throw RankDeficientError("design column '" + names[j] + "' is all zero or not finite");
    }
  }
  const Eigen::MatrixXd z = x * scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd sz = scale.cwiseInverse().asDiagonal() * s * scale.cwiseInverse().asDiagonal();

  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
      std::vector<std::string> dropped;
      const auto& perm = qr.colsPermutation().indices();
      for (Eigen::Index k = qr.rank(); k < p; ++k) dropped.push_back(names[perm[k]]);
      throw RankDeficientError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                               std::to_string(p) + "); dependent column(s): " + join(dropped));
    }
  }

  Eigen::VectorXd g = start ? Eigen::VectorXd(start->cwiseProduct(scale)) : Eigen::VectorXd::Zero(p);
  auto objective = [&](const Eigen::VectorXd& gamma, const Eigen::VectorXd& eta) {
    return -2.0 * log_likelihood(eta, y) + lambda * gamma.dot(sz * gamma);
  };
  Eigen::VectorXd eta = kn::linear_predictor(z, g);
  double obj = objective(g, eta);
  Eigen::VectorXd mu(n), w(n);

  auto newton_direction = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& gamma) -> Eigen::VectorXd {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = inv_logit(e[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-300);
    }
    const Eigen::VectorXd grad = kn::cross_product(z, y - mu) - lambda * (sz * gamma);
    Eigen::MatrixXd h = kn::weighted_gram(z, w);
    if (lambda > 0) h += lambda * sz;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw NumericalError("IRLS information matrix is not positive definite");
    }
    return ldlt.solve(grad);
  };

  int iter = 0;
  bool converged = false;
  for (iter = 1; iter <= options.max_iter; ++iter) {
    const Eigen::VectorXd delta = newton_direction(eta, g);
    double step = 1.0;
    Eigen::VectorXd g_new, eta_new;
    double obj_new = obj;
    for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
      g_new = g + step * delta;
      eta_new = kn::linear_predictor(z, g_new);
      obj_new = objective(g_new, eta_new);
      if (std::isfinite(obj_new) && obj_new <= obj + 1e-12 * std::abs(obj)) break;
    }
    if (!std::isfinite(obj_new)) throw NumericalError("IRLS objective is not finite");
    const double change = std::abs(obj - obj_new);
    if (obj_new <= obj) {
      g = g_new;
      eta = eta_new;
    }
    const double prev = obj;
    obj = std::min(obj, obj_new);
    if (change < options.rel_tol * (std::abs(obj) + 0.1) || change < options.abs_tol || obj == prev) {
      converged = true;
      break;
    }
  }

  FittedModel fit;
  fit.names = std::move(names);
  fit.n = static_cast<std::size_t>(n);
  fit.iterations = std::min(iter, options.max_iter);
  const Eigen::VectorXd beta_now = g.cwiseQuotient(scale);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (sd[j] > 0 && std::abs(beta_now[j]) * sd[j] > options.separation_threshold) {
      throw SeparationError("quasi-complete separation: coefficient of '" + fit.names[j] +
                            "' diverges (|beta * sd| = " + std::to_string(std::abs(beta_now[j]) * sd[j]) + ")");
    }
  }
  if (!converged) {
    throw ConvergenceError("IRLS did not converge in " + std::to_string(options.max_iter) + " iterations");
  }

  // Polishing Newton steps, kept while they shrink the score: the deviance
  // criterion can stop a step short of solving the score equations tightly.
  auto score_norm = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& gamma) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = y[i] - inv_logit(e[i]);
    return (kn::cross_product(z, r) - lambda * (sz * gamma)).cwiseAbs().maxCoeff();
  };
  double current = score_norm(eta, g);
  for (int k = 0; k < 3 && current > 0; ++k) {
    const Eigen::VectorXd g_new = g + newton_direction(eta, g);
    const Eigen::VectorXd eta_new = kn::linear_predictor(z, g_new);
    const double next = score_norm(eta_new, g_new);
    if (!(next < current)) break;
    g = g_new;
    eta = eta_new;
    current = next;
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    mu[i] = inv_logit(eta[i]);
    w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-300);
  }
  Eigen::MatrixXd h = kn::weighted_gram(z, w);
  if (lambda > 0) h += lambda * sz;
  const Eigen::MatrixXd h_inv = h.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.beta = g.cwiseQuotient(scale);
  fit.cov = scale.cwiseInverse().asDiagonal() * h_inv * scale.cwiseInverse().asDiagonal();
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  fit.deviance = -2.0 * log_likelihood(eta, y);
  const Eigen::VectorXd score = kn::cross_product(x, y - mu) - lambda * (s * fit.beta);
  fit.gradient_norm = score.cwiseAbs().maxCoeff();
  if (lambda > 0 || s.cwiseAbs().sum() > 0) fit.lambda = lambda;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (sd[j] > 0 && std::abs(fit.beta[j]) * sd[j] > options.separation_threshold) {
      throw SeparationError("quasi-complete separation: coefficient of '" + fit.names[j] + "' diverges");
    }
  }
  return fit;
}

FittedModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitOptions& options,
                         std::vector<std::string> names) {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  auto fit = fit_penalized_logistic(x, y, zero, 0.0, options, std::move(names));
  fit.lambda.reset();
  return fit;
}

FittedModel fit_design(const DesignTemplate& design, const Dataset& data, std::optional<double> lambda,
                       const FitOptions& options) {
  const Eigen::MatrixXd x = design.build(data);
  const Eigen::VectorXd y = outcome_vector(data);
  if (design.penalized()) {
    if (!lambda) throw ConfigError("penalized fit needs a lambda");
    return fit_penalized_logistic(x, y, design.penalty(), *lambda, options, design.names());
  }
  return fit_logistic(x, y, options, design.names());
}

SplineFit fit_additive_spline(const DesignTemplate& design, const Dataset& train, const Dataset& dev,
                              const FitOptions& options) {
  if (!design.penalized()) throw ConfigError("fit_additive_spline needs an additive_spline spec");
  const Eigen::MatrixXd x = design.build(train), xd = design.build(dev);
  const Eigen::VectorXd y = outcome_vector(train), yd = outcome_vector(dev);
  const Eigen::MatrixXd s = design.penalty();
  SplineFit out;
  std::optional<FittedModel> best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < design.spec().lambda_grid.size(); ++k) {
    auto fit = fit_penalized_logistic(x, y, s, design.spec().lambda_grid[k], options, design.names());
    const double loss = log_loss(kn::linear_predictor(xd, fit.beta), yd);
    out.dev_log_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = std::move(fit);
      out.chosen = k;
    }
  }
  out.model = std::move(*best);
  return out;
}

// ---------------------------------------------------------------------------
// Pooling

PooledModel pool_rubin(const DesignTemplate& design, const std::vector<FittedModel>& fits, double complete_df) {
  if (fits.empty()) throw ConfigError("pool_rubin needs at least one fit");
  const auto& names = fits.front().names;
  const auto p = fits.front().beta.size();
  for (const auto& f : fits) {
    if (f.names != names || f.beta.size() != p) throw ConfigError("pool_rubin: fits have different coefficients");
  }
  const double m = static_cast<double>(fits.size());
  PooledModel pm;
  pm.design = design;
  pm.names = names;
  pm.m = static_cast<int>(fits.size());
  pm.lambda = fits.front().lambda;
  pm.beta = Eigen::VectorXd::Zero(p);
  pm.within = Eigen::VectorXd::Zero(p);
  pm.between = Eigen::VectorXd::Zero(p);
  for (const auto& f : fits) {
    pm.beta += f.beta;
    pm.within += f.cov.diagonal();
  }
  pm.beta /= m;
  pm.within /= m;
  if (fits.size() > 1) {
    for (const auto& f : fits) pm.between += (f.beta - pm.beta).cwiseAbs2();
    pm.between /= (m - 1.0);
  }
  pm.total = pm.within + (1.0 + 1.0 / m) * pm.between;
  pm.df.resize(p);
  const double nu_com = std::max(complete_df, 1.0);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double frac = pm.total[j] > 0 ? (1.0 + 1.0 / m) * pm.between[j] / pm.total[j] : 0.0;
    const double nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - frac);
    if (frac <= 0 || fits.size() < 2) {
      pm.df[j] = nu_obs;
    } else {
      const double nu_old = (m - 1.0) / (frac * frac);
      pm.df[j] = nu_old * nu_obs / (nu_old + nu_obs);
    }
  }
  return pm;
}

Eigen::VectorXd PooledModel::linear_predictor(const Dataset& data) const {
  return kn::linear_predictor(design.build(data), beta);
}

Eigen::VectorXd PooledModel::predict(const Dataset& data) const {
  Eigen::VectorXd eta = linear_predictor(data);
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = inv_logit(eta[i]);
  return eta;
}

double PooledModel::score(const std::map<std::string, double>& record) const {
  static const std::map<std::string, std::pair<double, double>> plausible{
      {"age", {0, 120}}, {"bmi", {10, 100}}, {"systolic_bp", {50, 300}}};
  for (const auto& [name, range] : plausible) {
    auto it = record.find(name);
    if (it != record.end() && (it->second < range.first || it->second > range.second)) {
      spdlog::warn("covariate {} = {} is outside the plausible range [{}, {}]", name, it->second, range.first,
                   range.second);
    }
  }
  return inv_logit(design.build_row(record).dot(beta));
}

std::vector<std::pair<double, double>> PooledModel::intervals(double level) const {
  std::vector<std::pair<double, double>> out;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double se = std::sqrt(total[j]);
    const double df_j = std::isfinite(df[j]) && df[j] > 0 ? df[j] : 1e6;
    const double q = boost::math::quantile(boost::math::students_t(df_j), 0.5 + level / 2.0);
    out.emplace_back(beta[j] - q * se, beta[j] + q * se);
  }
  return out;
}

nlohmann::json PooledModel::to_json() const {
  nlohmann::json coefs = nlohmann::json::array();
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    nlohmann::json c{{"name", names[j]}, {"estimate", beta[j]}};
    if (has_variance) {
      c["within"] = within[j];
      c["between"] = between[j];
      c["total"] = total[j];
      c["df"] = df[j];
    }
    coefs.push_back(std::move(c));
  }
  return {{"format", "framr-model"},
          {"version", 1},
          {"design", design.to_json()},
          {"coefficients", coefs},
          {"m", m},
          {"lambda", lambda ? nlohmann::json(*lambda) : nlohmann::json(nullptr)},
          {"sex_coding", kSexCoding}};
}

PooledModel PooledModel::from_json(const nlohmann::json& j) {
  PooledModel pm;
  try {
    if (j.value("format", std::string()) != "framr-model") throw ConfigError("model file: unexpected format");
    pm.design = DesignTemplate::from_json(j.at("design"));
    const auto& coefs = j.at("coefficients");
    const auto p = static_cast<Eigen::Index>(coefs.size());
    pm.beta.resize(p);
    pm.within = pm.between = pm.total = pm.df = Eigen::VectorXd::Zero(p);
    pm.has_variance = true;
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto& c = coefs.at(k);
      pm.names.push_back(c.at("name").get<std::string>());
      pm.beta[k] = c.at("estimate").get<double>();
      if (c.contains("total")) {
        pm.within[k] = c.at("within").get<double>();
        pm.between[k] = c.at("between").get<double>();
        pm.total[k] = c.at("total").get<double>();
        pm.df[k] = c.at("df").get<double>();
      } else {
        pm.has_variance = false;
      }
    }
    pm.m = j.value("m", 1);
    if (j.contains("lambda") && !j.at("lambda").is_null()) pm.lambda = j.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
  if (pm.names != pm.design.names()) throw ConfigError("model file: coefficient names do not match the design");
  return pm;
}

// ---------------------------------------------------------------------------
// Selection

namespace {

// Runs f(k) for k in [0, n) in parallel and rethrows the first failure in
// index order.
template <class F>
void parallel_for_copies(std::size_t n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    try {
      f(static_cast<std::size_t>(k));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<FittedModel> fit_copies(const DesignTemplate& design, const std::vector<Dataset>& data,
                                    std::optional<double> lambda, const FitOptions& options) {
  std::vector<FittedModel> fits(data.size());
  parallel_for_copies(data.size(), [&](std::size_t k) {
    try {
      fits[k] = fit_design(design, data[k], lambda, options);
    } catch (const NumericalError& e) {
      throw NumericalError("copy " + std::to_string(k + 1) + ": " + e.what());
    }
  });
  return fits;
}

int complexity_rank(const ModelSpec& s) {
  return 3 * static_cast<int>(s.family) + static_cast<int>(s.transform);
}

}  // namespace

nlohmann::json Selection::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : table) {
    nlohmann::json r{{"spec", c.spec.to_json()}, {"ok", c.ok}};
    if (!c.ok) {
      r["error"] = c.error;
    } else {
      r["n_params"] = c.n_params;
      r["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json(nullptr);
      r["auc"] = {{"mean", c.auc.mean}, {"within", c.auc.within}, {"between", c.auc.between}, {"total", c.auc.total}};
      r["ece"] = {{"mean", c.ece.mean}, {"between", c.ece.between}};
      r["dev_log_loss"] = c.dev_log_loss;
    }
    rows.push_back(std::move(r));
  }
  return {{"candidates", rows}, {"chosen", table.at(chosen).spec.name}};
}

Selection select_model(const std::vector<ModelSpec>& candidates, const std::vector<Dataset>& train,
                       const std::vector<Dataset>& dev, const SelectionOptions& options) {
  if (candidates.empty()) throw ConfigError("select_model needs at least one candidate");
  if (train.empty() || train.size() != dev.size()) throw ConfigError("select_model: train/dev copy counts differ");
  Selection sel;
  std::vector<DesignTemplate> designs(candidates.size());
  std::vector<PooledModel> pooled(candidates.size());

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    CandidateResult res;
    res.spec = candidates[c];
    try {
      designs[c] = DesignTemplate(candidates[c], train.front());
      const auto& design = designs[c];
      std::vector<FittedModel> fits;
      if (design.penalized()) {
        // One lambda for all copies: the grid value with the lowest mean
        // development log-loss.
        double best = std::numeric_limits<double>::infinity();
        for (double lambda : design.spec().lambda_grid) {
          auto f = fit_copies(design, train, lambda, options.fit);
          double loss = 0;
          for (std::size_t k = 0; k < dev.size(); ++k) {
            loss += log_loss(kn::linear_predictor(design.build(dev[k]), f[k].beta), outcome_vector(dev[k]));
          }
          loss /= static_cast<double>(dev.size());
          spdlog::debug("candidate {} lambda {} dev log-loss {}", res.spec.name, lambda, loss);
          if (loss < best) {
            best = loss;
            fits = std::move(f);
            res.lambda = lambda;
          }
        }
      } else {
        fits = fit_copies(design, train, std::nullopt, options.fit);
      }
      const double complete_df = static_cast<double>(train.front().rows()) - static_cast<double>(design.size());
      pooled[c] = pool_rubin(design, fits, complete_df);
      res.n_params = design.size();

      std::vector<double> aucs(dev.size()), auc_vars(dev.size()), eces(dev.size()), losses(dev.size());
      parallel_for_copies(dev.size(), [&](std::size_t k) {
        const Eigen::VectorXd y = outcome_vector(dev[k]);
        const Eigen::VectorXd eta = pooled[c].linear_predictor(dev[k]);
        Eigen::VectorXd p = eta;
        for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = inv_logit(eta[i]);
        const auto a = eval::auc(p, y);
        aucs[k] = a.auc;
        auc_vars[k] = a.variance;
        eces[k] = eval::expected_calibration_error(eval::calibration_table(p, y));
        losses[k] = log_loss(eta, y);
      });
      res.auc = eval::pool_scalar(aucs, auc_vars);
      res.ece = eval::pool_scalar(eces, std::vector<double>(eces.size(), 0.0));
      res.dev_log_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
      spdlog::warn("candidate {} skipped: {}", res.spec.name, e.what());
    }
    sel.table.push_back(std::move(res));
  }

  std::vector<std::size_t> ok;
  for (std::size_t c = 0; c < sel.table.size(); ++c) {
    if (sel.table[c].ok) ok.push_back(c);
  }
  if (ok.empty()) throw NumericalError("every candidate model failed to fit");

  double best_auc = -1;
  for (auto c : ok) best_auc = std::max(best_auc, sel.table[c].auc.mean);
  std::vector<std::size_t> tied;
  for (auto c : ok) {
    if (best_auc - sel.table[c].auc.mean < options.auc_tolerance) tied.push_back(c);
  }
  double best_ece = std::numeric_limits<double>::infinity();
  for (auto c : tied) best_ece = std::min(best_ece, sel.table[c].ece.mean);
  std::vector<std::size_t> finalists;
  for (auto c : tied) {
    if (sel.table[c].ece.mean - best_ece < options.ece_tolerance) finalists.push_back(c);
  }
  sel.chosen = *std::min_element(finalists.begin(), finalists.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = sel.table[a];
    const auto& rb = sel.table[b];
    if (ra.n_params != rb.n_params) return ra.n_params < rb.n_params;
    if (complexity_rank(ra.spec) != complexity_rank(rb.spec)) return complexity_rank(ra.spec) < complexity_rank(rb.spec);
    if (ra.auc.mean != rb.auc.mean) return ra.auc.mean > rb.auc.mean;
    return a < b;
  });
  sel.design = designs[sel.chosen];
  sel.train_model = pooled[sel.chosen];
  return sel;
}

PooledModel refit_final(const DesignTemplate& design, std::optional<double> lambda, const std::vector<Dataset>& train,
                        const std::vector<Dataset>& dev, const FitOptions& options) {
  if (train.empty() || train.size() != dev.size()) throw ConfigError("refit_final: train/dev copy counts differ");
  std::vector<Dataset> combined(train.size());
  for (std::size_t k = 0; k < train.size(); ++k) {
    combined[k] = dev[k].rows() == 0 ? train[k] : Dataset::concat(train[k], dev[k]);
  }
  auto fits = fit_copies(design, combined, lambda, options);
  const double complete_df = static_cast<double>(combined.front().rows()) - static_cast<double>(design.size());
  return pool_rubin(design, fits, complete_df);
}

}  // namespace framr::model
