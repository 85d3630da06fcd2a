#include "framr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "framr/csv.hpp"
#include "framr/errors.hpp"
#include "framr/seed.hpp"

namespace framr::synth {

namespace {

const boost::math::normal_distribution<double> kStdNormal;

double phi(double x) { return std::isfinite(x) ? boost::math::pdf(kStdNormal, x) : 0.0; }
double Phi(double x) {
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  return boost::math::cdf(kStdNormal, x);
}

struct Moments {
  double mean, sd;
};

Moments truncated_moments(double mu, double sigma, double lo, double hi) {
  const double a = (lo - mu) / sigma, b = (hi - mu) / sigma;
  const double z = Phi(b) - Phi(a);
  const double pa = phi(a), pb = phi(b);
  const double ta = std::isfinite(a) ? a * pa : 0.0, tb = std::isfinite(b) ? b * pb : 0.0;
  const double r = (pa - pb) / z;
  const double var = sigma * sigma * (1.0 + (ta - tb) / z - r * r);
  return {mu + sigma * r, std::sqrt(std::max(var, 0.0))};
}

double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Division keeps one-decimal values exact in their shortest printed form.
double round_tenth(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lo, double hi)
    : mu_(mu), sigma_(sigma), lo_(lo), hi_(hi) {
  if (!(sigma > 0) || !(lo < hi)) throw ConfigError("truncated normal needs sigma > 0 and lo < hi");
  cdf_lo_ = Phi((lo - mu) / sigma);
  cdf_hi_ = Phi((hi - mu) / sigma);
  if (!(cdf_hi_ > cdf_lo_)) throw ConfigError("truncated normal has no mass inside its bounds");
}

TruncatedNormal TruncatedNormal::with_moments(double mean, double sd, double lo, double hi) {
  if (!(mean > lo && mean < hi) || !(sd > 0)) throw ConfigError("truncated normal target moments out of range");
  // Damped Newton on (mu, log sigma) with a forward-difference Jacobian.
  double mu = mean, ls = std::log(sd);
  auto residual = [&](double m, double l) {
    auto mo = truncated_moments(m, std::exp(l), lo, hi);
    return std::array<double, 2>{mo.mean - mean, mo.sd - sd};
  };
  for (int it = 0; it < 200; ++it) {
    auto f = residual(mu, ls);
    const double norm = std::hypot(f[0], f[1]);
    if (norm < 1e-10 * sd) return TruncatedNormal(mu, std::exp(ls), lo, hi);
    const double h = 1e-6;
    auto fm = residual(mu + h * sd, ls), fl = residual(mu, ls + h);
    const double j00 = (fm[0] - f[0]) / (h * sd), j10 = (fm[1] - f[1]) / (h * sd);
    const double j01 = (fl[0] - f[0]) / h, j11 = (fl[1] - f[1]) / h;
    const double det = j00 * j11 - j01 * j10;
    if (!std::isfinite(det) || det == 0) break;
    const double dmu = (j11 * f[0] - j01 * f[1]) / det;
    const double dls = (j00 * f[1] - j10 * f[0]) / det;
    double step = 1.0;
    for (; step > 1e-6; step *= 0.5) {
      auto g = residual(mu - step * dmu, ls - step * dls);
      if (std::isfinite(g[0]) && std::hypot(g[0], g[1]) < norm) break;
    }
    if (step <= 1e-6) break;
    mu -= step * dmu;
    ls -= step * dls;
  }
  throw ConfigError("no truncated normal on [" + std::to_string(lo) + ", " + std::to_string(hi) + "] has mean " +
                    std::to_string(mean) + " and sd " + std::to_string(sd));
}

double TruncatedNormal::mean() const { return truncated_moments(mu_, sigma_, lo_, hi_).mean; }
double TruncatedNormal::sd() const { return truncated_moments(mu_, sigma_, lo_, hi_).sd; }

double TruncatedNormal::sample(Rng& rng) const {
  const double u = cdf_lo_ + (cdf_hi_ - cdf_lo_) * rng.uniform_open();
  const double x = mu_ + sigma_ * boost::math::quantile(kStdNormal, std::clamp(u, 1e-300, 1.0 - 1e-16));
  return std::clamp(x, lo_, hi_);
}

// ---------------------------------------------------------------------------
// Config

void GeneratorConfig::validate() const {
  auto prop = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("generator: ") + name + " must be in [0,1]");
  };
  if (n_patients == 0) throw ConfigError("generator: n_patients must be positive");
  const auto& d = demographics;
  if (!(d.age_sd > 0) || !(d.bmi_sd > 0)) throw ConfigError("generator: standard deviations must be positive");
  if (!(d.age_min < d.age_max) || !(d.bmi_min < d.bmi_max)) throw ConfigError("generator: bad truncation bounds");
  prop(d.female_fraction, "female_fraction");
  prop(indicator_prevalence.leg_injury, "leg_injury prevalence");
  prop(indicator_prevalence.osteoporosis, "osteoporosis prevalence");
  prop(missing_rates.birth_year, "missing_rates.birth_year");
  prop(missing_rates.bmi, "missing_rates.bmi");
  prop(missing_rates.systolic_bp, "missing_rates.systolic_bp");
  prop(prior_outcome_rate, "prior_outcome_rate");
  prop(confirmation_diagnosis_rate, "confirmation_diagnosis_rate");
  prop(implausible_injection, "implausible_injection");
  if (!(visit_rate > 0)) throw ConfigError("generator: visit_rate must be positive");
  if (window_start > window_end) throw ConfigError("generator: window start after end");
  if (followup_years < 1) throw ConfigError("generator: followup_years must be >= 1");
  if (outcome_code.empty()) throw ConfigError("generator: outcome_code is empty");
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  try {
    c.n_patients = j.value("n_patients", c.n_patients);
    c.seed = j.value("seed", c.seed);
    if (j.contains("demographics")) {
      const auto& d = j.at("demographics");
      auto& o = c.demographics;
      o.age_mean = d.value("age_mean", o.age_mean);
      o.age_sd = d.value("age_sd", o.age_sd);
      o.age_min = d.value("age_min", o.age_min);
      o.age_max = d.value("age_max", o.age_max);
      o.female_fraction = d.value("female_fraction", o.female_fraction);
      o.bmi_mean = d.value("bmi_mean", o.bmi_mean);
      o.bmi_sd = d.value("bmi_sd", o.bmi_sd);
      o.bmi_min = d.value("bmi_min", o.bmi_min);
      o.bmi_max = d.value("bmi_max", o.bmi_max);
    }
    if (j.contains("indicator_prevalence")) {
      const auto& p = j.at("indicator_prevalence");
      c.indicator_prevalence.leg_injury = p.value("leg_injury", c.indicator_prevalence.leg_injury);
      c.indicator_prevalence.osteoporosis = p.value("osteoporosis", c.indicator_prevalence.osteoporosis);
    }
    if (j.contains("missing_rates")) {
      const auto& m = j.at("missing_rates");
      auto& o = c.missing_rates;
      o.birth_year = m.value("birth_year", o.birth_year);
      o.bmi = m.value("bmi", o.bmi);
      o.systolic_bp = m.value("systolic_bp", o.systolic_bp);
      const auto mech = m.value("mechanism", std::string("mcar"));
      if (mech == "mcar") {
        o.mechanism = MissingMechanism::mcar;
      } else if (mech == "mar") {
        o.mechanism = MissingMechanism::mar;
      } else {
        throw ConfigError("generator: missing_rates.mechanism must be mcar or mar");
      }
      o.mar_age_slope = m.value("mar_age_slope", o.mar_age_slope);
    }
    if (j.contains("true_model")) {
      auto v = j.at("true_model").get<std::vector<double>>();
      if (v.size() != c.true_model.size()) throw ConfigError("generator: true_model needs 6 coefficients");
      std::copy(v.begin(), v.end(), c.true_model.begin());
    }
    c.bmi_quadratic = j.value("bmi_quadratic", c.bmi_quadratic);
    c.visit_rate = j.value("visit_rate", c.visit_rate);
    if (j.contains("window")) {
      const auto& w = j.at("window");
      if (w.contains("start_date")) c.window_start = Date::parse(w.at("start_date").get<std::string>());
      if (w.contains("end_date")) c.window_end = Date::parse(w.at("end_date").get<std::string>());
    }
    c.followup_years = j.value("followup_years", c.followup_years);
    c.outcome_code = j.value("outcome_code", c.outcome_code);
    c.prior_outcome_rate = j.value("prior_outcome_rate", c.prior_outcome_rate);
    c.confirmation_diagnosis_rate = j.value("confirmation_diagnosis_rate", c.confirmation_diagnosis_rate);
    c.implausible_injection = j.value("implausible_injection", c.implausible_injection);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json GeneratorConfig::to_json() const {
  const auto& d = demographics;
  return {
      {"n_patients", n_patients},
      {"seed", seed},
      {"demographics",
       {{"age_mean", d.age_mean},
        {"age_sd", d.age_sd},
        {"age_min", d.age_min},
        {"age_max", d.age_max},
        {"female_fraction", d.female_fraction},
        {"bmi_mean", d.bmi_mean},
        {"bmi_sd", d.bmi_sd},
        {"bmi_min", d.bmi_min},
        {"bmi_max", d.bmi_max}}},
      {"indicator_prevalence",
       {{"leg_injury", indicator_prevalence.leg_injury}, {"osteoporosis", indicator_prevalence.osteoporosis}}},
      {"missing_rates",
       {{"birth_year", missing_rates.birth_year},
        {"bmi", missing_rates.bmi},
        {"systolic_bp", missing_rates.systolic_bp},
        {"mechanism", missing_rates.mechanism == MissingMechanism::mcar ? "mcar" : "mar"},
        {"mar_age_slope", missing_rates.mar_age_slope}}},
      {"true_model", std::vector<double>(true_model.begin(), true_model.end())},
      {"bmi_quadratic", bmi_quadratic},
      {"visit_rate", visit_rate},
      {"window", {{"start_date", window_start.to_string()}, {"end_date", window_end.to_string()}}},
      {"followup_years", followup_years},
      {"outcome_code", outcome_code},
      {"prior_outcome_rate", prior_outcome_rate},
      {"confirmation_diagnosis_rate", confirmation_diagnosis_rate},
      {"implausible_injection", implausible_injection},
  };
}

double linear_predictor(const GeneratorConfig& config, const Covariates& c) {
  const auto& b = config.true_model;
  const double centred = c.bmi - config.demographics.bmi_mean;
  return b[0] + b[1] * c.age + b[2] * (c.female ? 1.0 : 0.0) + b[3] * c.bmi + b[4] * (c.leg_injury ? 1.0 : 0.0) +
         b[5] * (c.osteoporosis ? 1.0 : 0.0) + config.bmi_quadratic * centred * centred;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

using emr::SourceTable;

struct Samplers {
  TruncatedNormal age;
  TruncatedNormal bmi;

  explicit Samplers(const GeneratorConfig& c)
      : age(TruncatedNormal::with_moments(c.demographics.age_mean, c.demographics.age_sd, c.demographics.age_min,
                                          c.demographics.age_max)),
        bmi(TruncatedNormal::with_moments(c.demographics.bmi_mean, c.demographics.bmi_sd, c.demographics.bmi_min,
                                          c.demographics.bmi_max)) {}
};

struct Draw {
  double age_continuous;
  Covariates cov;
};

Draw draw_covariates(const GeneratorConfig& c, const Samplers& s, Rng& rng) {
  Draw d{};
  d.age_continuous = s.age.sample(rng);
  d.cov.age = static_cast<int>(std::clamp(std::round(d.age_continuous), c.demographics.age_min, c.demographics.age_max));
  d.cov.female = rng.bernoulli(c.demographics.female_fraction);
  d.cov.bmi = std::clamp(round_tenth(s.bmi.sample(rng)), c.demographics.bmi_min, c.demographics.bmi_max);
  d.cov.leg_injury = rng.bernoulli(c.indicator_prevalence.leg_injury);
  d.cov.osteoporosis = rng.bernoulli(c.indicator_prevalence.osteoporosis);
  return d;
}

constexpr std::array<SourceTable, 3> kCoded{SourceTable::billing, SourceTable::health_condition,
                                            SourceTable::encounter_diagnosis};
constexpr std::array<const char*, 8> kBenignCodes{"V70.0", "465.9", "780.79", "719.46", "272.4", "477.9", "786.2",
                                                  "724.2"};
constexpr std::array<const char*, 12> kLegInjuryCodes{"820", "821.01", "822.0", "823.80", "824.8", "825.0",
                                                      "826", "827.0", "828.0", "829.0", "843.9", "844.2"};
constexpr std::array<const char*, 3> kOsteoMeds{"Alendronic acid", "risedronic acid", "IBANDRONIC ACID"};

struct Chronic {
  const char* code;
  double base_logit;  // at age 50
  double per_decade;
};
constexpr std::array<Chronic, 5> kChronic{{{"250.00", -2.3, 0.45},
                                           {"401.9", -1.2, 0.6},
                                           {"496", -3.2, 0.4},
                                           {"428.0", -4.0, 0.7},
                                           {"311", -2.4, 0.0}}};

struct PatientOut {
  emr::PatientDemographics demo;
  std::vector<emr::Encounter> encounters;
  std::vector<emr::CodedRecord> coded;
  std::vector<emr::RiskFactorEntry> risk_factors;
  std::vector<emr::MedicationRecord> medications;
  std::vector<emr::Measurement> measurements;
  TruthRow truth;
  double age_continuous = 0;
};

std::string patient_id(std::size_t i, std::size_t n) {
  std::string digits = std::to_string(i + 1);
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n).size());
  return "P" + std::string(width - digits.size(), '0') + digits;
}

Date random_date(Rng& rng, Date first, Date last) {
  const auto span = days_between(first, last);
  if (span <= 0) return first;
  return first.plus_days(static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(span) + 1)));
}

SourceTable random_source(Rng& rng) { return kCoded[rng.below(kCoded.size())]; }

PatientOut generate_patient(const GeneratorConfig& c, const Samplers& s, std::size_t i, Rng& rng) {
  PatientOut p;
  const std::string pid = patient_id(i, c.n_patients);
  const Draw draw = draw_covariates(c, s, rng);
  p.age_continuous = draw.age_continuous;
  const Covariates& cov = draw.cov;

  // Encounters: homogeneous Poisson process with visit_rate per year.
  const Date span_start = c.window_start.plus_years(-5);
  const Date span_end = c.window_end.plus_years(c.followup_years + 1);
  const double per_day = c.visit_rate / 365.25;
  double t = rng.exponential(per_day);
  std::vector<Date> visits;
  while (t <= days_between(span_start, span_end)) {
    Date d = span_start.plus_days(static_cast<std::int32_t>(t));
    if (visits.empty() || visits.back() != d) visits.push_back(d);
    t += rng.exponential(per_day);
  }
  for (std::size_t k = 0; k < visits.size(); ++k) {
    p.encounters.push_back({pid + "-E" + std::to_string(k + 1), pid, visits[k]});
    if (rng.bernoulli(0.3)) {
      p.coded.push_back({pid, visits[k], kBenignCodes[rng.below(kBenignCodes.size())], SourceTable::billing});
    }
  }

  std::optional<Date> index;
  for (Date d : visits) {
    if (d >= c.window_start && d <= c.window_end) {
      index = d;
      break;
    }
  }
  const Date ref = index.value_or(c.window_start);
  const Date followup_end = ref.plus_years(c.followup_years);
  std::optional<Date> confirmation;
  for (Date d : visits) {
    if (d > followup_end) {
      confirmation = d;
      break;
    }
  }

  p.demo = {pid, ref.year() - cov.age, cov.female ? emr::Sex::female : emr::Sex::male};

  // Baseline indicators, dated on or before the reference date.
  const Date lookback = ref.plus_years(-5);
  if (cov.leg_injury) {
    p.coded.push_back({pid, random_date(rng, lookback, ref), kLegInjuryCodes[rng.below(kLegInjuryCodes.size())],
                       random_source(rng)});
  }
  if (cov.osteoporosis) {
    const Date d = random_date(rng, lookback, ref);
    switch (rng.below(3)) {
      case 0: p.coded.push_back({pid, d, rng.bernoulli(0.5) ? "733.0" : "733.00", random_source(rng)}); break;
      case 1: p.risk_factors.push_back({pid, d, rng.bernoulli(0.5) ? "Osteoporosis" : "postmenopausal osteoporosis"});
        break;
      default: p.medications.push_back({pid, d, kOsteoMeds[rng.below(kOsteoMeds.size())]}); break;
    }
  }
  // Chronic conditions (imputation auxiliaries), onset anywhere in the record span.
  for (const auto& ch : kChronic) {
    const double pr = inv_logit(ch.base_logit + ch.per_decade * (draw.age_continuous - 50.0) / 10.0);
    if (rng.bernoulli(pr)) p.coded.push_back({pid, random_date(rng, span_start, followup_end), ch.code, random_source(rng)});
  }

  // Measurements at the index (or first) visit; sometimes repeated at another visit.
  const Date measured_on = index ? *index : (visits.empty() ? ref : visits.front());
  p.measurements.push_back({pid, measured_on, std::string(emr::kBmi), cov.bmi});
  if (!visits.empty() && rng.bernoulli(0.5)) {
    p.measurements.push_back({pid, visits[rng.below(visits.size())], std::string(emr::kBmi), cov.bmi});
  }
  const double sbp = std::clamp(std::round(90.0 + 0.6 * draw.age_continuous + 0.4 * cov.bmi + rng.normal(0, 12)),
                                70.0, 240.0);
  p.measurements.push_back({pid, measured_on, std::string(emr::kSystolicBp), sbp});

  // Outcome.
  auto& tr = p.truth;
  tr.patient_id = pid;
  tr.index_date = index;
  tr.covariates = cov;
  tr.linear_predictor = linear_predictor(c, cov);
  tr.probability = inv_logit(tr.linear_predictor);
  tr.event = rng.bernoulli(tr.probability);
  if (tr.event) {
    tr.event_date = ref.plus_days(1 + static_cast<std::int32_t>(rng.below(days_between(ref, followup_end))));
    p.coded.push_back({pid, *tr.event_date, c.outcome_code, random_source(rng)});
  }
  const bool prior = rng.bernoulli(c.prior_outcome_rate);
  if (prior) p.coded.push_back({pid, random_date(rng, lookback, ref.plus_days(-1)), c.outcome_code, random_source(rng)});
  const bool at_confirmation = !tr.event && confirmation && rng.bernoulli(c.confirmation_diagnosis_rate);
  if (at_confirmation) p.coded.push_back({pid, *confirmation, c.outcome_code, random_source(rng)});
  tr.eligible = index && confirmation && !prior && !at_confirmation;

  auto by_date = [](const auto& a, const auto& b) { return a.date < b.date; };
  std::stable_sort(p.coded.begin(), p.coded.end(), by_date);
  std::stable_sort(p.measurements.begin(), p.measurements.end(), by_date);
  return p;
}

// Intercept giving mean missingness `rate` under logit(alpha + slope * z).
double mar_intercept(const std::vector<double>& z, double slope, double rate) {
  if (rate <= 0) return -std::numeric_limits<double>::infinity();
  if (rate >= 1) return std::numeric_limits<double>::infinity();
  double lo = -50, hi = 50;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double m = 0;
    for (double v : z) m += inv_logit(mid + slope * v);
    (m / z.size() < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void apply_missingness(const GeneratorConfig& c, std::vector<PatientOut>& patients) {
  const auto& mr = c.missing_rates;
  std::vector<double> z(patients.size());
  for (std::size_t i = 0; i < patients.size(); ++i) {
    z[i] = (patients[i].age_continuous - c.demographics.age_mean) / c.demographics.age_sd;
  }
  const bool mar = mr.mechanism == MissingMechanism::mar;
  const double slope = mar ? mr.mar_age_slope : 0.0;
  const double a_bmi = mar ? mar_intercept(z, slope, mr.bmi) : 0.0;
  const double a_sbp = mar ? mar_intercept(z, slope, mr.systolic_bp) : 0.0;
  const std::uint64_t stream = derive_seed(c.seed, "missingness");

  for (std::size_t i = 0; i < patients.size(); ++i) {
    auto& p = patients[i];
    Rng rng(derive_seed(stream, i));
    const double u_birth = rng.uniform(), u_bmi = rng.uniform(), u_sbp = rng.uniform();
    const double u_inject = rng.uniform(), u_which = rng.uniform();
    const double p_bmi = mar ? inv_logit(a_bmi + slope * z[i]) : mr.bmi;
    const double p_sbp = mar ? inv_logit(a_sbp + slope * z[i]) : mr.systolic_bp;
    if (u_birth < mr.birth_year) p.demo.birth_year.reset();
    auto drop = [&](std::string_view kind) {
      std::erase_if(p.measurements, [&](const emr::Measurement& m) { return m.kind == kind; });
    };
    if (u_bmi < p_bmi) drop(emr::kBmi);
    if (u_sbp < p_sbp) drop(emr::kSystolicBp);

    if (u_inject < c.implausible_injection) {
      if (u_which < 0.5 && p.demo.birth_year) {
        p.demo.birth_year = 0;
      } else {
        for (auto& m : p.measurements) {
          if (m.kind == emr::kBmi) m.value = u_which < 0.75 ? 150.0 : 5.0;
        }
      }
    }
  }
}

}  // namespace

Generated generate(const GeneratorConfig& config) {
  config.validate();
  const Samplers samplers(config);
  const std::uint64_t stream = derive_seed(config.seed, "generator");
  std::vector<PatientOut> patients(config.n_patients);
  const auto n = static_cast<std::ptrdiff_t>(config.n_patients);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(i)));
    patients[i] = generate_patient(config, samplers, static_cast<std::size_t>(i), rng);
  }
  apply_missingness(config, patients);

  Generated g;
  g.truth.coefficients = config.true_model;
  auto& t = g.tables;
  for (auto& p : patients) {
    t.patients.push_back(std::move(p.demo));
    std::move(p.encounters.begin(), p.encounters.end(), std::back_inserter(t.encounters));
    std::move(p.coded.begin(), p.coded.end(), std::back_inserter(t.coded));
    std::move(p.risk_factors.begin(), p.risk_factors.end(), std::back_inserter(t.risk_factors));
    std::move(p.medications.begin(), p.medications.end(), std::back_inserter(t.medications));
    std::move(p.measurements.begin(), p.measurements.end(), std::back_inserter(t.measurements));
    g.truth.rows.push_back(std::move(p.truth));
  }
  return g;
}

void GroundTruth::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"patient_id", "linear_predictor", "probability", "event", "event_date", "index_date",
                       "eligible", "age", "sex", "bmi", "leg_injury", "osteoporosis"});
  for (const auto& r : rows) {
    const auto& c = r.covariates;
    csv::write_row(out, {r.patient_id, csv::format_double(r.linear_predictor), csv::format_double(r.probability),
                         r.event ? "1" : "0", r.event_date ? r.event_date->to_string() : "",
                         r.index_date ? r.index_date->to_string() : "", r.eligible ? "1" : "0",
                         std::to_string(c.age), c.female ? "1" : "0", csv::format_double(c.bmi),
                         c.leg_injury ? "1" : "0", c.osteoporosis ? "1" : "0"});
  }
}

void write_generated(const Generated& g, const GeneratorConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  emr::write_tables(g.tables, dir);
  g.truth.write_csv(dir / "ground_truth.csv");
  std::ofstream out(dir / "generator_config.json", std::ios::binary);
  out << config.to_json().dump(2) << '\n';
}

Dataset sample_population(const GeneratorConfig& config, std::size_t n, std::uint64_t seed) {
  config.validate();
  const Samplers samplers(config);
  Rng rng(seed);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  std::vector<double> age(n), sex(n), bmi(n), leg(n), osteo(n), lp(n), prob(n), outcome(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Covariates c = draw_covariates(config, samplers, rng).cov;
    age[i] = c.age;
    sex[i] = c.female;
    bmi[i] = c.bmi;
    leg[i] = c.leg_injury;
    osteo[i] = c.osteoporosis;
    lp[i] = linear_predictor(config, c);
    prob[i] = inv_logit(lp[i]);
    outcome[i] = rng.bernoulli(prob[i]);
  }
  Dataset d(std::move(ids));
  d.add_column({"age", VarType::continuous, std::move(age)});
  d.add_column({"sex", VarType::binary, std::move(sex)});
  d.add_column({"bmi", VarType::continuous, std::move(bmi)});
  d.add_column({"leg_injury", VarType::binary, std::move(leg)});
  d.add_column({"osteoporosis", VarType::binary, std::move(osteo)});
  d.add_column({"linear_predictor", VarType::continuous, std::move(lp)});
  d.add_column({"probability", VarType::continuous, std::move(prob)});
  d.add_column({"outcome", VarType::binary, std::move(outcome)});
  return d;
}

}  // namespace framr::synth
