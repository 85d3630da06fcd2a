#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "framr/errors.hpp"
#include "framr/evaluation.hpp"
#include "framr/kernels.hpp"
#include "framr/log.hpp"
#include "pipeline.hpp"

#ifndef FRAMR_DATA_DIR
#define FRAMR_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace framr;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
};

pipeline::PipelineConfig load_config(const Globals& g) {
  auto c = g.config.empty() ? pipeline::PipelineConfig{} : pipeline::PipelineConfig::load(g.config);
  if (g.seed_set) c.set_seed(g.seed);
  return c;
}

// "female"/"male" are accepted for sex; every other value must be numeric.
std::map<std::string, double> parse_record(const std::vector<std::string>& pairs, const std::string& file) {
  std::map<std::string, double> rec;
  auto put = [&](const std::string& k, const std::string& v) {
    if (k == "sex" && (v == "female" || v == "male")) {
      rec[k] = v == "female" ? 1.0 : 0.0;
      return;
    }
    try {
      std::size_t used = 0;
      rec[k] = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("value for '" + k + "' is not a number: " + v);
    }
  };
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read record " + file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(file + ": " + e.what());
    }
    for (const auto& [k, v] : j.items()) {
      if (v.is_null()) continue;  // absent covariate
      put(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expected name=value, got '" + p + "'");
    put(p.substr(0, eq), p.substr(eq + 1));
  }
  return rec;
}

}  // namespace

int main(int argc, char** argv) {
  log::init_from_env();
  CLI::App app{"framr: EMR risk-model pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Master seed (overrides the config)");
  app.add_option("--jobs", g.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  std::string out, data, cohort_dir, impute_dir, model_path;
  auto out_opt = [&](CLI::App* s) { s->add_option("--out", out, "Output directory")->required(); };

  auto* gen = app.add_subcommand("generate", "Write a synthetic EMR extract with planted truth");
  out_opt(gen);
  std::size_t n_patients = 0;
  gen->add_option("--patients", n_patients, "Override the patient count");

  auto* qual = app.add_subcommand("quality", "Plausibility, concordance and currency checks");
  qual->add_option("--data", data, "Extract directory")->required()->check(CLI::ExistingDirectory);
  out_opt(qual);

  auto* coh = app.add_subcommand("cohort", "Build the retrospective cohort and exclusion tally");
  coh->add_option("--data", data, "Extract directory")->required()->check(CLI::ExistingDirectory);
  out_opt(coh);

  auto* imp = app.add_subcommand("impute", "Multiple imputation and train/dev/validation partition");
  imp->add_option("--cohort", cohort_dir, "Cohort stage directory")->required()->check(CLI::ExistingDirectory);
  out_opt(imp);

  auto* fit = app.add_subcommand("fit", "Model selection on dev, final refit on train+dev");
  fit->add_option("--impute", impute_dir, "Impute stage directory")->required()->check(CLI::ExistingDirectory);
  out_opt(fit);

  auto* ev = app.add_subcommand("evaluate", "Pooled discrimination and calibration on validation");
  ev->add_option("--model", model_path, "model.json")->required()->check(CLI::ExistingFile);
  ev->add_option("--impute", impute_dir, "Impute stage directory")->required()->check(CLI::ExistingDirectory);
  out_opt(ev);

  auto* ss = app.add_subcommand("samplesize", "Cases/controls needed to detect an AUC above 0.5");
  double ss_auc = 0.55, ss_alpha = 0.05, ss_power = 0.80, ss_ratio = 10.0;
  ss->add_option("--auc", ss_auc, "Alternative AUC")->capture_default_str();
  ss->add_option("--alpha", ss_alpha, "Two-sided significance level")->capture_default_str();
  ss->add_option("--power", ss_power, "Power")->capture_default_str();
  ss->add_option("--ratio", ss_ratio, "Controls per case")->capture_default_str();

  auto* sim = app.add_subcommand("simulate-missingness", "Imputation reliability under artificial deletion");
  sim->add_option("--cohort", cohort_dir, "Cohort stage directory")->required()->check(CLI::ExistingDirectory);
  out_opt(sim);
  std::string sim_target, sim_mech, sim_cov;
  int sim_reps = 0;
  sim->add_option("--target", sim_target, "Variable to delete and impute");
  sim->add_option("--mechanism", sim_mech, "mcar or mar")->check(CLI::IsMember({"mcar", "mar"}));
  sim->add_option("--covariate", sim_cov, "Covariate driving mar deletion");
  sim->add_option("--replications", sim_reps, "Replications per rate")->check(CLI::PositiveNumber);

  auto* sc = app.add_subcommand("score", "Risk for one patient record");
  model_path = (fs::path(FRAMR_DATA_DIR) / "published_model.json").string();
  std::string record_file;
  std::vector<std::string> pairs;
  sc->add_option("--model", model_path, "model.json (default: the bundled published model)")->capture_default_str();
  sc->add_option("--record", record_file, "JSON object of covariates")->check(CLI::ExistingFile);
  sc->add_option("values", pairs, "name=value pairs, e.g. age=60 sex=female bmi=28");

  auto* all = app.add_subcommand("run-all", "generate/quality/cohort/impute/fit/evaluate in one go");
  out_opt(all);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (g.jobs > 0) kernels::set_threads(g.jobs);
    auto cfg = load_config(g);
    if (*gen) {
      if (n_patients > 0) cfg.generator.n_patients = n_patients;
      pipeline::run_generate(cfg, out);
    } else if (*qual) {
      pipeline::run_quality(cfg, data, out);
    } else if (*coh) {
      pipeline::run_cohort(cfg, data, out);
    } else if (*imp) {
      pipeline::run_impute(cfg, cohort_dir, out);
    } else if (*fit) {
      pipeline::run_fit(cfg, impute_dir, out);
    } else if (*ev) {
      pipeline::run_evaluate(cfg, model_path, impute_dir, out);
    } else if (*ss) {
      const auto r = eval::sample_size_auc(ss_auc, ss_alpha, ss_power, ss_ratio);
      std::cout << json{{"auc", ss_auc},     {"alpha", ss_alpha},       {"power", ss_power},
                        {"ratio", ss_ratio}, {"raw_cases", r.raw},      {"cases", r.n_cases},
                        {"controls", r.n_controls}}
                       .dump(2)
                << "\n";
    } else if (*sim) {
      if (!sim_target.empty()) cfg.simulation_target = sim_target;
      if (!sim_mech.empty()) cfg.simulation.mechanism = sim_mech == "mar" ? impute::Mechanism::mar : impute::Mechanism::mcar;
      if (!sim_cov.empty()) cfg.simulation.mar_covariate = sim_cov;
      if (sim_reps > 0) cfg.simulation.replications = sim_reps;
      cfg.simulation.validate();
      pipeline::run_simulation(cfg, cohort_dir, out);
    } else if (*sc) {
      std::ifstream in(model_path);
      if (!in) throw ConfigError("cannot read model " + model_path);
      json mj;
      try {
        mj = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(model_path + ": " + e.what());
      }
      const auto pm = model::PooledModel::from_json(mj);
      const auto rec = parse_record(pairs, record_file);
      const double p = pm.score(rec);
      std::cout << json{{"model", pm.design.spec().name}, {"probability", p}, {"logit", std::log(p / (1.0 - p))}}.dump(2)
                << "\n";
    } else if (*all) {
      pipeline::run_all(cfg, out);
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 1;
  } catch (const rules::ParseError& e) {
    spdlog::error("definitions: {}", e.what());
    return 1;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return 2;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("data error: {}", e.what());
    return 2;
  }
  return 0;
}
