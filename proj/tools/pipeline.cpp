#include "pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "framr/csv.hpp"
#include "framr/errors.hpp"
#include "framr/seed.hpp"

namespace framr::pipeline {

namespace {

using nlohmann::json;

const std::set<std::string> kTopKeys{"seed",      "data_dir",   "definitions", "schema",    "generator",
                                     "quality",   "cohort",     "imputation",  "partition", "candidates",
                                     "selection", "level",      "planning",    "simulation"};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

quality::VariableKind kind_from(const std::string& s) {
  if (s == "continuous") return quality::VariableKind::continuous;
  if (s == "event") return quality::VariableKind::event;
  throw ConfigError("concordance kind must be continuous or event");
}

// Hashes of every file under `dir` except its own manifest.
json artifact_hashes(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f] = file_sha256(dir / f);
  return out;
}

void write_manifest(const fs::path& out, std::string_view stage, const PipelineConfig& config,
                    std::uint64_t stage_seed, const std::map<std::string, fs::path>& inputs) {
  json in = json::object();
  for (const auto& [name, dir] : inputs) {
    const auto m = dir / "manifest.json";
    in[name] = fs::exists(m) ? json(file_sha256(m)) : json(nullptr);
  }
  write_json(out / "manifest.json", {{"stage", stage},
                                     {"framr_version", "0.1.0"},
                                     {"seed", config.seed},
                                     {"stage_seed", stage_seed},
                                     {"config_sha256", config.hash()},
                                     {"inputs", in},
                                     {"artifacts", artifact_hashes(out)}});
}

void warn_small(std::string_view set, const Dataset& d, const Planning& plan) {
  const auto need = eval::sample_size_auc(plan.auc, plan.alpha, plan.power, plan.controls_per_case);
  std::size_t cases = 0;
  for (double y : d.column(model::kOutcome).values) cases += y == 1.0;
  const std::size_t controls = d.rows() - cases;
  if (cases < need.n_cases || controls < need.n_controls) {
    spdlog::warn("{} set has {} cases / {} controls; detecting AUC {} at power {} needs {} / {}", set, cases,
                 controls, plan.auc, plan.power, need.n_cases, need.n_controls);
  }
}

Dataset load_analysis(const PipelineConfig& config, const fs::path& cohort_dir) {
  return cohort::Cohort::read_csv(cohort_dir / "cohort.csv", config.cohort).analysis_dataset();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!kTopKeys.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  // Section keys are checked against the serialized defaults. Stage seeds
  // always come from the master seed, so a section-level "seed" is rejected.
  const json defaults = PipelineConfig{}.to_json();
  auto check_keys = [](const json& given, const json& known, const std::string& where) {
    if (!given.is_object()) throw ConfigError("config key '" + where + "' must be an object");
    for (const auto& [k, _] : given.items()) {
      if (k == "seed" || !known.contains(k)) throw ConfigError("unknown config key '" + where + "." + k + "'");
    }
  };
  for (const char* section : {"generator", "quality", "cohort", "imputation", "partition", "selection", "planning",
                              "simulation"}) {
    if (j.contains(section)) check_keys(j.at(section), defaults.at(section), section);
  }
  if (j.contains("simulation") && j.at("simulation").contains("imputation")) {
    check_keys(j.at("simulation").at("imputation"), defaults.at("imputation"), "simulation.imputation");
  }
  PipelineConfig c;
  auto resolve = [&](const std::string& s) { return fs::path(s).is_absolute() || base.empty() ? fs::path(s) : base / s; };
  try {
    if (j.contains("data_dir")) c.data_dir = resolve(j.at("data_dir").get<std::string>());
    if (j.contains("definitions")) c.definitions = resolve(j.at("definitions").get<std::string>());
    if (j.contains("schema")) c.schema = emr::SchemaConfig::from_json(j.at("schema"));
    if (j.contains("generator")) c.generator = synth::GeneratorConfig::from_json(j.at("generator"));
    if (j.contains("quality")) {
      const auto& q = j.at("quality");
      if (q.contains("as_of")) {
        const auto d = Date::try_parse(q.at("as_of").get<std::string>());
        if (!d) throw ConfigError("quality.as_of is not a YYYY-MM-DD date");
        c.quality.as_of = *d;
      }
      c.quality.max_staleness_days = q.value("max_staleness_days", c.quality.max_staleness_days);
      if (q.contains("plausibility")) {
        for (const auto& r : q.at("plausibility")) {
          c.quality.plausibility.push_back({r.at("target"), r.at("min"), r.at("max")});
        }
      }
      if (q.contains("concordance")) {
        c.quality.concordance.clear();
        for (const auto& v : q.at("concordance")) {
          c.quality.concordance.push_back({v.at("variable"), kind_from(v.value("kind", std::string("continuous"))),
                                           v.at("sources").get<std::vector<std::string>>(), v.value("tolerance", 5.0)});
        }
      }
    }
    if (j.contains("cohort")) c.cohort = cohort::CohortConfig::from_json(j.at("cohort"));
    if (j.contains("imputation")) c.imputation = impute::ImputationConfig::from_json(j.at("imputation"));
    if (j.contains("partition")) {
      const auto& p = j.at("partition");
      c.partition.train = p.value("train", c.partition.train);
      c.partition.dev = p.value("dev", c.partition.dev);
      c.partition.validation = p.value("validation", c.partition.validation);
    }
    if (j.contains("candidates")) {
      c.candidates.clear();
      for (const auto& s : j.at("candidates")) c.candidates.push_back(model::ModelSpec::from_json(s));
      if (c.candidates.empty()) throw ConfigError("candidates must not be empty");
    }
    if (j.contains("selection")) {
      const auto& s = j.at("selection");
      c.selection.auc_tolerance = s.value("auc_tolerance", c.selection.auc_tolerance);
      c.selection.ece_tolerance = s.value("ece_tolerance", c.selection.ece_tolerance);
      c.selection.fit.max_iter = s.value("max_iter", c.selection.fit.max_iter);
    }
    c.level = j.value("level", c.level);
    if (j.contains("planning")) {
      const auto& p = j.at("planning");
      c.planning.auc = p.value("auc", c.planning.auc);
      c.planning.alpha = p.value("alpha", c.planning.alpha);
      c.planning.power = p.value("power", c.planning.power);
      c.planning.controls_per_case = p.value("controls_per_case", c.planning.controls_per_case);
    }
    if (j.contains("simulation")) {
      json s = j.at("simulation");
      c.simulation_target = s.value("target", c.simulation_target);
      s.erase("target");
      c.simulation = impute::SimulationConfig::from_json(s);
    }
    c.set_seed(j.value("seed", kDefaultSeed));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(c.level > 0 && c.level < 1)) throw ConfigError("level must lie in (0, 1)");
  c.partition.validate();
  c.cohort.validate();
  c.generator.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json PipelineConfig::to_json() const {
  json q{{"as_of", quality.as_of.to_string()}, {"max_staleness_days", quality.max_staleness_days}};
  q["plausibility"] = json::array();
  for (const auto& r : quality.plausibility) q["plausibility"].push_back({{"target", r.target}, {"min", r.min}, {"max", r.max}});
  q["concordance"] = json::array();
  for (const auto& v : quality.concordance) {
    q["concordance"].push_back({{"variable", v.variable},
                                {"kind", v.kind == quality::VariableKind::event ? "event" : "continuous"},
                                {"sources", v.sources},
                                {"tolerance", v.tolerance}});
  }
  json cands = json::array();
  for (const auto& s : candidates) cands.push_back(s.to_json());
  json sim = simulation.to_json();
  sim["target"] = simulation_target;
  json j{{"seed", seed},
         {"schema", schema.to_json()},
         {"generator", generator.to_json()},
         {"quality", q},
         {"cohort", cohort.to_json()},
         {"imputation", imputation.to_json()},
         {"partition", {{"train", partition.train}, {"dev", partition.dev}, {"validation", partition.validation}}},
         {"candidates", cands},
         {"selection",
          {{"auc_tolerance", selection.auc_tolerance},
           {"ece_tolerance", selection.ece_tolerance},
           {"max_iter", selection.fit.max_iter}}},
         {"level", level},
         {"planning",
          {{"auc", planning.auc},
           {"alpha", planning.alpha},
           {"power", planning.power},
           {"controls_per_case", planning.controls_per_case}}},
         {"simulation", sim}};
  if (data_dir) j["data_dir"] = data_dir->generic_string();
  if (definitions) j["definitions"] = definitions->generic_string();
  return j;
}

void PipelineConfig::set_seed(std::uint64_t master) {
  seed = master;
  generator.seed = derive_seed(master, "generate");
  imputation.seed = derive_seed(master, "impute");
  partition.seed = derive_seed(master, "partition");
  simulation.seed = derive_seed(master, "simulate");
  simulation.imputation.seed = derive_seed(master, "simulate-impute");
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return s.str();
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_text(path)); }

rules::DefinitionSet load_definitions(const PipelineConfig& config) {
  if (!config.definitions) return rules::DefinitionSet(rules::parse_definitions(rules::default_definitions_text()));
  try {
    return rules::DefinitionSet(rules::parse_definitions(read_text(*config.definitions)));
  } catch (const DataError&) {
    throw ConfigError("cannot read definitions file " + config.definitions->string());
  }
}

// ---------------------------------------------------------------------------
// Stages

void run_generate(const PipelineConfig& config, const fs::path& out) {
  spdlog::info("generate: {} patients", config.generator.n_patients);
  fs::create_directories(out);
  const auto g = synth::generate(config.generator);
  synth::write_generated(g, config.generator, out);
  write_manifest(out, "generate", config, config.generator.seed, {});
}

void run_quality(const PipelineConfig& config, const fs::path& data_dir, const fs::path& out) {
  spdlog::info("quality: {}", data_dir.string());
  fs::create_directories(out);
  const auto store = emr::ingest(data_dir, config.schema);
  const auto rules =
      config.quality.plausibility.empty() ? quality::default_rules(config.quality.as_of.year()) : config.quality.plausibility;
  auto [clean, report] = quality::apply_plausibility(store, rules);
  report.concordance = quality::concordance_report(clean, config.quality.concordance, &report.concordance_skipped);
  report.currency = quality::currency_check(clean, config.quality.as_of, config.quality.max_staleness_days);
  if (!report.currency->pass) {
    spdlog::warn("extract is {} days stale as of {} (limit {})", report.currency->staleness_days,
                 config.quality.as_of.to_string(), config.quality.max_staleness_days);
  }
  emr::write_tables(clean.tables(), out / "data", config.schema);
  write_json(out / "quality_report.json", report.to_json());
  write_text(out / "quality_report.txt", report.to_text());
  write_manifest(out, "quality", config, 0, {{"data", data_dir}});
}

void run_cohort(const PipelineConfig& config, const fs::path& data_dir, const fs::path& out) {
  spdlog::info("cohort: {}", data_dir.string());
  fs::create_directories(out);
  const auto store = emr::ingest(data_dir, config.schema);
  const auto defs = load_definitions(config);
  const auto c = cohort::build_cohort(store, defs, config.cohort);
  c.write_csv(out / "cohort.csv");
  c.analysis_dataset().write_csv(out / "analysis.csv");
  write_json(out / "exclusions.json", c.tally.to_json());
  // The quality stage nests its cleaned tables one level down.
  write_manifest(out, "cohort", config, 0, {{"data", data_dir.filename() == "data" ? data_dir.parent_path() : data_dir}});
}

void run_impute(const PipelineConfig& config, const fs::path& cohort_dir, const fs::path& out) {
  spdlog::info("impute: m = {}, cycles = {}", config.imputation.m, config.imputation.cycles);
  fs::create_directories(out);
  const auto data = load_analysis(config, cohort_dir);
  const auto set = impute::impute(data, config.imputation);
  set.write(out);
  const auto labels = eval::partition(data.rows(), config.partition);
  std::ofstream p(out / "partition.csv", std::ios::binary);
  csv::write_row(p, {"patient_id", "set"});
  for (std::size_t r = 0; r < labels.size(); ++r) csv::write_row(p, {data.row_ids()[r], std::string(eval::to_string(labels[r]))});
  p.close();
  write_manifest(out, "impute", config, config.imputation.seed, {{"cohort", cohort_dir}});
}

Splits load_splits(const fs::path& impute_dir) {
  const auto set = impute::ImputedSet::read(impute_dir);
  const auto part = csv::read_file(impute_dir / "partition.csv");
  const auto& ids = set.copies.front().row_ids();
  if (part.rows.size() != ids.size()) throw DataError("partition.csv does not match the imputed copies");
  std::vector<eval::Part> labels;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (part.rows[r].fields.at(0) != ids[r]) throw DataError("partition.csv row order differs from the copies");
    labels.push_back(eval::part_from_string(part.rows[r].fields.at(1)));
  }
  Splits s;
  const auto tr = eval::rows_with(labels, eval::Part::train);
  const auto dv = eval::rows_with(labels, eval::Part::dev);
  const auto va = eval::rows_with(labels, eval::Part::validation);
  for (const auto& c : set.copies) {
    s.train.push_back(c.select_rows(tr));
    s.dev.push_back(c.select_rows(dv));
    s.validation.push_back(c.select_rows(va));
  }
  return s;
}

void run_fit(const PipelineConfig& config, const fs::path& impute_dir, const fs::path& out) {
  fs::create_directories(out);
  const auto splits = load_splits(impute_dir);
  spdlog::info("fit: {} candidates on {} copies ({} train / {} dev rows)", config.candidates.size(),
               splits.train.size(), splits.train.front().rows(), splits.dev.front().rows());
  warn_small("development", splits.dev.front(), config.planning);
  const auto sel = model::select_model(config.candidates, splits.train, splits.dev, config.selection);
  spdlog::info("fit: selected {}", sel.winner().spec.name);
  const auto final_model = model::refit_final(sel.design, sel.winner().lambda, splits.train, splits.dev, config.selection.fit);
  write_json(out / "selection.json", sel.to_json());
  write_json(out / "model.json", final_model.to_json());

  std::ofstream coef(out / "coefficients.csv", std::ios::binary);
  csv::write_row(coef, {"term", "estimate", "se", "ci_low", "ci_high"});
  const auto ci = final_model.intervals(config.level);
  for (Eigen::Index k = 0; k < final_model.beta.size(); ++k) {
    csv::write_row(coef, {final_model.names[k], csv::format_double(final_model.beta[k]),
                          csv::format_double(std::sqrt(final_model.total[k])), csv::format_double(ci[k].first),
                          csv::format_double(ci[k].second)});
  }
  coef.close();
  write_manifest(out, "fit", config, 0, {{"impute", impute_dir}});
}

void run_evaluate(const PipelineConfig& config, const fs::path& model_path, const fs::path& impute_dir,
                  const fs::path& out) {
  fs::create_directories(out);
  const auto pm = model::PooledModel::from_json(read_json(model_path));
  const auto splits = load_splits(impute_dir);
  spdlog::info("evaluate: {} validation rows x {} copies", splits.validation.front().rows(), splits.validation.size());
  warn_small("validation", splits.validation.front(), config.planning);
  const auto report = eval::evaluate_pooled(pm, splits.validation, config.level);
  write_json(out / "evaluation.json", report.to_json());
  report.write_calibration_csv(out / "calibration.csv");
  report.write_roc_csv(out / "roc.csv");
  write_manifest(out, "evaluate", config, 0, {{"model", model_path.parent_path()}, {"impute", impute_dir}});
}

void run_simulation(const PipelineConfig& config, const fs::path& cohort_dir, const fs::path& out) {
  fs::create_directories(out);
  const auto data = load_analysis(config, cohort_dir);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    bool ok = true;
    for (const auto& c : data.columns()) ok = ok && !c.missing(r);
    if (ok) rows.push_back(r);
  }
  spdlog::info("simulate-missingness: {} complete cases, target {}", rows.size(), config.simulation_target);
  const auto table = impute::missingness_simulation(data.select_rows(rows), config.simulation_target, config.simulation);
  write_json(out / "simulation.json", {{"target", config.simulation_target},
                                       {"complete_cases", rows.size()},
                                       {"config", config.simulation.to_json()},
                                       {"rows", impute::to_json(table)}});
  std::ofstream csv_out(out / "simulation.csv", std::ios::binary);
  csv::write_row(csv_out, {"rate", "replications", "rmse", "rmse_se", "bias", "bias_se", "coverage", "deleted_fraction"});
  for (const auto& r : table) {
    std::vector<std::string> f;
    for (double v : {r.rate, static_cast<double>(r.replications), r.rmse, r.rmse_se, r.bias, r.bias_se, r.coverage,
                     r.deleted_fraction}) {
      f.push_back(csv::format_double(v));
    }
    csv::write_row(csv_out, f);
  }
  csv_out.close();
  write_manifest(out, "simulate-missingness", config, config.simulation.seed, {{"cohort", cohort_dir}});
}

void run_all(const PipelineConfig& config, const fs::path& out) {
  fs::create_directories(out);
  fs::path data;
  if (config.data_dir) {
    data = *config.data_dir;
  } else {
    data = out / "data";
    run_generate(config, data);
  }
  run_quality(config, data, out / "quality");
  run_cohort(config, out / "quality" / "data", out / "cohort");
  run_impute(config, out / "cohort", out / "impute");
  run_fit(config, out / "impute", out / "fit");
  run_evaluate(config, out / "fit" / "model.json", out / "impute", out / "evaluate");

  json stages = json::object();
  for (const auto* s : {"data", "quality", "cohort", "impute", "fit", "evaluate"}) {
    const auto m = out / s / "manifest.json";
    if (fs::exists(m)) stages[s] = file_sha256(m);
  }
  write_json(out / "config.json", config.to_json());
  write_json(out / "manifest.json", {{"stage", "run-all"},
                                     {"framr_version", "0.1.0"},
                                     {"seed", config.seed},
                                     {"config_sha256", config.hash()},
                                     {"config_file_sha256", file_sha256(out / "config.json")},
                                     {"stages", stages}});
}

}  // namespace framr::pipeline
