// Drives the framr executable end to end.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run framr(const std::string& args) {
  const std::string cmd = std::string("FRAMR_LOG=off '") + FRAMR_CLI + "' " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh(const std::string& name) {
  auto p = fs::temp_directory_path() / ("framr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small enough to run the whole chain in seconds.
fs::path small_config(const fs::path& dir) {
  const json cfg = {{"seed", 7},
                    {"generator", {{"n_patients", 3000}}},
                    {"imputation", {{"m", 3}, {"cycles", 3}}},
                    {"simulation", {{"replications", 2}, {"rates", {0.1, 0.3}}}}};
  const auto path = dir / "config.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

}  // namespace

TEST_CASE("cli: exit codes") {
  CHECK(framr("--help").code == 0);
  CHECK(framr("").code == 1);
  CHECK(framr("frobnicate").code == 1);
  CHECK(framr("samplesize --auc 0.5").code == 1);
  CHECK(framr("score age=60 sex=female").code == 2);  // bmi and indicators missing
  CHECK(framr("score age=sixty sex=female bmi=28 leg_injury=0 osteoporosis=0").code == 1);

  const auto dir = fresh("codes");
  std::ofstream(dir / "bad.json") << "{\"seed\": 1, \"colour\": 2}";
  CHECK(framr("--config '" + (dir / "bad.json").string() + "' samplesize").code == 1);
  std::ofstream(dir / "typo.json") << "{\"imputation\": {\"copies\": 5}}";
  CHECK(framr("--config '" + (dir / "typo.json").string() + "' samplesize").code == 1);
  std::ofstream(dir / "subseed.json") << "{\"generator\": {\"seed\": 5}}";
  CHECK(framr("--config '" + (dir / "subseed.json").string() + "' samplesize").code == 1);
  fs::create_directories(dir / "empty");
  CHECK(framr("cohort --data '" + (dir / "empty").string() + "' --out '" + (dir / "o").string() + "'").code == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: samplesize and score print json") {
  const auto ss = json::parse(framr("samplesize").out);
  CHECK(ss["cases"] == 275);
  CHECK(ss["controls"] == 2744);
  const auto r = framr("score age=60 sex=female bmi=28 leg_injury=0 osteoporosis=0");
  REQUIRE(r.code == 0);
  const auto sc = json::parse(r.out);
  CHECK(sc["probability"].get<double>() == doctest::Approx(0.1007).epsilon(0.01));
}

TEST_CASE("cli: run-all matches the stage-by-stage chain") {
  const auto dir = fresh("chain");
  const auto cfg = "--config '" + small_config(dir).string() + "' ";
  const auto all = dir / "all", step = dir / "step";
  REQUIRE(framr(cfg + "run-all --out '" + all.string() + "'").code == 0);

  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  REQUIRE(framr(cfg + "generate --out " + q(step / "data")).code == 0);
  REQUIRE(framr(cfg + "quality --data " + q(step / "data") + " --out " + q(step / "quality")).code == 0);
  REQUIRE(framr(cfg + "cohort --data " + q(step / "quality" / "data") + " --out " + q(step / "cohort")).code == 0);
  REQUIRE(framr(cfg + "--jobs 2 impute --cohort " + q(step / "cohort") + " --out " + q(step / "impute")).code == 0);
  REQUIRE(framr(cfg + "fit --impute " + q(step / "impute") + " --out " + q(step / "fit")).code == 0);
  REQUIRE(framr(cfg + "evaluate --model " + q(step / "fit" / "model.json") + " --impute " + q(step / "impute") +
                " --out " + q(step / "evaluate"))
              .code == 0);

  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(step)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), step);
    CAPTURE(rel.string());
    REQUIRE(fs::exists(all / rel));
    CHECK(slurp(e.path()) == slurp(all / rel));
    ++compared;
  }
  CHECK(compared > 20);
  CHECK(fs::exists(all / "manifest.json"));

  const auto model = json::parse(slurp(all / "fit" / "model.json"));
  CHECK(model.contains("coefficients"));
  const auto ev = json::parse(slurp(all / "evaluate" / "evaluation.json"));
  CHECK(ev["auc"]["estimate"].get<double>() > 0.6);

  const auto sim = dir / "sim";
  REQUIRE(framr(cfg + "simulate-missingness --cohort " + q(step / "cohort") + " --out " + q(sim)).code == 0);
  CHECK(fs::exists(sim / "simulation.json"));
  fs::remove_all(dir);
}
