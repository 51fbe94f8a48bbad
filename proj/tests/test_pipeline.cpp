#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "prisk/kvconfig.hpp"
#include "prisk/pipeline.hpp"

using namespace prisk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("prisk_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig small_run(const fs::path& ws) {
  RunConfig c;
  c.workspace = ws;
  c.seed = 3;
  c.templates = {Template::LeadBrake, Template::MixedUrban};
  c.scenarios_per_template = 2;
  c.holdout_every = 2;
  c.groups = 4;
  c.drivers_per_group = 2;
  c.p_max = 5;
  c.seeds_per_p = 4;
  c.train.T = 5;
  c.train.H = 4;
  c.train.d_a = 4;
  c.train.epochs = 1;
  c.models = {ModelKind::Lstmca, ModelKind::Fcnn};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

void run_all(const RunConfig& c) {
  cmd_generate(c);
  cmd_features(c);
  cmd_cluster(c);
  cmd_train(c);
  cmd_eval(c);
  cmd_report(c);
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PRISK_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("generate writes every scenario and is reproducible") {
  const auto ws = scratch("generate");
  RunConfig c;
  c.workspace = ws;
  c.seed = 1;
  c.drivers_per_group = 1;
  const auto s = cmd_generate(c);
  CHECK(s.scenarios.size() == 30);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(ws / "scenarios")) files += e.path().extension() == ".jsonl";
  CHECK(files == 30);
  const auto manifest = load_manifest(ws / "manifest.txt");
  CHECK(manifest.size() == 30);
  CHECK(std::count_if(manifest.begin(), manifest.end(), [](auto& m) { return m.held_out; }) == 6);
  CHECK(s.traces == 30 * 4);

  const auto before = tree(ws);
  cmd_generate(c);
  CHECK(tree(ws) == before);
  fs::remove_all(ws);
}

TEST_CASE("configuration errors") {
  std::istringstream bad_template("templates = StraightCruise, Roundabout\n");
  try {
    load_run_config(KeyValueConfig::parse(bad_template));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("PedestrianCross") != std::string::npos);
  }
  std::istringstream unknown("sede = 4\n");
  CHECK_THROWS_AS(load_run_config(KeyValueConfig::parse(unknown)), ConfigError);
  std::istringstream scales("oracle.scales = 1, 2\n");
  CHECK_THROWS_AS(load_run_config(KeyValueConfig::parse(scales)), ConfigError);
  std::istringstream fine("seed = 9\ntrain.H = 7\npodar.d_half = 15\nmodels = lstm, fcnn\n");
  const auto c = load_run_config(KeyValueConfig::parse(fine));
  CHECK(c.seed == 9);
  CHECK(c.train.H == 7);
  CHECK(c.podar.d_half == 15.0);
  CHECK(c.models == std::vector<ModelKind>{ModelKind::Lstm, ModelKind::Fcnn});
}

TEST_CASE("features have one row per frame") {
  const auto ws = scratch("features");
  auto c = small_run(ws);
  c.templates = {Template::StraightCruise, Template::PedestrianCross};
  cmd_generate(c);
  const auto files = cmd_features(c);
  CHECK(files.size() == 4);
  for (const auto& e : load_manifest(ws / "manifest.txt")) {
    const auto log = load_scenario(ws / "scenarios" / (e.scenario + ".jsonl"));
    const auto rows = load_features(ws / "features" / (e.scenario + ".features.jsonl"));
    CHECK(rows.size() == log.frames.size());
  }
  const auto first = tree(ws / "features");
  cmd_features(c);
  CHECK(tree(ws / "features") == first);
  fs::remove_all(ws);
}

TEST_CASE("cluster command") {
  const auto ws = scratch("cluster");
  auto c = small_run(ws);
  c.drivers_per_group = 5;
  c.p_max = 8;
  c.seeds_per_p = 10;
  cmd_generate(c);
  const auto s = cmd_cluster(c);
  CHECK(s.selection.best_p == 4);
  CHECK(fs::exists(ws / "cluster" / "model.json"));
  CHECK(slurp(ws / "cluster" / "quality.tsv").find("silhouette") != std::string::npos);
  CHECK(slurp(ws / "cluster" / "pca.tsv").find("pc1") != std::string::npos);
  const auto model = load_cluster_model(ws / "cluster" / "model.json");
  CHECK(model.assignments.size() == 20);

  const auto two = synthetic_roster(2, 1, 4);
  std::vector<DriverProfile> ps = {two[0].profile, two[1].profile};
  save_roster(ps, ws / "roster.jsonl");
  CHECK(cmd_cluster(c).selection.table.size() == 2);

  std::vector<DriverProfile> same(4, two[0].profile);
  for (std::size_t i = 0; i < same.size(); ++i) same[i].driver_id = "same" + std::to_string(i);
  save_roster(same, ws / "roster.jsonl");
  const auto d = cmd_cluster(c);
  CHECK(d.selection.degenerate);
  CHECK(slurp(ws / "cluster" / "selection.txt").find("degenerate true") != std::string::npos);
  fs::remove_all(ws);
}

TEST_CASE("train and eval over four categories") {
  const auto ws = scratch("train");
  const auto c = small_run(ws);
  cmd_generate(c);
  cmd_features(c);
  REQUIRE(cmd_cluster(c).selection.best_p == 4);
  const auto trained = cmd_train(c);
  CHECK(trained.size() == 5 * c.models.size());
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(ws / "models")) ckpts += e.path().extension() == ".ckpt";
  CHECK(ckpts == 10);

  // Windows never cross scenario boundaries: every driver labels every frame,
  // so each training scenario contributes frames - T + 1 windows per driver.
  std::size_t expect = 0;
  for (const auto& e : load_manifest(ws / "manifest.txt")) {
    if (e.held_out) continue;
    const auto log = load_scenario(ws / "scenarios" / (e.scenario + ".jsonl"));
    expect += (log.frames.size() - c.train.T + 1) * 8;
  }
  CHECK(trained[0].group == "All");
  CHECK(trained[0].samples == expect);

  const auto eval = cmd_eval(c);
  CHECK(eval.anova.size() == 8);
  CHECK(eval.anova[0].feature == "Velocity");
  CHECK(eval.runs.size() == 10);
  const auto& text = eval.comparison.text;
  for (const char* row : {"All", "Category 1", "Category 4", "Average"}) {
    CHECK(text.find(row) != std::string::npos);
  }
  const auto report = cmd_report(c);
  CHECK(report.find("Features") != std::string::npos);
  CHECK(fs::exists(ws / "reports" / "comparison.jsonl"));

  auto pooled = c;
  pooled.personalize = false;
  CHECK(cmd_train(pooled).size() == c.models.size());
  fs::remove_all(ws);
}

TEST_CASE("full pipeline is byte-identical across runs") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  run_all(small_run(a));
  run_all(small_run(b));
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == tb.size());
  for (const auto& [name, bytes] : ta) {
    INFO(name);
    CHECK(tb.at(name) == bytes);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("command line exit codes") {
  const auto ws = scratch("cli");
  fs::create_directories(ws);
  std::ofstream(ws / "bad.cfg") << "templates = Roundabout\n";
  std::ofstream(ws / "small.cfg") << "templates = StraightCruise\nscenarios_per_template = 1\n"
                                     "drivers_per_group = 1\n";
  CHECK(cli("generate --config " + (ws / "bad.cfg").string() + " --out " + ws.string()) == 2);
  CHECK(cli("generate --bogus") == 2);
  CHECK(cli("generate --config " + (ws / "small.cfg").string() + " --out " + (ws / "w").string()) == 0);
  const auto scen = ws / "w" / "scenarios" / "StraightCruise_0.jsonl";
  REQUIRE(fs::exists(scen));
  std::ofstream(scen, std::ios::app) << "{broken\n";
  CHECK(cli("features --config " + (ws / "small.cfg").string() + " --out " + (ws / "w").string()) == 3);
  fs::remove_all(ws);
}

}  // TEST_SUITE
