#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prisk/clustering.hpp"
#include "prisk/evaluation.hpp"
#include "prisk/network.hpp"
#include "prisk/riskfield.hpp"
#include "prisk/scenario.hpp"

namespace prisk {

class KeyValueConfig;

// Rating behaviour of one synthetic driver group: the base oracle thresholds
// are multiplied by `scale`, then `bias` and `epsilon` apply as in OracleConfig.
struct RaterProfile {
  double scale = 1.0;
  int bias = 0;
  double epsilon = 0.0;
};

struct RunConfig {
  std::filesystem::path workspace = "workspace";
  std::uint64_t seed = 0;
  PodarConfig podar;
  TrainConfig train;
  std::vector<ModelKind> models = {ModelKind::Lstmca};

  std::vector<Template> templates{kAllTemplates.begin(), kAllTemplates.end()};
  int scenarios_per_template = 5;
  int holdout_every = 5;  // every k-th scenario of a template is held out; 0 keeps all

  std::array<double, 4> oracle_thresholds = OracleConfig{}.thresholds;
  int groups = 4;  // synthetic trait blobs, at most 4
  int drivers_per_group = 3;
  std::vector<RaterProfile> profiles = {
      {2.0, 0, 0.03}, {1.0, 0, 0.03}, {0.5, 0, 0.03}, {1.0, 1, 0.08}};

  std::size_t p_max = 8;
  int seeds_per_p = 10;
  double outlier_sigma = 4.0;
  bool personalize = true;  // train per-category models when a cluster model exists
};

// Recognized keys: seed, templates, scenarios_per_template, holdout_every,
// groups, drivers_per_group, oracle.thresholds, oracle.scales, oracle.biases,
// oracle.epsilons, cluster.p_max, cluster.seeds_per_p, cluster.outlier_sigma,
// models, personalize, podar.*, train.*. Unknown keys are rejected.
RunConfig load_run_config(const KeyValueConfig& kv);
void validate(const RunConfig& cfg);  // throws ConfigError

struct WorkspaceLayout {
  std::filesystem::path root;

  std::filesystem::path scenarios() const { return root / "scenarios"; }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path ratings() const { return root / "ratings"; }
  std::filesystem::path cluster() const { return root / "cluster"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path roster() const { return root / "roster.jsonl"; }
  std::filesystem::path manifest() const { return root / "manifest.txt"; }
  std::filesystem::path cluster_model() const { return cluster() / "model.json"; }
};

struct ManifestEntry {
  std::string scenario;
  bool held_out = false;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

struct RosterMember {
  DriverProfile profile;
  int group = 0;
};

// Drivers drawn around fixed, well-separated trait archetypes.
std::vector<RosterMember> synthetic_roster(int groups, int drivers_per_group, std::uint64_t seed);

OracleConfig rater_oracle(const RunConfig& cfg, const RosterMember& member);

struct GenerateSummary {
  std::vector<std::string> scenarios;
  std::size_t drivers = 0;
  std::size_t traces = 0;
};

// Scenarios, roster, oracle rating traces and manifest.
GenerateSummary cmd_generate(const RunConfig& cfg);

// One feature file per manifest scenario; returns the files written.
std::vector<std::filesystem::path> cmd_features(const RunConfig& cfg);

struct ClusterSummary {
  ClusterCountSelection selection;
  ClusterModel model;
  std::vector<std::string> outliers;
};

ClusterSummary cmd_cluster(const RunConfig& cfg);

struct TrainedModel {
  ModelKind kind;
  std::string group;  // "All" or "Category k"
  std::filesystem::path checkpoint;
  std::size_t samples = 0;
  std::optional<double> split_test_auc;  // on the internal window split
};

std::vector<TrainedModel> cmd_train(const RunConfig& cfg);

struct EvalSummary {
  std::vector<RunSummary> runs;
  ComparisonReport comparison;
  std::vector<AnovaRow> anova;
};

// Scores every trained model on the held-out scenarios of its group.
EvalSummary cmd_eval(const RunConfig& cfg);

// Collects the evaluation outputs and cluster tables into reports/report.txt.
std::string cmd_report(const RunConfig& cfg);

std::string group_slug(const std::string& group);  // "Category 2" -> "category2"

}  // namespace prisk
