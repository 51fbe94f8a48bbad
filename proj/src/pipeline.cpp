#include "prisk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "prisk/common.hpp"
#include "prisk/kvconfig.hpp"

namespace prisk {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kRunKeys = {
    "seed",         "templates",        "scenarios_per_template", "holdout_every",
    "groups",       "drivers_per_group", "oracle.thresholds",     "oracle.scales",
    "oracle.biases", "oracle.epsilons",  "cluster.p_max",          "cluster.seeds_per_p",
    "cluster.outlier_sigma", "models",   "personalize",            "workspace"};

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + " must be true or false, got '" + v + "'");
}

}  // namespace

RunConfig load_run_config(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.values()) {
    if (kRunKeys.contains(key) || key.starts_with("podar.") || key.starts_with("train.")) continue;
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  RunConfig c;
  c.workspace = kv.get_string("workspace", c.workspace.string());
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.podar = load_podar_config(kv);
  KeyValueConfig train_kv;
  for (const auto& [key, value] : kv.values()) {
    if (key.starts_with("train.")) train_kv.set(key, value);
  }
  c.train = load_train_config(train_kv);

  if (kv.has("models")) {
    c.models.clear();
    for (const auto& m : kv.get_list("models", {})) c.models.push_back(parse_model_kind(m));
  }
  if (kv.has("templates")) {
    c.templates.clear();
    for (const auto& t : kv.get_list("templates", {})) c.templates.push_back(parse_template(t));
  }
  c.scenarios_per_template = static_cast<int>(kv.get_int("scenarios_per_template", c.scenarios_per_template));
  c.holdout_every = static_cast<int>(kv.get_int("holdout_every", c.holdout_every));
  c.groups = static_cast<int>(kv.get_int("groups", c.groups));
  c.drivers_per_group = static_cast<int>(kv.get_int("drivers_per_group", c.drivers_per_group));

  if (kv.has("oracle.thresholds")) {
    const auto t = kv.get_doubles("oracle.thresholds", {});
    if (t.size() != 4) throw ConfigError("oracle.thresholds needs 4 values");
    std::copy(t.begin(), t.end(), c.oracle_thresholds.begin());
  }
  const auto scales = kv.get_doubles("oracle.scales", {});
  const auto biases = kv.get_doubles("oracle.biases", {});
  const auto epsilons = kv.get_doubles("oracle.epsilons", {});
  auto apply = [&](const std::vector<double>& vals, const char* key, auto setter) {
    if (vals.empty()) return;
    if (vals.size() != c.profiles.size()) {
      throw ConfigError(std::string(key) + " needs " + std::to_string(c.profiles.size()) +
                        " values");
    }
    for (std::size_t g = 0; g < vals.size(); ++g) setter(c.profiles[g], vals[g]);
  };
  apply(scales, "oracle.scales", [](RaterProfile& p, double v) { p.scale = v; });
  apply(biases, "oracle.biases", [](RaterProfile& p, double v) {
    if (v != std::round(v)) throw ConfigError("oracle.biases must be integers");
    p.bias = static_cast<int>(v);
  });
  apply(epsilons, "oracle.epsilons", [](RaterProfile& p, double v) { p.epsilon = v; });

  c.p_max = static_cast<std::size_t>(kv.get_int("cluster.p_max", static_cast<long long>(c.p_max)));
  c.seeds_per_p = static_cast<int>(kv.get_int("cluster.seeds_per_p", c.seeds_per_p));
  c.outlier_sigma = kv.get_double("cluster.outlier_sigma", c.outlier_sigma);
  if (auto v = kv.get("personalize")) c.personalize = parse_bool("personalize", *v);
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  validate(c.podar);
  validate(c.train);
  if (c.models.empty()) throw ConfigError("models must list at least one model kind");
  if (c.templates.empty()) throw ConfigError("templates must not be empty");
  if (c.scenarios_per_template < 1) throw ConfigError("scenarios_per_template must be >= 1");
  if (c.holdout_every < 0) throw ConfigError("holdout_every must be >= 0");
  if (c.groups < 1 || c.groups > 4) throw ConfigError("groups must be between 1 and 4");
  if (c.drivers_per_group < 1) throw ConfigError("drivers_per_group must be >= 1");
  if (c.p_max < 1) throw ConfigError("cluster.p_max must be >= 1");
  if (c.seeds_per_p < 1) throw ConfigError("cluster.seeds_per_p must be >= 1");
  if (!(c.outlier_sigma > 0.0)) throw ConfigError("cluster.outlier_sigma must be positive");
  for (const auto& p : c.profiles) {
    if (!(p.scale > 0.0)) throw ConfigError("oracle.scales must be positive");
    OracleConfig o;
    o.thresholds = c.oracle_thresholds;
    o.bias = p.bias;
    o.epsilon = p.epsilon;
    validate(o);
  }
}

std::string group_slug(const std::string& group) {
  std::string s;
  for (char ch : group) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Roster

namespace {

struct Archetype {
  Gender gender;
  double age, age_spread;
  double experience, exp_spread;
  DrivingStyle style;
};

constexpr std::array<Archetype, 4> kArchetypes = {{
    {Gender::Male, 23.0, 2.0, 3.0, 1.5, DrivingStyle::Aggressive},
    {Gender::Female, 35.0, 2.0, 13.0, 2.0, DrivingStyle::Moderate},
    {Gender::Male, 50.0, 2.0, 28.0, 2.0, DrivingStyle::Conservative},
    {Gender::Female, 64.0, 2.0, 42.0, 2.0, DrivingStyle::Conservative},
}};

}  // namespace

std::vector<RosterMember> synthetic_roster(int groups, int drivers_per_group, std::uint64_t seed) {
  if (groups < 1 || groups > static_cast<int>(kArchetypes.size())) {
    throw ConfigError("synthetic rosters support 1 to 4 groups");
  }
  Rng rng(seed);
  std::vector<RosterMember> roster;
  for (int g = 0; g < groups; ++g) {
    const auto& a = kArchetypes[static_cast<std::size_t>(g)];
    for (int d = 0; d < drivers_per_group; ++d) {
      RosterMember m;
      m.group = g;
      m.profile.driver_id = fmt::format("g{}_d{:02}", g + 1, d + 1);
      m.profile.gender = a.gender;
      m.profile.age = std::round(a.age + rng.uniform(-a.age_spread, a.age_spread));
      m.profile.experience = std::round(a.experience + rng.uniform(-a.exp_spread, a.exp_spread));
      m.profile.experience = std::clamp(m.profile.experience, 0.0, m.profile.age - 15.0);
      m.profile.style = a.style;
      roster.push_back(std::move(m));
    }
  }
  return roster;
}

OracleConfig rater_oracle(const RunConfig& cfg, const RosterMember& member) {
  const auto& p = cfg.profiles.at(static_cast<std::size_t>(member.group));
  OracleConfig o;
  o.rater_id = member.profile.driver_id;
  for (std::size_t i = 0; i < 4; ++i) o.thresholds[i] = cfg.oracle_thresholds[i] * p.scale;
  o.bias = p.bias;
  o.epsilon = p.epsilon;
  return o;
}

// ---------------------------------------------------------------------------
// Manifest and study loading

namespace {

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path feature_path(const WorkspaceLayout& ws, const std::string& scenario) {
  return ws.features() / (scenario + ".features.jsonl");
}

struct ScenarioData {
  std::string name;
  bool held_out = false;
  ScenarioLog log;
  std::vector<RiskFeatures> features;
  LabeledDataset labels;
  Tensor ego;
};

std::vector<ScenarioData> load_study(const RunConfig& cfg, const WorkspaceLayout& ws) {
  const auto manifest = load_manifest(ws.manifest());
  std::map<std::string, std::vector<RatingTrace>> traces;
  if (fs::exists(ws.ratings())) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(ws.ratings())) {
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto t = load_rating_trace(f);
      traces[t.scenario_name].push_back(std::move(t));
    }
  }

  std::vector<ScenarioData> study;
  for (const auto& entry : manifest) {
    ScenarioData d;
    d.name = entry.scenario;
    d.held_out = entry.held_out;
    d.log = load_scenario(ws.scenarios() / (entry.scenario + ".jsonl"));
    const auto fp = feature_path(ws, entry.scenario);
    if (!fs::exists(fp)) {
      throw DataError("no features for scenario '" + entry.scenario + "'; run the features command");
    }
    d.features = load_features(fp);
    if (d.features.size() != d.log.frames.size()) {
      throw MismatchError("feature file of '" + entry.scenario + "' has " +
                          std::to_string(d.features.size()) + " rows for " +
                          std::to_string(d.log.frames.size()) + " frames");
    }
    d.labels = merge_ratings(d.log, traces[entry.scenario]);
    d.ego = ego_channels(d.log, cfg.train.ego_channels);
    study.push_back(std::move(d));
  }
  return study;
}

struct Group {
  std::string name;
  std::optional<std::set<std::string>> raters;  // nullopt = everyone
};

std::vector<Group> training_groups(const RunConfig& cfg, const WorkspaceLayout& ws) {
  std::vector<Group> groups = {{"All", std::nullopt}};
  if (!cfg.personalize || !fs::exists(ws.cluster_model())) return groups;
  const auto model = load_cluster_model(ws.cluster_model());
  if (model.p < 2) return groups;
  for (std::size_t k = 0; k < model.p; ++k) {
    Group g{"Category " + std::to_string(k + 1), std::set<std::string>{}};
    for (const auto& [id, c] : model.assignments) {
      if (c == k) g.raters->insert(id);
    }
    if (!g.raters->empty()) groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<WindowSample> group_windows(const std::vector<ScenarioData>& study, const Group& g,
                                        bool held_out, std::size_t T) {
  std::vector<WindowSample> out;
  for (const auto& d : study) {
    if (d.held_out != held_out) continue;
    for (const auto& [rater, column] : d.labels.labels) {
      if (g.raters && !g.raters->contains(rater)) continue;
      auto w = make_windows(d.ego, d.features, column, T);
      std::move(w.begin(), w.end(), std::back_inserter(out));
    }
  }
  return out;
}

std::string model_stem(ModelKind kind, const std::string& group) {
  std::string k(to_string(kind));
  std::transform(k.begin(), k.end(), k.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return k + "_" + group_slug(group);
}

std::uint64_t group_seed(const RunConfig& cfg, const std::string& group) {
  return mix_seed(cfg.seed ^ cfg.train.seed, hash_string(group));
}

std::optional<double> auc_of(const std::vector<Prediction>& preds,
                             std::span<const WindowSample> windows) {
  std::vector<std::array<double, kNumLevels>> probs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    probs.push_back(preds[i].probs);
    labels.push_back(windows[i].label);
  }
  try {
    return macro_ovr_auc(probs, labels).macro;
  } catch (const DataError&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string() + "; run the generate command");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string split;
    if (!(ss >> e.scenario >> split) || (split != "train" && split != "test")) {
      throw ParseError("expected '<scenario> train|test'", lineno);
    }
    e.held_out = split == "test";
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

GenerateSummary cmd_generate(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  ensure_dir(ws.scenarios());
  ensure_dir(ws.ratings());

  const auto roster = synthetic_roster(cfg.groups, cfg.drivers_per_group, mix_seed(cfg.seed, 7));
  std::vector<DriverProfile> profiles;
  for (const auto& m : roster) profiles.push_back(m.profile);
  save_roster(profiles, ws.roster());

  GenerateSummary summary;
  summary.drivers = roster.size();
  std::string manifest = "# scenario split\n";
  for (const auto tmpl : cfg.templates) {
    for (int k = 0; k < cfg.scenarios_per_template; ++k) {
      const std::uint64_t seed = cfg.seed * 1000 + static_cast<std::uint64_t>(k);
      const auto log = generate_synthetic(tmpl, {}, seed);
      save_scenario(log, ws.scenarios() / (log.meta.name + ".jsonl"));
      const bool held_out = cfg.holdout_every > 0 && k % cfg.holdout_every == cfg.holdout_every - 1;
      manifest += log.meta.name + (held_out ? " test\n" : " train\n");
      summary.scenarios.push_back(log.meta.name);

      for (const auto& m : roster) {
        const auto trace = oracle_label(log, rater_oracle(cfg, m), cfg.podar,
                                        mix_seed(cfg.seed, hash_string(log.meta.name)));
        save_rating_trace(trace, ws.ratings() / (log.meta.name + "__" + m.profile.driver_id + ".jsonl"));
        ++summary.traces;
      }
    }
  }
  write_text(ws.manifest(), manifest);
  return summary;
}

std::vector<fs::path> cmd_features(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  ensure_dir(ws.features());
  std::vector<fs::path> written;
  for (const auto& e : load_manifest(ws.manifest())) {
    const auto log = load_scenario(ws.scenarios() / (e.scenario + ".jsonl"));
    const auto rows = extract_features_parallel(log, cfg.podar);
    const auto path = feature_path(ws, e.scenario);
    save_features(rows, path);
    written.push_back(path);
  }
  return written;
}

ClusterSummary cmd_cluster(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  ensure_dir(ws.cluster());
  const auto roster = load_roster(ws.roster());
  const auto cohort = encode_and_normalize(roster, cfg.outlier_sigma);

  ClusterSummary s;
  s.outliers = cohort.outliers;
  s.selection = select_cluster_count(cohort.vectors, cfg.p_max, cfg.seeds_per_p, cfg.seed);
  const auto p = s.selection.best_p;
  const auto fit = kmeans_restarts(cohort.vectors, p, mix_seed(cfg.seed, p), cfg.seeds_per_p);
  s.model = make_cluster_model(cohort, fit);
  save_cluster_model(s.model, ws.cluster_model());

  std::string quality = "p\tsse\tsilhouette\tavg_deviation\n";
  for (const auto& row : s.selection.table) {
    const auto& q = row.quality;
    quality += fmt::format("{}\t{:.6f}\t{}\t{:.6f}\n", row.p, q.sse,
                           q.silhouette ? fmt::format("{:.6f}", *q.silhouette) : "NA",
                           q.avg_deviation);
  }
  write_text(ws.cluster() / "quality.tsv", quality);

  std::string sel = fmt::format("best_p {}\ndegenerate {}\ndrivers {}\noutliers {}\n", p,
                                s.selection.degenerate ? "true" : "false",
                                cohort.driver_ids.size(), cohort.outliers.size());
  for (const auto& id : cohort.outliers) sel += "outlier " + id + "\n";
  write_text(ws.cluster() / "selection.txt", sel);

  std::string pca_text;
  try {
    const auto pca = pca_project(cohort.vectors);
    pca_text = fmt::format("# explained {:.6f} {:.6f}\ndriver_id\tcluster\tpc1\tpc2\n",
                           pca.explained_ratio[0], pca.explained_ratio[1]);
    for (std::size_t i = 0; i < cohort.driver_ids.size(); ++i) {
      pca_text += fmt::format("{}\t{}\t{:.6f}\t{:.6f}\n", cohort.driver_ids[i],
                              fit.labels[i] + 1, pca.points[i][0], pca.points[i][1]);
    }
  } catch (const DataError& e) {
    pca_text = std::string("# PCA unavailable: ") + e.what() + "\n";
  }
  write_text(ws.cluster() / "pca.tsv", pca_text);
  return s;
}

std::vector<TrainedModel> cmd_train(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  ensure_dir(ws.models());
  const auto study = load_study(cfg, ws);
  const auto groups = training_groups(cfg, ws);
  const auto T = static_cast<std::size_t>(cfg.train.T);

  std::vector<TrainedModel> out;
  for (const auto& g : groups) {
    const auto windows = group_windows(study, g, false, T);
    if (windows.empty()) {
      throw DataError("no labeled training windows for group '" + g.name + "'");
    }
    for (const auto kind : cfg.models) {
      TrainConfig tc = cfg.train;
      tc.kind = kind;
      tc.seed = group_seed(cfg, g.name);
      const auto result = train(windows, tc);

      TrainedModel tm{kind, g.name, ws.models() / (model_stem(kind, g.name) + ".ckpt"),
                      windows.size(), std::nullopt};
      save_checkpoint(result.model, tc, tm.checkpoint);
      std::ostringstream hist;
      write_history(hist, result.history);
      write_text(ws.models() / (model_stem(kind, g.name) + ".history.jsonl"), hist.str());

      std::vector<WindowSample> test;
      for (auto i : result.split.test) test.push_back(windows[i]);
      if (test.size() >= 2) tm.split_test_auc = auc_of(predict(result.model, test), test);
      nlohmann::ordered_json j = {{"model", std::string(to_string(kind))},
                                  {"group", g.name},
                                  {"samples", windows.size()},
                                  {"train", result.split.train.size()},
                                  {"val", result.split.val.size()},
                                  {"test", result.split.test.size()}};
      j["split_test_auc"] = tm.split_test_auc ? nlohmann::ordered_json(*tm.split_test_auc)
                                              : nlohmann::ordered_json();
      write_text(ws.models() / (model_stem(kind, g.name) + ".split.json"), j.dump() + "\n");
      out.push_back(std::move(tm));
    }
  }
  return out;
}

namespace {

std::string metrics_block(const RunSummary& r) {
  std::string s = fmt::format("{} / {}  (auc {:.4f}, accuracy {:.4f}, macro F1 {:.4f})\n",
                              r.model, r.group, r.auc, r.cm.accuracy(), r.metrics.macro_f1);
  s += "  true\\pred";
  for (int k = 0; k < kNumLevels; ++k) s += fmt::format(" {:>6}", k);
  s += "\n";
  for (int t = 0; t < kNumLevels; ++t) {
    s += fmt::format("  {:>9}", t);
    for (int p = 0; p < kNumLevels; ++p) {
      s += fmt::format(" {:>6}", r.cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]);
    }
    s += "\n";
  }
  s += "  level  precision  recall      f1\n";
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    s += fmt::format("  {:>5}  {:>9.4f}  {:>6.4f}  {:>6.4f}{}\n", k, r.metrics.precision[k],
                     r.metrics.recall[k], r.metrics.f1[k],
                     r.metrics.recall_undefined[k] ? "  (absent from labels)" : "");
  }
  return s;
}

}  // namespace

EvalSummary cmd_eval(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  ensure_dir(ws.reports());
  const auto study = load_study(cfg, ws);
  if (std::none_of(study.begin(), study.end(), [](const auto& d) { return d.held_out; })) {
    throw DataError("no held-out scenarios to evaluate on; set holdout_every > 0");
  }
  const auto groups = training_groups(cfg, ws);

  EvalSummary summary;
  std::string metrics_text;
  for (const auto& g : groups) {
    const auto windows = group_windows(study, g, true, static_cast<std::size_t>(cfg.train.T));
    if (windows.size() < 2) {
      throw DataError("fewer than two held-out windows for group '" + g.name + "'");
    }
    std::vector<int> labels;
    for (const auto& w : windows) labels.push_back(w.label);
    for (const auto kind : cfg.models) {
      const auto path = ws.models() / (model_stem(kind, g.name) + ".ckpt");
      if (!fs::exists(path)) {
        throw DataError("missing checkpoint " + path.string() + "; run the train command");
      }
      const auto ck = load_checkpoint(path);
      const auto preds = predict(ck.model, windows);
      std::vector<int> levels;
      for (const auto& p : preds) levels.push_back(p.level);

      RunSummary r;
      r.model = std::string(to_string(kind));
      r.group = g.name;
      r.auc = auc_of(preds, windows).value_or(std::nan(""));
      r.cm = confusion(levels, labels);
      r.metrics = class_metrics(r.cm);
      metrics_text += metrics_block(r) + "\n";
      summary.runs.push_back(std::move(r));
    }
  }
  summary.comparison = compare_report(summary.runs);

  // Frame-level ANOVA of every labeled (frame, rater) row, grouped by level.
  static const std::array<const char*, 8> kNames = {
      "Velocity", "Acceleration", "Risk_front", "Risk_left",
      "Risk_right", "Risk_back", "Number_pe", "Number_ve"};
  std::array<std::vector<double>, 8> values;
  std::vector<int> levels;
  for (const auto& d : study) {
    for (const auto& row : d.labels.rows()) {
      const auto& e = d.log.frames[row.frame].ego;
      const auto& f = d.features[row.frame];
      const double v[8] = {e.vel.norm(),  e.acc.norm(),      f.risk_front,
                           f.risk_left,   f.risk_right,      f.risk_rear,
                           f.count_pedestrians_w, f.count_vehicles_w};
      for (std::size_t i = 0; i < 8; ++i) values[i].push_back(v[i]);
      levels.push_back(row.level);
    }
  }
  for (std::size_t i = 0; i < 8; ++i) {
    summary.anova.push_back(anova_oneway(values[i], levels, kNames[i]));
  }

  write_text(ws.reports() / "comparison.txt", summary.comparison.text);
  write_text(ws.reports() / "comparison.jsonl", summary.comparison.jsonl);
  write_text(ws.reports() / "metrics.txt", metrics_text);
  write_text(ws.reports() / "anova.txt", anova_table(summary.anova));
  return summary;
}

std::string cmd_report(const RunConfig& cfg) {
  validate(cfg);
  const WorkspaceLayout ws{cfg.workspace};
  auto section = [](const std::string& title, const fs::path& p) {
    if (!fs::exists(p)) return fmt::format("== {} ==\n(missing: {})\n\n", title, p.filename().string());
    return fmt::format("== {} ==\n{}\n", title, read_text(p));
  };
  std::string out;
  out += section("Model comparison (AUC)", ws.reports() / "comparison.txt");
  out += section("Feature significance (one-way ANOVA by rated level)", ws.reports() / "anova.txt");
  out += section("Cluster count selection", ws.cluster() / "selection.txt");
  out += section("Cluster quality by p", ws.cluster() / "quality.tsv");
  out += section("Per-model confusion matrices and class metrics", ws.reports() / "metrics.txt");
  ensure_dir(ws.reports());
  write_text(ws.reports() / "report.txt", out);
  return out;
}

}  // namespace prisk
