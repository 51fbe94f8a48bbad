#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "prisk/common.hpp"
#include "prisk/kvconfig.hpp"
#include "prisk/pipeline.hpp"
#include "prisk/service.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key = value run configuration");
  cmd->add_option("--seed", o.seed, "base seed (overrides the config)");
  cmd->add_option("--out", o.out, "workspace directory (overrides the config)");
}

prisk::RunConfig resolve(const CommonOptions& o) {
  auto kv = o.config.empty() ? prisk::KeyValueConfig{} : prisk::KeyValueConfig::load(o.config);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (!o.out.empty()) kv.set("workspace", o.out);
  return prisk::load_run_config(kv);
}

int run(const std::string& name, const CommonOptions& o, const std::string& host, int port) {
  using namespace prisk;
  const auto cfg = resolve(o);
  if (name == "generate") {
    const auto s = cmd_generate(cfg);
    fmt::print("generated {} scenarios, {} drivers, {} rating traces in {}\n", s.scenarios.size(),
               s.drivers, s.traces, cfg.workspace.string());
  } else if (name == "features") {
    const auto files = cmd_features(cfg);
    fmt::print("wrote {} feature files\n", files.size());
  } else if (name == "cluster") {
    const auto s = cmd_cluster(cfg);
    fmt::print("best_p {}{}\n", s.selection.best_p, s.selection.degenerate ? " (degenerate data)" : "");
    for (const auto& row : s.selection.table) {
      fmt::print("  p={} sse={:.4f} silhouette={} avg_deviation={:.4f}\n", row.p, row.quality.sse,
                 row.quality.silhouette ? fmt::format("{:.4f}", *row.quality.silhouette) : "NA",
                 row.quality.avg_deviation);
    }
  } else if (name == "train") {
    for (const auto& m : cmd_train(cfg)) {
      fmt::print("{} / {}: {} windows -> {}\n", to_string(m.kind), m.group, m.samples,
                 m.checkpoint.string());
    }
  } else if (name == "eval") {
    const auto s = cmd_eval(cfg);
    std::cout << s.comparison.text << '\n' << anova_table(s.anova);
  } else if (name == "report") {
    std::cout << cmd_report(cfg);
  } else if (name == "serve") {
    const WorkspaceLayout ws{cfg.workspace};
    RatingService service(ws.scenarios(), ws.ratings());
    fmt::print("serving {} on http://{}:{}\n", ws.scenarios().string(), host, port);
    std::fflush(stdout);
    serve(service, host, port);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perceived-risk prediction pipeline"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string host = "127.0.0.1";
  int port = 8080;

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "write synthetic scenarios, a driver roster and oracle ratings"},
      {"features", "extract directional risk features for every scenario"},
      {"cluster", "cluster the driver roster and select the cluster count"},
      {"train", "train pooled and per-category models"},
      {"eval", "score trained models on held-out scenarios"},
      {"serve", "run the rating HTTP service"},
      {"report", "collect evaluation and clustering outputs into one report"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, opts);
    if (std::string(name) == "serve") {
      cmd->add_option("--host", host, "bind address");
      cmd->add_option("--port", port, "bind port");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run(name, opts, host, port);
  } catch (const prisk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const prisk::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
