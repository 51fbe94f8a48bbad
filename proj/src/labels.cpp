#include <algorithm>
#include <cmath>
#include <sstream>

#include "prisk/riskfield.hpp"
#include "prisk/scenario.hpp"

namespace prisk {

void validate(const OracleConfig& cfg) {
  const auto& t = cfg.thresholds;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw ConfigError("oracle thresholds must be finite");
    if (i > 0 && !(t[i] > t[i - 1])) {
      throw ConfigError("oracle thresholds must be strictly increasing");
    }
  }
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 0.5)) {
    throw ConfigError("oracle label-noise probability must be in [0, 0.5)");
  }
  if (cfg.bias < -1 || cfg.bias > 1) throw ConfigError("oracle bias must be -1, 0 or +1");
}

int quantize_risk(double risk, const std::array<double, 4>& thresholds) {
  int level = 0;
  for (double t : thresholds) {
    if (risk >= t) ++level;
  }
  return level;
}

RatingTrace oracle_label(const ScenarioLog& log, const OracleConfig& oracle,
                         const PodarConfig& podar, std::uint64_t seed) {
  validate(oracle);
  Rng rng(mix_seed(seed, hash_string(oracle.rater_id)));

  RatingTrace trace;
  trace.rater_id = oracle.rater_id;
  trace.scenario_name = log.meta.name;
  trace.source = RatingSource::Oracle;
  trace.ratings.reserve(log.frames.size());

  const auto features = extract_features(log, podar);
  for (std::size_t k = 0; k < features.size(); ++k) {
    int level = quantize_risk(features[k].max_risk(), oracle.thresholds) + oracle.bias;
    level = std::clamp(level, 0, kNumLevels - 1);
    // Both draws happen every frame so the stream does not depend on outcomes.
    const bool flip = rng.bernoulli(oracle.epsilon);
    const bool up = rng.bernoulli(0.5);
    if (flip) {
      if (level == 0) {
        level = 1;
      } else if (level == kNumLevels - 1) {
        level = kNumLevels - 2;
      } else {
        level += up ? 1 : -1;
      }
    }
    trace.ratings.push_back({k, level});
  }
  return trace;
}

std::vector<LabeledDataset::Row> LabeledDataset::rows() const {
  std::vector<Row> out;
  for (std::size_t k = 0; k < frame_count; ++k) {
    for (const auto& [rater, column] : labels) {
      if (column[k]) out.push_back({k, rater, *column[k]});
    }
  }
  return out;
}

LabeledDataset merge_ratings(const ScenarioLog& log, const std::vector<RatingTrace>& traces) {
  LabeledDataset ds;
  ds.scenario_name = log.meta.name;
  ds.frame_count = log.frames.size();

  for (const auto& trace : traces) {
    if (trace.scenario_name != log.meta.name) {
      throw MismatchError("trace of rater '" + trace.rater_id + "' references scenario '" +
                          trace.scenario_name + "', expected '" + log.meta.name + "'");
    }
    std::vector<std::optional<int>> keyed(ds.frame_count);
    for (const auto& r : trace.ratings) {
      if (r.frame >= ds.frame_count) {
        throw MismatchError("rater '" + trace.rater_id + "' rated frame " +
                            std::to_string(r.frame) + " of a " +
                            std::to_string(ds.frame_count) + "-frame scenario");
      }
      if (r.level < 0 || r.level >= kNumLevels) {
        throw MismatchError("rater '" + trace.rater_id + "' used level " +
                            std::to_string(r.level));
      }
      keyed[r.frame] = r.level;  // the later keystroke wins
    }

    auto& column = ds.labels[trace.rater_id];
    if (column.empty()) column.resize(ds.frame_count);
    std::optional<int> held;
    for (std::size_t k = 0; k < ds.frame_count; ++k) {
      if (keyed[k]) held = keyed[k];
      if (held) column[k] = held;
    }
  }
  return ds;
}

}  // namespace prisk
