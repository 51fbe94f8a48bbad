#include "prisk/riskfield.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prisk/kvconfig.hpp"
#include "prisk/parallel.hpp"

namespace prisk {

using json = nlohmann::json;

double PodarConfig::mass_of(ParticipantKind kind) const {
  switch (kind) {
    case ParticipantKind::Vehicle: return mass_vehicle;
    case ParticipantKind::Pedestrian: return mass_pedestrian;
    case ParticipantKind::Obstacle: return mass_obstacle;
  }
  return mass_vehicle;
}

void validate(const PodarConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("podar config: ") + what);
  };
  require(cfg.mass_ego > 0 && cfg.mass_vehicle > 0 && cfg.mass_pedestrian > 0 &&
              cfg.mass_obstacle > 0,
          "all masses must be > 0");
  require(cfg.d_half > 0, "d_half must be > 0");
  require(cfg.t_half > 0, "t_half must be > 0");
  require(cfg.detect_radius > 0, "detect_radius must be > 0");
  require(cfg.front_halfangle > 0 && cfg.front_halfangle < 90,
          "front_halfangle must be in (0, 90)");
  require(cfg.rear_halfangle > 0 && cfg.rear_halfangle < 90,
          "rear_halfangle must be in (0, 90)");
}

PodarConfig load_podar_config(const std::filesystem::path& path) {
  return load_podar_config(KeyValueConfig::load(path));
}

PodarConfig load_podar_config(const KeyValueConfig& kv) {
  PodarConfig cfg;
  auto read = [&](const char* name, double& field) {
    const std::string key(name);
    field = kv.get_double("podar." + key, kv.get_double(key, field));
  };
  read("mass_ego", cfg.mass_ego);
  read("mass_vehicle", cfg.mass_vehicle);
  read("mass_pedestrian", cfg.mass_pedestrian);
  read("mass_obstacle", cfg.mass_obstacle);
  read("d_half", cfg.d_half);
  read("t_half", cfg.t_half);
  read("detect_radius", cfg.detect_radius);
  read("front_halfangle", cfg.front_halfangle);
  read("rear_halfangle", cfg.rear_halfangle);
  validate(cfg);
  return cfg;
}

std::string_view to_string(Viewpoint v) {
  switch (v) {
    case Viewpoint::Front: return "front";
    case Viewpoint::Left: return "left";
    case Viewpoint::Right: return "right";
    case Viewpoint::Rear: return "rear";
  }
  return "front";
}

RelativeKinematics relative_kinematics(const EgoState& ego, const ParticipantState& p) {
  const Vec2 rel_pos = p.pos - ego.pos;
  const double distance = rel_pos.norm();
  if (!(distance >= kMinSeparation)) {
    throw DegenerateError("participant '" + p.id + "' within " +
                          std::to_string(kMinSeparation) + " m of ego");
  }
  const Vec2 rel_vel = p.vel - ego.vel;

  RelativeKinematics out;
  out.distance = distance;
  out.bearing = wrap_angle(std::atan2(rel_pos.y, rel_pos.x) - ego.yaw);
  out.closing_speed = -rel_pos.dot(rel_vel) / distance;
  out.ttc = out.closing_speed > 0.0 ? distance / out.closing_speed
                                    : std::numeric_limits<double>::infinity();
  return out;
}

double potential_collision(const RelativeKinematics& rel, const PodarConfig& cfg,
                           ParticipantKind kind) {
  const double v = rel.closing_speed;
  const double g = 0.5 * (cfg.mass_ego + cfg.mass_of(kind)) * v * std::abs(v);
  return std::max(g, 0.0);
}

double distance_decay(double distance, const PodarConfig& cfg) {
  return std::exp2(-distance / cfg.d_half);
}

double time_decay(double ttc, const PodarConfig& cfg) {
  if (std::isinf(ttc)) return 0.0;
  return std::exp2(-ttc / cfg.t_half);
}

double podar(const RelativeKinematics& rel, const PodarConfig& cfg, ParticipantKind kind) {
  if (rel.distance > cfg.detect_radius) return 0.0;
  const double g = potential_collision(rel, cfg, kind);
  if (g == 0.0) return 0.0;
  return g * distance_decay(rel.distance, cfg) * time_decay(rel.ttc, cfg);
}

Viewpoint viewpoint_of(double bearing, const PodarConfig& cfg) {
  const double front = cfg.front_halfangle * kPi / 180.0;
  const double rear = cfg.rear_halfangle * kPi / 180.0;
  const double mag = std::abs(bearing);
  // Boundaries resolve toward the higher-weight region.
  if (mag <= front) return Viewpoint::Front;
  if (mag > kPi - rear) return Viewpoint::Rear;
  return bearing > 0.0 ? Viewpoint::Left : Viewpoint::Right;
}

double viewpoint_weight(Viewpoint v) {
  switch (v) {
    case Viewpoint::Front: return 1.0;
    case Viewpoint::Left:
    case Viewpoint::Right: return 0.6;
    case Viewpoint::Rear: return 0.3;
  }
  return 0.0;
}

double RiskFeatures::max_risk() const {
  return std::max({risk_front, risk_left, risk_right, risk_rear});
}

std::array<double, 6> RiskFeatures::as_array() const {
  return {risk_front, risk_left, risk_right, risk_rear, count_vehicles_w, count_pedestrians_w};
}

DirectionalRisks directional_risks(const Frame& frame, const PodarConfig& cfg) {
  DirectionalRisks risks{};
  for (const auto& p : frame.participants) {
    const auto rel = relative_kinematics(frame.ego, p);
    const auto region = static_cast<std::size_t>(viewpoint_of(rel.bearing, cfg));
    risks[region] = std::max(risks[region], podar(rel, cfg, p.kind));
  }
  return risks;
}

WeightedCounts weighted_counts(const Frame& frame, const PodarConfig& cfg) {
  std::array<std::size_t, 4> veh{}, ped{};
  for (const auto& p : frame.participants) {
    const auto rel = relative_kinematics(frame.ego, p);
    if (rel.distance > cfg.detect_radius) continue;
    const auto v = static_cast<std::size_t>(viewpoint_of(rel.bearing, cfg));
    // Obstacles occupy space like stationary vehicles.
    if (p.kind == ParticipantKind::Pedestrian) {
      ++ped[v];
    } else {
      ++veh[v];
    }
  }
  WeightedCounts counts;
  for (std::size_t v = 0; v < 4; ++v) {
    const double w = viewpoint_weight(static_cast<Viewpoint>(v));
    counts.vehicles += w * static_cast<double>(veh[v]);
    counts.pedestrians += w * static_cast<double>(ped[v]);
  }
  return counts;
}

RiskFeatures frame_features(const Frame& frame, const PodarConfig& cfg) {
  const auto risks = directional_risks(frame, cfg);
  const auto counts = weighted_counts(frame, cfg);
  RiskFeatures f;
  f.risk_front = risks[static_cast<std::size_t>(Viewpoint::Front)];
  f.risk_left = risks[static_cast<std::size_t>(Viewpoint::Left)];
  f.risk_right = risks[static_cast<std::size_t>(Viewpoint::Right)];
  f.risk_rear = risks[static_cast<std::size_t>(Viewpoint::Rear)];
  f.count_vehicles_w = counts.vehicles;
  f.count_pedestrians_w = counts.pedestrians;
  return f;
}

namespace {

[[noreturn]] void rethrow_at_frame(const DegenerateError& e, std::size_t k) {
  throw DegenerateError("frame " + std::to_string(k) + ": " + e.what());
}

}  // namespace

std::vector<RiskFeatures> extract_features(const ScenarioLog& log, const PodarConfig& cfg) {
  std::vector<RiskFeatures> out;
  out.reserve(log.frames.size());
  for (std::size_t k = 0; k < log.frames.size(); ++k) {
    try {
      out.push_back(frame_features(log.frames[k], cfg));
    } catch (const DegenerateError& e) {
      rethrow_at_frame(e, k);
    }
  }
  return out;
}

std::vector<RiskFeatures> extract_features_parallel(const ScenarioLog& log,
                                                    const PodarConfig& cfg) {
  const auto n = static_cast<std::ptrdiff_t>(log.frames.size());
  std::vector<RiskFeatures> out(log.frames.size());
  // Lowest failing frame wins so the error matches the serial path.
  std::vector<std::optional<std::string>> errors(log.frames.size());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    try {
      out[k] = frame_features(log.frames[k], cfg);
    } catch (const DegenerateError& e) {
      errors[k] = e.what();
    }
  }

  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (errors[k]) rethrow_at_frame(DegenerateError(*errors[k]), k);
  }
  return out;
}

void write_features(std::ostream& out, std::span<const RiskFeatures> rows) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& f = rows[k];
    json j = {{"frame", k},
              {"risk_front", f.risk_front},
              {"risk_left", f.risk_left},
              {"risk_right", f.risk_right},
              {"risk_rear", f.risk_rear},
              {"count_vehicles_w", f.count_vehicles_w},
              {"count_pedestrians_w", f.count_pedestrians_w}};
    out << j.dump() << '\n';
  }
}

void save_features(std::span<const RiskFeatures> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_features(out, rows);
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RiskFeatures> parse_features(std::istream& in) {
  std::vector<RiskFeatures> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto frame = j.at("frame").get<std::size_t>();
      if (frame != rows.size()) throw ParseError("frame index out of sequence", lineno);
      RiskFeatures f;
      f.risk_front = j.at("risk_front").get<double>();
      f.risk_left = j.at("risk_left").get<double>();
      f.risk_right = j.at("risk_right").get<double>();
      f.risk_rear = j.at("risk_rear").get<double>();
      f.count_vehicles_w = j.at("count_vehicles_w").get<double>();
      f.count_pedestrians_w = j.at("count_pedestrians_w").get<double>();
      rows.push_back(f);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return rows;
}

std::vector<RiskFeatures> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_features(in);
}

}  // namespace prisk
