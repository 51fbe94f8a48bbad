#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prisk/scenario.hpp"

namespace prisk {

class KeyValueConfig;

// Parameters of the per-participant risk field. Masses are dimensionless
// virtual-mass units.
struct PodarConfig {
  double mass_ego = 1.5;
  double mass_vehicle = 1.5;
  double mass_pedestrian = 0.07;
  double mass_obstacle = 1.0;
  double d_half = 20.0;          // m, distance at which the distance decay halves
  double t_half = 2.0;           // s, time-to-collision at which the time decay halves
  double detect_radius = 60.0;   // m
  double front_halfangle = 45.0; // deg
  double rear_halfangle = 45.0;  // deg

  double mass_of(ParticipantKind kind) const;
};

void validate(const PodarConfig& cfg);  // throws ConfigError

// Plain `key = value` lines, `#` comments. Keys are the field names above,
// optionally prefixed with `podar.`; unknown keys are ignored.
PodarConfig load_podar_config(const std::filesystem::path& path);
PodarConfig load_podar_config(const KeyValueConfig& kv);

struct RelativeKinematics {
  double distance = 0.0;
  double bearing = 0.0;        // rad, from ego heading, counterclockwise positive
  double closing_speed = 0.0;  // m/s, positive when approaching
  double ttc = 0.0;            // s, +inf unless closing
};

enum class Viewpoint { Front = 0, Left = 1, Right = 2, Rear = 3 };

std::string_view to_string(Viewpoint v);

inline constexpr double kMinSeparation = 0.01;  // m

// Throws DegenerateError when the positions are closer than kMinSeparation.
RelativeKinematics relative_kinematics(const EgoState& ego, const ParticipantState& p);

// Collision potential 0.5 * (M_ego + M) * V * |V|, clamped below at zero.
double potential_collision(const RelativeKinematics& rel, const PodarConfig& cfg,
                           ParticipantKind kind);

double distance_decay(double distance, const PodarConfig& cfg);
double time_decay(double ttc, const PodarConfig& cfg);

// Collision potential attenuated by distance and time decay. Zero outside the
// detection radius or when the participant is not closing.
double podar(const RelativeKinematics& rel, const PodarConfig& cfg, ParticipantKind kind);

Viewpoint viewpoint_of(double bearing, const PodarConfig& cfg);

// Count weight of each viewpoint: front 1, left/right 0.6, rear 0.3.
double viewpoint_weight(Viewpoint v);

struct RiskFeatures {
  double risk_front = 0.0;
  double risk_left = 0.0;
  double risk_right = 0.0;
  double risk_rear = 0.0;
  double count_vehicles_w = 0.0;
  double count_pedestrians_w = 0.0;

  double max_risk() const;
  std::array<double, 6> as_array() const;

  friend bool operator==(const RiskFeatures&, const RiskFeatures&) = default;
};

using DirectionalRisks = std::array<double, 4>;  // indexed by Viewpoint

DirectionalRisks directional_risks(const Frame& frame, const PodarConfig& cfg);

struct WeightedCounts {
  double vehicles = 0.0;
  double pedestrians = 0.0;
};

WeightedCounts weighted_counts(const Frame& frame, const PodarConfig& cfg);

RiskFeatures frame_features(const Frame& frame, const PodarConfig& cfg);

// Serial reference. DegenerateError messages carry the frame index.
std::vector<RiskFeatures> extract_features(const ScenarioLog& log, const PodarConfig& cfg);

// OpenMP over frames; bit-identical to extract_features.
std::vector<RiskFeatures> extract_features_parallel(const ScenarioLog& log,
                                                    const PodarConfig& cfg);

void write_features(std::ostream& out, std::span<const RiskFeatures> rows);
void save_features(std::span<const RiskFeatures> rows, const std::filesystem::path& path);
std::vector<RiskFeatures> parse_features(std::istream& in);
std::vector<RiskFeatures> load_features(const std::filesystem::path& path);

}  // namespace prisk
