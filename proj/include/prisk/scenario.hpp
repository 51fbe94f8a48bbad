#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prisk/common.hpp"

namespace prisk {

struct PodarConfig;

inline constexpr double kFramePeriod = 0.1;       // 10 Hz logs
inline constexpr double kFrameSpacingTol = 1e-3;  // seconds
inline constexpr int kNumLevels = 5;

struct EgoState {
  double t = 0.0;
  Vec2 pos;
  Vec2 vel;
  Vec2 acc;
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  friend bool operator==(const EgoState&, const EgoState&) = default;
};

enum class ParticipantKind { Vehicle, Pedestrian, Obstacle };

std::string_view to_string(ParticipantKind kind);
ParticipantKind parse_participant_kind(std::string_view s);  // throws ConfigError

struct ParticipantState {
  std::string id;
  ParticipantKind kind = ParticipantKind::Vehicle;
  Vec2 pos;
  Vec2 vel;

  friend bool operator==(const ParticipantState&, const ParticipantState&) = default;
};

struct Frame {
  double t = 0.0;
  EgoState ego;
  std::vector<ParticipantState> participants;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct ScenarioMeta {
  std::string name;
  std::uint64_t seed = 0;
  std::string description;

  friend bool operator==(const ScenarioMeta&, const ScenarioMeta&) = default;
};

struct ScenarioLog {
  ScenarioMeta meta;
  std::vector<Frame> frames;

  friend bool operator==(const ScenarioLog&, const ScenarioLog&) = default;
};

// Throws ValidationError on the first violated invariant.
void validate(const ScenarioLog& log);

// Line-delimited frame records. The first record may carry an extra "meta"
// object; when absent the name defaults to `fallback_name`.
ScenarioLog parse_scenario(std::istream& in, const std::string& fallback_name);
ScenarioLog load_scenario(const std::filesystem::path& path);
void write_scenario(std::ostream& out, const ScenarioLog& log);
void save_scenario(const ScenarioLog& log, const std::filesystem::path& path);

// One frame record as compact JSON text, as written by write_scenario.
std::string format_frame(const Frame& frame);

// ---------------------------------------------------------------------------
// Synthetic generation

enum class Template {
  StraightCruise,
  SideOvertake,
  LeadBrake,
  IntersectionStop,
  PedestrianCross,
  MixedUrban,
};

inline constexpr std::array<Template, 6> kAllTemplates = {
    Template::StraightCruise,   Template::SideOvertake,    Template::LeadBrake,
    Template::IntersectionStop, Template::PedestrianCross, Template::MixedUrban};

std::string_view to_string(Template t);
Template parse_template(std::string_view s);  // throws ConfigError naming valid templates

// Unset fields are drawn from the seed. Documented ranges:
//   duration      [1, 120] s       (default 8..12)
//   ego_speed     [0, 30] m/s      (default 8..15)
//   participants  [0, 12]          extra background participants
//   gap           [5, 100] m       LeadBrake initial headway (default 20..35)
//   lead_decel    [-9, -0.5] m/s2  LeadBrake lead deceleration (default -6..-2)
//   brake_time    [0, 60] s        LeadBrake braking onset (default 1.5..3)
//   reaction_time [0.3, 3] s       LeadBrake ego reaction delay (default 0.8..1.5)
struct ScenarioParams {
  std::optional<double> duration;
  std::optional<double> ego_speed;
  std::optional<int> participants;
  std::optional<double> gap;
  std::optional<double> lead_decel;
  std::optional<double> brake_time;
  std::optional<double> reaction_time;
};

// Deterministic for fixed (template, params, seed). Throws ConfigError on
// out-of-range parameters.
ScenarioLog generate_synthetic(Template tmpl, const ScenarioParams& params,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ratings

enum class RatingSource { Human, Oracle };

std::string_view to_string(RatingSource s);

struct Rating {
  std::size_t frame = 0;
  int level = 0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

struct RatingTrace {
  std::string rater_id;
  std::string scenario_name;
  std::vector<Rating> ratings;  // ordered by entry
  RatingSource source = RatingSource::Human;

  friend bool operator==(const RatingTrace&, const RatingTrace&) = default;
};

// Checks level range and duplicate frames; frame bounds are checked against
// `frame_count` when given. Throws ValidationError.
void validate(const RatingTrace& trace, std::optional<std::size_t> frame_count = {});

RatingTrace parse_rating_trace(std::istream& in);
RatingTrace load_rating_trace(const std::filesystem::path& path);
void write_rating_trace(std::ostream& out, const RatingTrace& trace);
void save_rating_trace(const RatingTrace& trace, const std::filesystem::path& path);

struct OracleConfig {
  std::string rater_id = "oracle";
  std::array<double, 4> thresholds = {0.5, 4.0, 12.0, 25.0};
  double epsilon = 0.0;  // adjacent-level flip probability, [0, 0.5)
  int bias = 0;          // -1, 0 or +1
};

void validate(const OracleConfig& cfg);  // throws ConfigError

// Number of thresholds at or below `risk`.
int quantize_risk(double risk, const std::array<double, 4>& thresholds);

// Noisy quantized maximum directional risk, one rating per frame.
RatingTrace oracle_label(const ScenarioLog& log, const OracleConfig& oracle,
                         const PodarConfig& podar, std::uint64_t seed);

// Hold-last-value densification of sparse keystroke ratings. Frames before a
// rater's first rating carry no label.
struct LabeledDataset {
  std::string scenario_name;
  std::size_t frame_count = 0;
  std::map<std::string, std::vector<std::optional<int>>> labels;  // by rater_id

  struct Row {
    std::size_t frame;
    std::string rater_id;
    int level;
  };
  std::vector<Row> rows() const;
};

LabeledDataset merge_ratings(const ScenarioLog& log, const std::vector<RatingTrace>& traces);

}  // namespace prisk
