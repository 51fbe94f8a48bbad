#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prisk/scenario.hpp"

namespace prisk {

using json = nlohmann::json;

std::string_view to_string(ParticipantKind kind) {
  switch (kind) {
    case ParticipantKind::Vehicle: return "vehicle";
    case ParticipantKind::Pedestrian: return "pedestrian";
    case ParticipantKind::Obstacle: return "obstacle";
  }
  return "vehicle";
}

ParticipantKind parse_participant_kind(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "vehicle") return ParticipantKind::Vehicle;
  if (lower == "pedestrian") return ParticipantKind::Pedestrian;
  if (lower == "obstacle") return ParticipantKind::Obstacle;
  throw ConfigError("unknown participant kind '" + std::string(s) +
                    "' (expected vehicle, pedestrian or obstacle)");
}

std::string_view to_string(RatingSource s) {
  return s == RatingSource::Human ? "human" : "oracle";
}

namespace {

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

std::string frame_ctx(std::size_t k) { return "frame " + std::to_string(k) + ": "; }

}  // namespace

void validate(const ScenarioLog& log) {
  if (log.frames.empty()) throw ValidationError("scenario has no frames");

  for (std::size_t k = 0; k < log.frames.size(); ++k) {
    const auto& f = log.frames[k];
    const auto& e = f.ego;
    if (!std::isfinite(f.t) || f.t < 0.0) {
      throw ValidationError(frame_ctx(k) + "timestamp must be finite and non-negative");
    }
    if (e.t != f.t) throw ValidationError(frame_ctx(k) + "ego timestamp differs from frame");
    if (!finite(e.pos) || !finite(e.vel) || !finite(e.acc) || !std::isfinite(e.yaw) ||
        !std::isfinite(e.pitch) || !std::isfinite(e.roll)) {
      throw ValidationError(frame_ctx(k) + "non-finite ego state");
    }
    if (!(e.yaw > -kPi && e.yaw <= kPi)) {
      throw ValidationError(frame_ctx(k) + "yaw outside (-pi, pi]");
    }

    std::set<std::string> ids;
    for (const auto& p : f.participants) {
      if (!ids.insert(p.id).second) {
        throw ValidationError(frame_ctx(k) + "duplicate participant id '" + p.id + "'");
      }
      if (!finite(p.pos) || !finite(p.vel)) {
        throw ValidationError(frame_ctx(k) + "non-finite state for participant '" + p.id + "'");
      }
    }

    if (k > 0) {
      const double dt = f.t - log.frames[k - 1].t;
      if (!(dt > 0.0)) throw ValidationError(frame_ctx(k) + "timestamps not strictly increasing");
      if (std::abs(dt - kFramePeriod) > kFrameSpacingTol) {
        std::ostringstream msg;
        msg << frame_ctx(k) << "frame spacing " << dt << " s violates the 10 Hz rate";
        throw ValidationError(msg.str());
      }
    }
  }
}

namespace {

Frame frame_from_json(const json& j) {
  Frame f;
  f.t = j.at("t").get<double>();
  const auto& e = j.at("ego");
  f.ego.t = f.t;
  f.ego.pos = {e.at("x").get<double>(), e.at("y").get<double>()};
  f.ego.vel = {e.at("vx").get<double>(), e.at("vy").get<double>()};
  f.ego.acc = {e.at("ax").get<double>(), e.at("ay").get<double>()};
  f.ego.yaw = e.at("yaw").get<double>();
  f.ego.pitch = e.value("pitch", 0.0);
  f.ego.roll = e.value("roll", 0.0);
  if (auto it = j.find("participants"); it != j.end()) {
    for (const auto& pj : *it) {
      ParticipantState p;
      p.id = pj.at("id").get<std::string>();
      p.kind = parse_participant_kind(pj.at("kind").get<std::string>());
      p.pos = {pj.at("x").get<double>(), pj.at("y").get<double>()};
      p.vel = {pj.at("vx").get<double>(), pj.at("vy").get<double>()};
      f.participants.push_back(std::move(p));
    }
  }
  return f;
}

json frame_to_json(const Frame& f) {
  json parts = json::array();
  for (const auto& p : f.participants) {
    parts.push_back({{"id", p.id},
                     {"kind", to_string(p.kind)},
                     {"x", p.pos.x},
                     {"y", p.pos.y},
                     {"vx", p.vel.x},
                     {"vy", p.vel.y}});
  }
  const auto& e = f.ego;
  return {{"t", f.t},
          {"ego",
           {{"x", e.pos.x},
            {"y", e.pos.y},
            {"vx", e.vel.x},
            {"vy", e.vel.y},
            {"ax", e.acc.x},
            {"ay", e.acc.y},
            {"yaw", e.yaw},
            {"pitch", e.pitch},
            {"roll", e.roll}}},
          {"participants", std::move(parts)}};
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

ScenarioLog parse_scenario(std::istream& in, const std::string& fallback_name) {
  ScenarioLog log;
  log.meta.name = fallback_name;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      const auto j = json::parse(line);
      if (!j.is_object()) throw ParseError("expected an object", lineno);
      if (log.frames.empty()) {
        if (auto m = j.find("meta"); m != j.end()) {
          log.meta.name = m->value("name", fallback_name);
          log.meta.seed = m->value("seed", std::uint64_t{0});
          log.meta.description = m->value("description", std::string{});
        }
      }
      log.frames.push_back(frame_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  validate(log);
  return log;
}

ScenarioLog load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read scenario " + path.string());
  return parse_scenario(in, path.stem().string());
}

void write_scenario(std::ostream& out, const ScenarioLog& log) {
  for (std::size_t k = 0; k < log.frames.size(); ++k) {
    auto j = frame_to_json(log.frames[k]);
    if (k == 0) {
      j["meta"] = {{"name", log.meta.name},
                   {"seed", log.meta.seed},
                   {"description", log.meta.description}};
    }
    out << j.dump() << '\n';
  }
}

std::string format_frame(const Frame& frame) { return frame_to_json(frame).dump(); }

void save_scenario(const ScenarioLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scenario " + path.string());
  write_scenario(out, log);
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

void validate(const RatingTrace& trace, std::optional<std::size_t> frame_count) {
  std::set<std::size_t> seen;
  for (const auto& r : trace.ratings) {
    if (r.level < 0 || r.level >= kNumLevels) {
      throw ValidationError("rating level " + std::to_string(r.level) + " outside 0..4");
    }
    if (frame_count && r.frame >= *frame_count) {
      throw ValidationError("rating frame " + std::to_string(r.frame) + " outside scenario (" +
                            std::to_string(*frame_count) + " frames)");
    }
    if (!seen.insert(r.frame).second) {
      throw ValidationError("more than one rating for frame " + std::to_string(r.frame));
    }
  }
}

RatingTrace parse_rating_trace(std::istream& in) {
  RatingTrace trace;
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      const auto j = json::parse(line);
      const auto rater = j.at("rater_id").get<std::string>();
      const auto scenario = j.at("scenario").get<std::string>();
      const auto source = j.at("source").get<std::string>();
      RatingSource src;
      if (source == "human") {
        src = RatingSource::Human;
      } else if (source == "oracle") {
        src = RatingSource::Oracle;
      } else {
        throw ParseError("unknown rating source '" + source + "'", lineno);
      }
      if (first) {
        trace.rater_id = rater;
        trace.scenario_name = scenario;
        trace.source = src;
        first = false;
      } else if (rater != trace.rater_id || scenario != trace.scenario_name ||
                 src != trace.source) {
        throw ParseError("trace mixes raters, scenarios or sources", lineno);
      }
      Rating r;
      const auto frame = j.at("frame").get<long long>();
      if (frame < 0) throw ParseError("negative frame index", lineno);
      r.frame = static_cast<std::size_t>(frame);
      r.level = j.at("level").get<int>();
      trace.ratings.push_back(r);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  validate(trace);
  return trace;
}

RatingTrace load_rating_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read rating trace " + path.string());
  return parse_rating_trace(in);
}

void write_rating_trace(std::ostream& out, const RatingTrace& trace) {
  for (const auto& r : trace.ratings) {
    json j = {{"rater_id", trace.rater_id},
              {"scenario", trace.scenario_name},
              {"frame", r.frame},
              {"level", r.level},
              {"source", to_string(trace.source)}};
    out << j.dump() << '\n';
  }
}

void save_rating_trace(const RatingTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write rating trace " + path.string());
  write_rating_trace(out, trace);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace prisk
