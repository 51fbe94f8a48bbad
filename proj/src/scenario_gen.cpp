#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>

#include "prisk/scenario.hpp"

namespace prisk {

std::string_view to_string(Template t) {
  switch (t) {
    case Template::StraightCruise: return "StraightCruise";
    case Template::SideOvertake: return "SideOvertake";
    case Template::LeadBrake: return "LeadBrake";
    case Template::IntersectionStop: return "IntersectionStop";
    case Template::PedestrianCross: return "PedestrianCross";
    case Template::MixedUrban: return "MixedUrban";
  }
  return "StraightCruise";
}

Template parse_template(std::string_view s) {
  for (auto t : kAllTemplates) {
    if (to_string(t) == s) return t;
  }
  std::string valid;
  for (auto t : kAllTemplates) {
    if (!valid.empty()) valid += ", ";
    valid += to_string(t);
  }
  throw ConfigError("unknown scenario template '" + std::string(s) + "' (valid: " + valid + ")");
}

namespace {

constexpr double kDt = kFramePeriod;
constexpr double kLaneWidth = 3.5;

struct Agent {
  ParticipantState state;
  Vec2 acc;
};

// Ego travels along +x in lane y = 0 throughout.
struct World {
  Vec2 ego_pos;
  double ego_speed = 0.0;
  std::vector<Agent> agents;
  double t = 0.0;
};

double body_length(ParticipantKind k) {
  switch (k) {
    case ParticipantKind::Vehicle: return 4.5;
    case ParticipantKind::Obstacle: return 2.0;
    case ParticipantKind::Pedestrian: return 1.0;
  }
  return 4.5;
}

// Intelligent-driver-model longitudinal command.
double idm(double v, double v_desired, std::optional<double> gap, double closing) {
  constexpr double a_max = 2.0, b_comf = 3.0, s0 = 3.0, headway = 1.2;
  const double ratio = v / std::max(v_desired, 0.1);
  double a = a_max * (1.0 - ratio * ratio * ratio * ratio);
  if (gap) {
    const double s_star =
        s0 + std::max(0.0, v * headway + v * closing / (2.0 * std::sqrt(a_max * b_comf)));
    const double s = std::max(*gap, 0.1);
    a -= a_max * (s_star / s) * (s_star / s);
  }
  return std::clamp(a, -9.0, a_max);
}

// Nearest in-lane agent ahead of ego: (bumper gap, closing speed).
std::optional<std::pair<double, double>> lead_in_lane(const World& w,
                                                      std::size_t skip = SIZE_MAX) {
  std::optional<std::pair<double, double>> best;
  for (std::size_t i = 0; i < w.agents.size(); ++i) {
    if (i == skip) continue;
    const auto& p = w.agents[i].state;
    if (std::abs(p.pos.y - w.ego_pos.y) >= 1.8) continue;
    const double dx = p.pos.x - w.ego_pos.x;
    if (dx <= 0.0) continue;
    const double gap = dx - body_length(p.kind);
    if (!best || gap < best->first) best = {{gap, w.ego_speed - p.vel.x}};
  }
  return best;
}

double clamp_to_stop(double v, double a) { return (v + a * kDt < 0.0) ? -v / kDt : a; }

// Background traffic: adjacent-lane vehicles and sidewalk pedestrians.
void add_background(Rng& rng, int n, double ego_speed, std::vector<Agent>& agents) {
  int veh = 0, ped = 0;
  for (const auto& a : agents) {
    if (a.state.kind == ParticipantKind::Pedestrian) ++ped; else ++veh;
  }
  for (int i = 0; i < n; ++i) {
    Agent a;
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    if (rng.bernoulli(0.7)) {
      a.state.id = "veh_" + std::to_string(++veh);
      a.state.kind = ParticipantKind::Vehicle;
      a.state.pos = {rng.uniform(-40.0, 50.0), side * kLaneWidth};
      a.state.vel = {std::max(0.0, ego_speed + rng.uniform(-4.0, 4.0)), 0.0};
      a.acc = {rng.uniform(-0.5, 0.5), 0.0};
    } else {
      a.state.id = "ped_" + std::to_string(++ped);
      a.state.kind = ParticipantKind::Pedestrian;
      a.state.pos = {rng.uniform(-10.0, 60.0), side * rng.uniform(6.0, 8.0)};
      a.state.vel = {(rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.8, 1.6), 0.0};
    }
    agents.push_back(std::move(a));
  }
}

using EgoController = std::function<double(const World&)>;
using AgentController = std::function<void(World&)>;

ScenarioLog simulate(World w, int frames, const EgoController& ego_accel,
                     const AgentController& agent_accel) {
  ScenarioLog log;
  log.frames.reserve(static_cast<std::size_t>(frames));
  for (int k = 0; k < frames; ++k) {
    w.t = k * kDt;
    const double a_ego = clamp_to_stop(w.ego_speed, ego_accel(w));
    agent_accel(w);
    for (auto& a : w.agents) {
      // Agents never reverse: braking stops at zero speed.
      if (a.acc.x < 0.0 && a.state.vel.x >= 0.0 && a.state.vel.x + a.acc.x * kDt < 0.0) {
        a.acc.x = -a.state.vel.x / kDt;
      }
    }

    Frame f;
    f.t = w.t;
    f.ego.t = w.t;
    f.ego.pos = w.ego_pos;
    f.ego.vel = {w.ego_speed, 0.0};
    f.ego.acc = {a_ego, 0.0};
    f.ego.yaw = 0.0;
    for (const auto& a : w.agents) f.participants.push_back(a.state);
    log.frames.push_back(std::move(f));

    // Explicit Euler keeps positions the cumulative integral of velocities.
    w.ego_pos = w.ego_pos + kDt * Vec2{w.ego_speed, 0.0};
    w.ego_speed = std::max(0.0, w.ego_speed + kDt * a_ego);
    for (auto& a : w.agents) {
      const double before = a.state.vel.x;
      a.state.pos = a.state.pos + kDt * a.state.vel;
      a.state.vel = a.state.vel + kDt * a.acc;
      if (before >= 0.0 && a.state.vel.x < 0.0) a.state.vel.x = 0.0;
    }
  }
  return log;
}

void check_range(const char* name, std::optional<double> v, double lo, double hi) {
  if (v && !(*v >= lo && *v <= hi)) {
    std::ostringstream msg;
    msg << "scenario parameter " << name << " = " << *v << " outside [" << lo << ", " << hi
        << "]";
    throw ConfigError(msg.str());
  }
}

void validate_params(const ScenarioParams& p) {
  check_range("duration", p.duration, 1.0, 120.0);
  check_range("ego_speed", p.ego_speed, 0.0, 30.0);
  if (p.participants) {
    check_range("participants", static_cast<double>(*p.participants), 0.0, 12.0);
  }
  check_range("gap", p.gap, 5.0, 100.0);
  check_range("lead_decel", p.lead_decel, -9.0, -0.5);
  check_range("brake_time", p.brake_time, 0.0, 60.0);
  check_range("reaction_time", p.reaction_time, 0.3, 3.0);
}

struct Common {
  int frames;
  double speed;
  int extras;
};

Common draw_common(Rng& rng, const ScenarioParams& p, int max_extra) {
  Common c;
  const double duration = p.duration ? *p.duration : rng.uniform(8.0, 12.0);
  c.frames = std::max(1, static_cast<int>(std::lround(duration / kDt)));
  c.speed = p.ego_speed ? *p.ego_speed : rng.uniform(8.0, 15.0);
  c.extras = p.participants ? *p.participants
                            : static_cast<int>(rng.index(static_cast<std::size_t>(max_extra) + 1));
  return c;
}

ScenarioLog straight_cruise(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 3);
  World w;
  w.ego_speed = c.speed;
  add_background(rng, c.extras, c.speed, w.agents);
  return simulate(
      w, c.frames, [](const World&) { return 0.0; }, [](World&) {});
}

ScenarioLog side_overtake(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 2);
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double cut_gap = rng.uniform(10.0, 18.0);
  const double merge_time = 2.5;
  const double brake = rng.uniform(1.5, 3.5);
  const double brake_for = rng.uniform(1.5, 3.0);

  World w;
  w.ego_speed = c.speed;
  Agent ov;
  ov.state.id = "veh_overtake";
  ov.state.kind = ParticipantKind::Vehicle;
  ov.state.pos = {-rng.uniform(12.0, 30.0), side * kLaneWidth};
  ov.state.vel = {c.speed + rng.uniform(3.0, 7.0), 0.0};
  w.agents.push_back(ov);
  add_background(rng, c.extras, c.speed, w.agents);
  // Background vehicles stay out of the overtaking lane.
  for (std::size_t i = 1; i < w.agents.size(); ++i) {
    auto& s = w.agents[i].state;
    if (s.kind == ParticipantKind::Vehicle) s.pos.y = -side * kLaneWidth;
  }

  enum class Phase { Passing, Merging, Braking, Cruising };
  auto phase = std::make_shared<Phase>(Phase::Passing);
  auto phase_start = std::make_shared<double>(0.0);
  const double v_ego = c.speed;

  auto ego = [v_ego](const World& world) {
    const auto lead = lead_in_lane(world);
    return lead ? idm(world.ego_speed, v_ego, lead->first, lead->second)
                : idm(world.ego_speed, v_ego, std::nullopt, 0.0);
  };
  auto agents = [=](World& world) {
    auto& a = world.agents[0];
    switch (*phase) {
      case Phase::Passing:
        a.acc = {0.0, 0.0};
        if (a.state.pos.x > world.ego_pos.x + cut_gap) {
          *phase = Phase::Merging;
          *phase_start = world.t;
          a.state.vel.y = -side * kLaneWidth / merge_time;
        }
        break;
      case Phase::Merging:
        if (std::abs(a.state.pos.y) <= std::abs(a.state.vel.y) * kDt * 0.5) {
          a.state.vel.y = 0.0;
          *phase = Phase::Braking;
          *phase_start = world.t;
          a.acc = {-brake, 0.0};
        }
        break;
      case Phase::Braking:
        if (world.t - *phase_start >= brake_for || a.state.vel.x <= 0.0) {
          *phase = Phase::Cruising;
          a.acc = {0.0, 0.0};
        }
        break;
      case Phase::Cruising:
        break;
    }
    for (std::size_t i = 1; i < world.agents.size(); ++i) {
      auto& b = world.agents[i];
      if (b.state.vel.x <= 0.0 && b.state.kind == ParticipantKind::Vehicle) b.acc = {0.0, 0.0};
    }
  };
  return simulate(w, c.frames, ego, agents);
}

ScenarioLog lead_brake(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 2);
  const double gap = p.gap ? *p.gap : rng.uniform(20.0, 35.0);
  const double decel = p.lead_decel ? *p.lead_decel : -rng.uniform(2.0, 6.0);
  const double onset = p.brake_time ? *p.brake_time : rng.uniform(1.5, 3.0);
  const double reaction = p.reaction_time ? *p.reaction_time : rng.uniform(0.8, 1.5);
  const double margin = std::min(5.0, gap / 2.0);

  World w;
  w.ego_speed = c.speed;
  Agent lead;
  lead.state.id = "veh_lead";
  lead.state.kind = ParticipantKind::Vehicle;
  lead.state.pos = {gap, 0.0};
  lead.state.vel = {c.speed, 0.0};
  w.agents.push_back(lead);
  add_background(rng, c.extras, c.speed, w.agents);

  auto braking = std::make_shared<bool>(false);
  auto ego = [=](const World& world) {
    if (world.t + 1e-9 < onset) return 0.0;
    const auto& l = world.agents[0].state;
    const double lead_stop = l.pos.x + l.vel.x * l.vel.x / (2.0 * std::abs(decel));
    const double room = std::max(lead_stop - world.ego_pos.x - margin, 0.1);
    const double needed = world.ego_speed * world.ego_speed / (2.0 * room);
    if (!*braking && (world.t + 1e-9 >= onset + reaction || needed >= 6.0)) *braking = true;
    return *braking ? -std::min(needed, 9.5) : 0.0;
  };
  auto agents = [=](World& world) {
    auto& l = world.agents[0];
    l.acc = {(world.t + 1e-9 >= onset && l.state.vel.x > 0.0) ? decel : 0.0, 0.0};
    for (std::size_t i = 1; i < world.agents.size(); ++i) {
      auto& b = world.agents[i];
      if (b.state.vel.x <= 0.0 && b.state.kind == ParticipantKind::Vehicle) b.acc = {0.0, 0.0};
    }
  };
  return simulate(w, c.frames, ego, agents);
}

ScenarioLog intersection_stop(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 1);
  const double line = rng.uniform(30.0, 55.0);
  const int crossing = 2 + static_cast<int>(rng.index(3));

  World w;
  w.ego_speed = c.speed;
  double green = 0.0;
  double offset = 0.0;
  for (int j = 0; j < crossing; ++j) {
    Agent a;
    a.state.id = "veh_cross_" + std::to_string(j + 1);
    a.state.kind = ParticipantKind::Vehicle;
    const double dir = (j % 2 == 0) ? 1.0 : -1.0;
    const double speed = rng.uniform(8.0, 13.0);
    offset += rng.uniform(10.0, 30.0);
    const double start = 20.0 + offset;
    a.state.pos = {line + (dir > 0 ? 6.0 : 10.0), -dir * start};
    a.state.vel = {0.0, dir * speed};
    green = std::max(green, (start + 12.0) / speed + 1.0);
    w.agents.push_back(std::move(a));
  }
  add_background(rng, c.extras, c.speed, w.agents);

  const double v_ego = c.speed;
  auto ego = [=](const World& world) {
    std::optional<double> gap;
    double closing = 0.0;
    if (world.t < green && world.ego_pos.x < line) {
      gap = line - world.ego_pos.x;
      closing = world.ego_speed;
    }
    if (const auto lead = lead_in_lane(world); lead && (!gap || lead->first < *gap)) {
      gap = lead->first;
      closing = lead->second;
    }
    return idm(world.ego_speed, v_ego, gap, closing);
  };
  return simulate(w, c.frames, ego, [](World&) {});
}

ScenarioLog pedestrian_cross(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 2);
  const double cross_x = rng.uniform(30.0, 50.0);
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double walk = rng.uniform(1.0, 1.8);
  const double start = rng.uniform(0.0, 2.5);

  World w;
  w.ego_speed = c.speed;
  Agent ped;
  ped.state.id = "ped_cross";
  ped.state.kind = ParticipantKind::Pedestrian;
  ped.state.pos = {cross_x, -side * rng.uniform(6.0, 9.0)};
  w.agents.push_back(ped);
  add_background(rng, c.extras, c.speed, w.agents);

  const double v_ego = c.speed;
  auto ego = [=](const World& world) {
    const auto& s = world.agents[0].state;
    const bool approaching = s.pos.y * side < 0.0 && std::abs(s.pos.y) < 9.5;
    const bool in_road = std::abs(s.pos.y) < 3.5;
    std::optional<double> gap;
    double closing = 0.0;
    if ((approaching || in_road) && world.ego_pos.x < cross_x - 2.0) {
      gap = cross_x - 2.0 - world.ego_pos.x;
      closing = world.ego_speed;
    }
    // The crossing pedestrian is handled by the virtual stop above.
    if (const auto lead = lead_in_lane(world, 0); lead && (!gap || lead->first < *gap)) {
      gap = lead->first;
      closing = lead->second;
    }
    return idm(world.ego_speed, v_ego, gap, closing);
  };
  auto agents = [=](World& world) {
    auto& a = world.agents[0];
    if (world.t + 1e-9 >= start && a.state.vel.y == 0.0 && a.state.pos.y * side < 0.0) {
      a.state.vel.y = side * walk;
    }
  };
  return simulate(w, c.frames, ego, agents);
}

ScenarioLog mixed_urban(Rng& rng, const ScenarioParams& p) {
  const auto c = draw_common(rng, p, 3);
  World w;
  w.ego_speed = c.speed;

  Agent lead;
  lead.state.id = "veh_lead";
  lead.state.kind = ParticipantKind::Vehicle;
  lead.state.pos = {rng.uniform(15.0, 30.0), 0.0};
  lead.state.vel = {rng.uniform(6.0, 12.0), 0.0};
  w.agents.push_back(lead);

  // Piecewise-constant lead acceleration schedule.
  std::vector<std::pair<double, double>> schedule;
  for (double t = 0.0; t < c.frames * kDt;) {
    schedule.emplace_back(t, rng.uniform(-3.5, 1.5));
    t += rng.uniform(1.5, 3.0);
  }

  if (rng.bernoulli(0.6)) {
    Agent obs;
    obs.state.id = "obs_1";
    obs.state.kind = ParticipantKind::Obstacle;
    obs.state.pos = {rng.uniform(30.0, 80.0), -2.6};
    w.agents.push_back(obs);
  }
  add_background(rng, 1 + c.extras, c.speed, w.agents);

  const double v_ego = c.speed;
  auto ego = [=](const World& world) {
    const auto lead_info = lead_in_lane(world);
    return lead_info ? idm(world.ego_speed, v_ego, lead_info->first, lead_info->second)
                     : idm(world.ego_speed, v_ego, std::nullopt, 0.0);
  };
  auto agents = [schedule](World& world) {
    auto& l = world.agents[0];
    double a = 0.0;
    for (const auto& [t0, acc] : schedule) {
      if (world.t + 1e-9 >= t0) a = acc;
    }
    if (l.state.vel.x >= 16.0 && a > 0.0) a = 0.0;
    l.acc = {a, 0.0};
    for (std::size_t i = 1; i < world.agents.size(); ++i) {
      auto& b = world.agents[i];
      if (b.state.vel.x <= 0.0 && b.state.kind == ParticipantKind::Vehicle) b.acc = {0.0, 0.0};
    }
  };
  return simulate(w, c.frames, ego, agents);
}

}  // namespace

ScenarioLog generate_synthetic(Template tmpl, const ScenarioParams& params, std::uint64_t seed) {
  validate_params(params);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(tmpl) + 1));

  ScenarioLog log;
  switch (tmpl) {
    case Template::StraightCruise: log = straight_cruise(rng, params); break;
    case Template::SideOvertake: log = side_overtake(rng, params); break;
    case Template::LeadBrake: log = lead_brake(rng, params); break;
    case Template::IntersectionStop: log = intersection_stop(rng, params); break;
    case Template::PedestrianCross: log = pedestrian_cross(rng, params); break;
    case Template::MixedUrban: log = mixed_urban(rng, params); break;
  }
  log.meta.name = std::string(to_string(tmpl)) + "_" + std::to_string(seed);
  log.meta.seed = seed;
  log.meta.description = "synthetic " + std::string(to_string(tmpl)) + " scenario";
  validate(log);
  return log;
}

}  // namespace prisk
