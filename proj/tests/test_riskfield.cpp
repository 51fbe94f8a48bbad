#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "oracles.hpp"
#include "prisk/kvconfig.hpp"
#include "prisk/riskfield.hpp"

using namespace prisk;

namespace {

// Direct evaluation from positions and velocities with the default constants.
double podar_by_hand(const EgoState& e, const ParticipantState& p, double mass) {
  const double dx = p.pos.x - e.pos.x, dy = p.pos.y - e.pos.y;
  const double d = std::sqrt(dx * dx + dy * dy);
  const double v = -(dx * (p.vel.x - e.vel.x) + dy * (p.vel.y - e.vel.y)) / d;
  if (v <= 0.0 || d > 60.0) return 0.0;
  const double g = 0.5 * (1.5 + mass) * v * v;
  return g * std::pow(2.0, -d / 20.0) * std::pow(2.0, -(d / v) / 2.0);
}

ParticipantState participant(const std::string& id, ParticipantKind k, Vec2 pos, Vec2 vel = {}) {
  return {id, k, pos, vel};
}

Frame frame_with(std::vector<ParticipantState> ps, Vec2 ego_vel = {10.0, 0.0}) {
  Frame f;
  f.ego.vel = ego_vel;
  f.participants = std::move(ps);
  return f;
}

}  // namespace

TEST_SUITE("riskfield") {

TEST_CASE("relative kinematics on axis cases") {
  EgoState ego;
  ego.vel = {10.0, 0.0};
  const auto ahead = relative_kinematics(ego, participant("a", ParticipantKind::Vehicle, {20, 0}));
  CHECK(ahead.distance == doctest::Approx(20.0));
  CHECK(ahead.bearing == doctest::Approx(0.0));
  CHECK(ahead.closing_speed == doctest::Approx(10.0));
  CHECK(ahead.ttc == doctest::Approx(2.0));

  const auto behind =
      relative_kinematics(ego, participant("b", ParticipantKind::Vehicle, {-8, 0}, {10, 0}));
  CHECK(behind.closing_speed == doctest::Approx(0.0));
  CHECK(std::isinf(behind.ttc));

  const auto left = relative_kinematics(ego, participant("c", ParticipantKind::Vehicle, {0, 5}));
  CHECK(left.bearing == doctest::Approx(kPi / 2));

  CHECK_THROWS_AS(relative_kinematics(ego, participant("d", ParticipantKind::Vehicle, {0.001, 0})),
                  DegenerateError);
}

TEST_CASE("bearing is measured from the ego heading") {
  EgoState ego;
  ego.yaw = kPi / 2;
  const auto r = relative_kinematics(ego, participant("a", ParticipantKind::Vehicle, {0, 10}));
  CHECK(r.bearing == doctest::Approx(0.0));
  const auto l = relative_kinematics(ego, participant("b", ParticipantKind::Vehicle, {-10, 0}));
  CHECK(l.bearing == doctest::Approx(kPi / 2));
}

TEST_CASE("collision potential") {
  const PodarConfig cfg;
  RelativeKinematics rel;
  rel.distance = 10.0;
  CHECK(potential_collision(rel, cfg, ParticipantKind::Vehicle) == 0.0);
  rel.closing_speed = 10.0;
  CHECK(potential_collision(rel, cfg, ParticipantKind::Vehicle) == doctest::Approx(150.0));
  rel.closing_speed = -5.0;
  CHECK(potential_collision(rel, cfg, ParticipantKind::Vehicle) == 0.0);
}

TEST_CASE("podar at both half-lives") {
  const PodarConfig cfg;
  const RelativeKinematics rel{20.0, 0.0, 10.0, 2.0};
  CHECK(podar(rel, cfg, ParticipantKind::Vehicle) == doctest::Approx(37.5));
  const RelativeKinematics far{61.0, 0.0, 30.0, 61.0 / 30.0};
  CHECK(podar(far, cfg, ParticipantKind::Vehicle) == 0.0);
  const RelativeKinematics still{5.0, 0.0, 0.0, std::numeric_limits<double>::infinity()};
  CHECK(podar(still, cfg, ParticipantKind::Vehicle) == 0.0);
  CHECK(distance_decay(20.0, cfg) == doctest::Approx(0.5));
  CHECK(time_decay(2.0, cfg) == doctest::Approx(0.5));
  CHECK(time_decay(std::numeric_limits<double>::infinity(), cfg) == 0.0);
}

TEST_CASE("viewpoint regions and boundaries") {
  const PodarConfig cfg;
  const double q = kPi / 4;
  CHECK(viewpoint_of(0.0, cfg) == Viewpoint::Front);
  CHECK(viewpoint_of(kPi, cfg) == Viewpoint::Rear);
  CHECK(viewpoint_of(q, cfg) == Viewpoint::Front);
  CHECK(viewpoint_of(-q, cfg) == Viewpoint::Front);
  CHECK(viewpoint_of(kPi / 2, cfg) == Viewpoint::Left);
  CHECK(viewpoint_of(-kPi / 2, cfg) == Viewpoint::Right);
  CHECK(viewpoint_of(kPi - q, cfg) == Viewpoint::Left);
  CHECK(viewpoint_of(-(kPi - q), cfg) == Viewpoint::Right);
  CHECK(viewpoint_of(std::nextafter(kPi - q, 4.0), cfg) == Viewpoint::Rear);
}

TEST_CASE("every bearing maps to one region and all regions are reached") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    PodarConfig cfg;
    cfg.front_halfangle = rng.uniform(1.0, 89.0);
    cfg.rear_halfangle = rng.uniform(1.0, 89.0);
    std::array<int, 4> hits{};
    for (int i = 0; i < 2000; ++i) {
      const double b = wrap_angle(rng.uniform(-kPi, kPi));
      const auto v = viewpoint_of(b, cfg);
      ++hits[static_cast<int>(v)];
      const double a = std::abs(b);
      const double fh = cfg.front_halfangle * kPi / 180, rh = cfg.rear_halfangle * kPi / 180;
      if (a <= fh) CHECK(v == Viewpoint::Front);
      else if (a > kPi - rh) CHECK(v == Viewpoint::Rear);
      else CHECK(v == (b > 0 ? Viewpoint::Left : Viewpoint::Right));
    }
    for (int h : hits) CHECK(h > 0);
  }
}

TEST_CASE("directional risks take the region maximum") {
  const PodarConfig cfg;
  CHECK(directional_risks(frame_with({}), cfg) == DirectionalRisks{0, 0, 0, 0});

  const auto near = participant("a", ParticipantKind::Vehicle, {20, 0});
  const auto fast = participant("b", ParticipantKind::Vehicle, {15, 3}, {-6, 0});
  const auto f = frame_with({near, fast});
  const double pa = podar_by_hand(f.ego, near, 1.5);
  const double pb = podar_by_hand(f.ego, fast, 1.5);
  CHECK(pa == doctest::Approx(37.5));
  CHECK(pb > pa);
  const auto r = directional_risks(f, cfg);
  CHECK(r[0] == doctest::Approx(pb));
  CHECK(r[1] == 0.0);
  CHECK(r[3] == 0.0);

  const auto l = participant("l", ParticipantKind::Vehicle, {0, 10}, {0, -5});
  const auto rr = participant("r", ParticipantKind::Vehicle, {0, -10}, {0, 5});
  const auto sym = directional_risks(frame_with({l, rr}, {0, 0}), cfg);
  CHECK(sym[0] == 0.0);
  CHECK(sym[1] > 0.0);
  CHECK(sym[1] == sym[2]);
  CHECK(sym[3] == 0.0);
}

TEST_CASE("weighted counts") {
  const PodarConfig cfg;
  const auto fr = participant("f", ParticipantKind::Vehicle, {10, 0});
  const auto re = participant("r", ParticipantKind::Vehicle, {-10, 0});
  CHECK(weighted_counts(frame_with({fr, re}), cfg).vehicles == doctest::Approx(1.3));
  const auto p1 = participant("p1", ParticipantKind::Pedestrian, {0, 4});
  const auto p2 = participant("p2", ParticipantKind::Pedestrian, {1, 6});
  const auto w = weighted_counts(frame_with({p1, p2}), cfg);
  CHECK(w.pedestrians == doctest::Approx(1.2));
  CHECK(w.vehicles == 0.0);
  const auto ob = participant("o", ParticipantKind::Obstacle, {10, 0});
  CHECK(weighted_counts(frame_with({ob}), cfg).vehicles == doctest::Approx(1.0));
  const auto gone = participant("g", ParticipantKind::Vehicle, {100, 0});
  CHECK(weighted_counts(frame_with({gone}), cfg).vehicles == 0.0);
  const auto e = weighted_counts(frame_with({}), cfg);
  CHECK(e.vehicles == 0.0);
  CHECK(e.pedestrians == 0.0);
}

TEST_CASE("lead brake risk grows while the closing speed grows") {
  ScenarioParams p;
  p.gap = 25.0;
  p.lead_decel = -5.0;
  p.brake_time = 2.0;
  p.reaction_time = 1.5;
  p.participants = 0;
  const auto log = generate_synthetic(Template::LeadBrake, p, 3);
  const PodarConfig cfg;
  const auto feats = extract_features(log, cfg);

  auto lead = [&](std::size_t k) { return log.frames[k].participants.at(0); };
  auto closing = [&](std::size_t k) {
    return relative_kinematics(log.frames[k].ego, lead(k)).closing_speed;
  };
  std::size_t k = 21;
  while (k + 1 < log.frames.size() && closing(k + 1) > closing(k)) {
    CHECK(feats[k + 1].risk_front > feats[k].risk_front);
    ++k;
  }
  CHECK(k > 25);
  for (std::size_t s : {std::size_t{22}, std::size_t{25}, k}) {
    CHECK(feats[s].risk_front == doctest::Approx(podar_by_hand(log.frames[s].ego, lead(s), 1.5)));
  }
}

TEST_CASE("zero law, monotonicity and mass linearity over random frames") {
  Rng rng(2024);
  const PodarConfig cfg;
  PodarConfig doubled = cfg;
  doubled.mass_ego *= 2;
  doubled.mass_vehicle *= 2;
  doubled.mass_pedestrian *= 2;
  doubled.mass_obstacle *= 2;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto f = oracle::random_frame(rng, 1);
    const auto& q = f.participants[0];
    const auto rel = relative_kinematics(f.ego, q);
    const double v = podar(rel, cfg, q.kind);
    CHECK(v >= 0.0);
    if (rel.closing_speed <= 0.0) CHECK(v == 0.0);
    if (v == 0.0 || std::isnormal(v)) CHECK(podar(rel, doubled, q.kind) == 2.0 * v);

    if (v > 0.0 && rel.distance < cfg.detect_radius - 1.0) {
      auto closer = rel;
      closer.distance -= rng.uniform(0.01, std::min(1.0, rel.distance));
      CHECK(podar(closer, cfg, q.kind) > v);
      auto faster = rel;
      faster.closing_speed += rng.uniform(0.01, 5.0);
      faster.ttc = faster.distance / faster.closing_speed;
      CHECK(podar(faster, cfg, q.kind) > v);
    }
  }
}

TEST_CASE("feature extraction is invariant to participant order and parallel-identical") {
  Rng rng(99);
  const PodarConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    ScenarioLog log;
    log.meta.name = "random";
    for (int k = 0; k < 5; ++k) {
      auto f = oracle::random_frame(rng, rng.index(9));
      f.t = k * kFramePeriod;
      log.frames.push_back(f);
    }
    auto shuffled = log;
    for (auto& f : shuffled.frames) {
      for (std::size_t i = f.participants.size(); i > 1; --i) {
        std::swap(f.participants[i - 1], f.participants[rng.index(i)]);
      }
    }
    const auto a = extract_features(log, cfg);
    CHECK(extract_features(shuffled, cfg) == a);
    CHECK(extract_features_parallel(log, cfg) == a);
  }
}

TEST_CASE("degenerate separation names the frame") {
  ScenarioLog log;
  log.meta.name = "bad";
  for (int k = 0; k < 3; ++k) {
    Frame f;
    f.t = k * kFramePeriod;
    if (k == 2) f.participants.push_back(participant("x", ParticipantKind::Vehicle, {0.0, 0.0}));
    log.frames.push_back(f);
  }
  try {
    extract_features(log, PodarConfig{});
    FAIL("expected DegenerateError");
  } catch (const DegenerateError& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("feature files round-trip") {
  const auto log = generate_synthetic(Template::MixedUrban, {}, 12);
  const auto rows = extract_features(log, PodarConfig{});
  std::ostringstream out;
  write_features(out, rows);
  std::istringstream in(out.str());
  CHECK(parse_features(in) == rows);
}

TEST_CASE("config loading and validation") {
  std::istringstream in("podar.d_half = 10\nt_half = 3\n# comment\nunrelated = 1\n");
  const auto cfg = load_podar_config(KeyValueConfig::parse(in));
  CHECK(cfg.d_half == 10.0);
  CHECK(cfg.t_half == 3.0);
  CHECK(cfg.mass_ego == 1.5);
  PodarConfig bad;
  bad.front_halfangle = 90.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = {};
  bad.mass_pedestrian = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

}  // TEST_SUITE
