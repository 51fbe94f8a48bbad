#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "prisk/service.hpp"

using namespace prisk;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Fixture {
  fs::path root;
  std::unique_ptr<RatingService> service;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  Fixture() {
    root = fs::temp_directory_path() / "prisk_test_service";
    fs::remove_all(root);
    fs::create_directories(root / "scenarios");
    ScenarioParams p;
    p.duration = 15.0;
    auto lead = generate_synthetic(Template::LeadBrake, p, 1);
    lead.meta.name = "lead";
    save_scenario(lead, root / "scenarios" / "lead.jsonl");
    auto cruise = generate_synthetic(Template::StraightCruise, {}, 2);
    cruise.meta.name = "cruise";
    save_scenario(cruise, root / "scenarios" / "cruise.jsonl");
    service = std::make_unique<RatingService>(root / "scenarios", root / "ratings");
    service->mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~Fixture() {
    server.stop();
    thread.join();
    fs::remove_all(root);
  }

  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

std::string post_json(httplib::Client& c, const std::string& path, const json& body, int* status) {
  auto r = c.Post(path, body.dump(), "application/json");
  REQUIRE(r);
  *status = r->status;
  return r->body;
}

std::string create(httplib::Client& c, const std::string& rater, const std::string& scenario) {
  int status = 0;
  const auto body = post_json(c, "/sessions", {{"rater_id", rater}, {"scenario", scenario}}, &status);
  REQUIRE(status == 201);
  return json::parse(body).at("session_id").get<std::string>();
}

int rate(httplib::Client& c, const std::string& id, json frame, json level) {
  int status = 0;
  post_json(c, "/sessions/" + id + "/ratings", {{"frame", frame}, {"level", level}}, &status);
  return status;
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE_FIXTURE(Fixture, "scenario listing and frame pages") {
  auto c = client();
  auto r = c.Get("/scenarios");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto list = json::parse(r->body).at("scenarios");
  REQUIRE(list.size() == 2);
  CHECK(list[0].at("name") == "cruise");
  CHECK(list[1].at("frames") == 150);

  r = c.Get("/scenarios/lead/frames?from=140&count=50");
  REQUIRE(r);
  const auto page = json::parse(r->body);
  CHECK(page.at("count") == 10);
  CHECK(page.at("total") == 150);
  CHECK(page.at("frames").size() == 10);
  CHECK(page.at("frames")[0].at("t").get<double>() == doctest::Approx(14.0));

  CHECK(json::parse(c.Get("/scenarios/lead/frames")->body).at("count") == 100);
  CHECK(c.Get("/scenarios/nope/frames")->status == 404);
  CHECK(c.Get("/scenarios/lead/frames?from=151")->status == 422);
  CHECK(c.Get("/scenarios/lead/frames?count=-3")->status == 422);
}

TEST_CASE_FIXTURE(Fixture, "rating session lifecycle") {
  auto c = client();
  const auto scen_before = fs::file_size(root / "scenarios" / "lead.jsonl");
  const auto id = create(c, "alice", "lead");

  CHECK(rate(c, id, 0, 1) == 200);
  CHECK(rate(c, id, 40, 3) == 200);
  CHECK(rate(c, id, 40, 2) == 200);
  CHECK(rate(c, id, 10, 5) == 422);
  CHECK(rate(c, id, 150, 1) == 422);
  CHECK(rate(c, id, -1, 1) == 422);
  CHECK(rate(c, id, 3, "high") == 422);
  CHECK(rate(c, "missing", 3, 1) == 404);
  auto bad = c.Post("/sessions/" + id + "/ratings", "{frame:", "application/json");
  CHECK(bad->status == 400);

  auto got = json::parse(c.Get("/sessions/" + id)->body);
  CHECK(got.at("status") == "active");
  CHECK(got.at("ratings") == 3);
  CHECK(got.at("cursor") == 40);

  int status = 0;
  const auto done = json::parse(post_json(c, "/sessions/" + id + "/complete", json::object(), &status));
  CHECK(status == 200);
  CHECK(done.at("status") == "complete");
  CHECK(rate(c, id, 50, 1) == 409);
  post_json(c, "/sessions/" + id + "/complete", json::object(), &status);
  CHECK(status == 409);

  const auto trace_path = root / "ratings" / done.at("trace").get<std::string>();
  const auto trace = load_rating_trace(trace_path);
  const auto log = load_scenario(root / "scenarios" / "lead.jsonl");
  CHECK_NOTHROW(validate(trace, log.frames.size()));
  CHECK(trace.rater_id == "alice");
  CHECK(trace.ratings == std::vector<Rating>{{0, 1}, {40, 2}});
  const auto ds = merge_ratings(log, {trace});
  const auto& col = ds.labels.at("alice");
  CHECK(ds.rows().size() == 150);
  CHECK(*col[39] == 1);
  CHECK(*col[149] == 2);
  CHECK(fs::file_size(root / "scenarios" / "lead.jsonl") == scen_before);
}

TEST_CASE_FIXTURE(Fixture, "session errors") {
  auto c = client();
  int status = 0;
  post_json(c, "/sessions", {{"rater_id", "bob"}, {"scenario", "nope"}}, &status);
  CHECK(status == 404);
  post_json(c, "/sessions", {{"rater_id", "bob"}}, &status);
  CHECK(status == 422);
  post_json(c, "/sessions", {{"rater_id", "../x"}, {"scenario", "lead"}}, &status);
  CHECK(status == 422);
  CHECK(c.Get("/sessions/s999")->status == 404);

  const auto id = create(c, "bob", "cruise");
  post_json(c, "/sessions/" + id + "/complete", json::object(), &status);
  CHECK(status == 422);
  const auto ab = json::parse(post_json(c, "/sessions/" + id + "/abandon", json::object(), &status));
  CHECK(status == 200);
  CHECK(ab.at("status") == "abandoned");
  CHECK(rate(c, id, 1, 1) == 409);
  CHECK_FALSE(fs::exists(root / "ratings"));
}

TEST_CASE_FIXTURE(Fixture, "concurrent sessions stay isolated") {
  std::vector<std::thread> raters;
  std::vector<std::string> ids(6);
  for (int r = 0; r < 6; ++r) {
    raters.emplace_back([&, r] {
      auto c = client();
      auto res = c.Post("/sessions", json{{"rater_id", "r" + std::to_string(r)}, {"scenario", "lead"}}.dump(),
                        "application/json");
      ids[r] = json::parse(res->body).at("session_id");
      for (int f = 0; f < 30; ++f) {
        c.Post("/sessions/" + ids[r] + "/ratings", json{{"frame", f}, {"level", r % 5}}.dump(),
               "application/json");
      }
      c.Post("/sessions/" + ids[r] + "/complete", "{}", "application/json");
    });
  }
  for (auto& t : raters) t.join();
  for (int r = 0; r < 6; ++r) {
    const auto s = service->session(ids[r]);
    CHECK(s.ratings.size() == 30);
    CHECK(s.status == SessionStatus::Complete);
    for (const auto& rating : s.ratings) CHECK(rating.level == r % 5);
  }
}

TEST_CASE_FIXTURE(Fixture, "serving on a taken port fails") {
  CHECK_THROWS_AS(serve(*service, "127.0.0.1", port), BindError);
}

}  // TEST_SUITE
