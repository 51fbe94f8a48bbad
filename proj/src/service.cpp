#include "prisk/service.hpp"

#include <algorithm>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace prisk {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Complete: return "complete";
    case SessionStatus::Abandoned: return "abandoned";
  }
  return "active";
}

RatingService::RatingService(fs::path scenario_dir, fs::path ratings_dir)
    : scenario_dir_(std::move(scenario_dir)), ratings_dir_(std::move(ratings_dir)) {
  if (!fs::is_directory(scenario_dir_)) {
    throw IoError("scenario directory " + scenario_dir_.string() + " does not exist");
  }
}

namespace {

bool valid_rater_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

std::vector<ScenarioInfo> RatingService::scenarios() const {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(scenario_dir_)) {
    if (e.path().extension() == ".jsonl") names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<ScenarioInfo> out;
  for (const auto& n : names) out.push_back({n, scenario(n)->frames.size()});
  return out;
}

std::shared_ptr<const ScenarioLog> RatingService::scenario(const std::string& name) const {
  std::lock_guard lock(mu_);
  if (auto it = logs_.find(name); it != logs_.end()) return it->second;
  const auto path = scenario_dir_ / (name + ".jsonl");
  if (!valid_rater_id(name) || !fs::exists(path)) {
    throw ServiceError(404, "unknown scenario '" + name + "'");
  }
  auto log = std::make_shared<const ScenarioLog>(load_scenario(path));
  logs_[name] = log;
  return log;
}

std::shared_ptr<RatingService::Entry> RatingService::entry(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  return it->second;
}

FramePage RatingService::frames(const std::string& name, std::size_t from,
                                std::size_t count) const {
  const auto log = scenario(name);
  FramePage page;
  page.scenario = name;
  page.total = log->frames.size();
  page.from = from;
  if (from > page.total) {
    throw ServiceError(422, "from " + std::to_string(from) + " is past the last frame");
  }
  const std::size_t end = std::min(page.total, from + count);
  page.frames.assign(log->frames.begin() + static_cast<long>(from),
                     log->frames.begin() + static_cast<long>(end));
  return page;
}

SessionState RatingService::create_session(const std::string& rater_id,
                                           const std::string& scenario_name) {
  if (!valid_rater_id(rater_id)) {
    throw ServiceError(422, "rater_id must be 1-64 characters of [A-Za-z0-9_.-]");
  }
  scenario(scenario_name);  // 404 when unknown
  auto e = std::make_shared<Entry>();
  e->state.scenario_name = scenario_name;
  e->state.rater_id = rater_id;
  std::lock_guard lock(mu_);
  e->state.session_id = "s" + std::to_string(next_id_++);
  sessions_[e->state.session_id] = e;
  return e->state;
}

SessionState RatingService::session(const std::string& id) const {
  auto e = entry(id);
  std::lock_guard lock(e->mu);
  return e->state;
}

SessionState RatingService::add_rating(const std::string& id, long long frame, long long level) {
  auto e = entry(id);
  const auto log = scenario(session(id).scenario_name);
  std::lock_guard lock(e->mu);
  auto& s = e->state;
  if (s.status != SessionStatus::Active) {
    throw ServiceError(409, "session " + id + " is " + std::string(to_string(s.status)));
  }
  if (level < 0 || level >= kNumLevels) {
    throw ServiceError(422, "level " + std::to_string(level) + " is outside 0..4");
  }
  if (frame < 0 || static_cast<std::size_t>(frame) >= log->frames.size()) {
    throw ServiceError(422, "frame " + std::to_string(frame) + " is outside 0.." +
                                std::to_string(log->frames.size() - 1));
  }
  s.ratings.push_back({static_cast<std::size_t>(frame), static_cast<int>(level)});
  s.cursor = std::max(s.cursor, static_cast<std::size_t>(frame));
  return s;
}

fs::path RatingService::complete(const std::string& id) {
  auto e = entry(id);
  std::lock_guard lock(e->mu);
  auto& s = e->state;
  if (s.status != SessionStatus::Active) {
    throw ServiceError(409, "session " + id + " is " + std::string(to_string(s.status)));
  }
  if (s.ratings.empty()) throw ServiceError(422, "session " + id + " has no ratings");

  // A trace holds one rating per frame; the last keystroke for a frame wins
  // and keeps its position in entry order.
  RatingTrace trace;
  trace.rater_id = s.rater_id;
  trace.scenario_name = s.scenario_name;
  trace.source = RatingSource::Human;
  for (std::size_t i = 0; i < s.ratings.size(); ++i) {
    const auto later = std::find_if(s.ratings.begin() + static_cast<long>(i) + 1, s.ratings.end(),
                                    [&](const Rating& r) { return r.frame == s.ratings[i].frame; });
    if (later == s.ratings.end()) trace.ratings.push_back(s.ratings[i]);
  }

  std::error_code ec;
  fs::create_directories(ratings_dir_, ec);
  const auto path = ratings_dir_ / (s.scenario_name + "__" + s.rater_id + "__" + id + ".jsonl");
  save_rating_trace(trace, path);
  s.status = SessionStatus::Complete;
  return path;
}

SessionState RatingService::abandon(const std::string& id) {
  auto e = entry(id);
  std::lock_guard lock(e->mu);
  auto& s = e->state;
  if (s.status != SessionStatus::Active) {
    throw ServiceError(409, "session " + id + " is " + std::string(to_string(s.status)));
  }
  s.status = SessionStatus::Abandoned;
  return s;
}

namespace {

json session_json(const SessionState& s) {
  return {{"session_id", s.session_id},
          {"scenario", s.scenario_name},
          {"rater_id", s.rater_id},
          {"cursor", s.cursor},
          {"ratings", s.ratings.size()},
          {"status", std::string(to_string(s.status))}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ServiceError(422, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ServiceError(422, std::string("field '") + key + "' has the wrong type");
  }
}

long long integer_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ServiceError(422, std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) {
    throw ServiceError(422, std::string("field '") + key + "' must be an integer");
  }
  return it->get<long long>();
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = req.get_param_value(key);
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ServiceError(422, std::string("query parameter '") + key + "' must be a non-negative integer");
  }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      reply(res, e.status(), {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

void RatingService::mount(httplib::Server& server) {
  // Exclusive bind: no SO_REUSEPORT.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  server.Get("/scenarios", guarded([this](const auto&, auto& res) {
    json list = json::array();
    for (const auto& s : scenarios()) list.push_back({{"name", s.name}, {"frames", s.frames}});
    reply(res, 200, {{"scenarios", list}});
  }));

  server.Get("/scenarios/:name/frames", guarded([this](const httplib::Request& req, auto& res) {
    const auto from = query_size(req, "from", 0);
    const auto count = std::min<std::size_t>(query_size(req, "count", 100), 1000);
    const auto page = frames(req.path_params.at("name"), from, count);
    std::string body = "{\"scenario\":" + json(page.scenario).dump() +
                       ",\"from\":" + std::to_string(page.from) +
                       ",\"count\":" + std::to_string(page.frames.size()) +
                       ",\"total\":" + std::to_string(page.total) + ",\"frames\":[";
    for (std::size_t i = 0; i < page.frames.size(); ++i) {
      if (i) body += ',';
      body += format_frame(page.frames[i]);
    }
    body += "]}";
    res.status = 200;
    res.set_content(body, "application/json");
  }));

  server.Post("/sessions", guarded([this](const httplib::Request& req, auto& res) {
    const auto body = parse_body(req);
    const auto s = create_session(field<std::string>(body, "rater_id"),
                                  field<std::string>(body, "scenario"));
    reply(res, 201, session_json(s));
  }));

  server.Get("/sessions/:id", guarded([this](const httplib::Request& req, auto& res) {
    reply(res, 200, session_json(session(req.path_params.at("id"))));
  }));

  server.Post("/sessions/:id/ratings", guarded([this](const httplib::Request& req, auto& res) {
    const auto& id = req.path_params.at("id");
    entry(id);  // 404 before body validation
    const auto body = parse_body(req);
    const auto s = add_rating(id, integer_field(body, "frame"), integer_field(body, "level"));
    reply(res, 200, session_json(s));
  }));

  server.Post("/sessions/:id/complete", guarded([this](const httplib::Request& req, auto& res) {
    const auto& id = req.path_params.at("id");
    const auto path = complete(id);
    auto j = session_json(session(id));
    j["trace"] = path.filename().string();
    reply(res, 200, j);
  }));

  server.Post("/sessions/:id/abandon", guarded([this](const httplib::Request& req, auto& res) {
    reply(res, 200, session_json(abandon(req.path_params.at("id"))));
  }));
}

void serve(RatingService& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  if (!server.bind_to_port(host, port)) {
    throw BindError("cannot bind " + host + ":" + std::to_string(port));
  }
  server.listen_after_bind();
}

}  // namespace prisk
