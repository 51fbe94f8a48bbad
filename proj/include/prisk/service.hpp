#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "prisk/common.hpp"
#include "prisk/scenario.hpp"

namespace httplib {
class Server;
}

namespace prisk {

enum class SessionStatus { Active, Complete, Abandoned };

std::string_view to_string(SessionStatus s);

struct SessionState {
  std::string session_id;
  std::string scenario_name;
  std::string rater_id;
  std::size_t cursor = 0;  // highest rated frame
  std::vector<Rating> ratings;
  SessionStatus status = SessionStatus::Active;
};

// Carries the HTTP status the error maps to.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ScenarioInfo {
  std::string name;
  std::size_t frames = 0;
};

struct FramePage {
  std::string scenario;
  std::size_t from = 0;
  std::size_t total = 0;
  std::vector<Frame> frames;
};

// Session bookkeeping for the rating experiment. Scenario files are only
// read; completed sessions are written to `ratings_dir` as rating traces.
class RatingService {
 public:
  RatingService(std::filesystem::path scenario_dir, std::filesystem::path ratings_dir);

  std::vector<ScenarioInfo> scenarios() const;
  FramePage frames(const std::string& scenario, std::size_t from, std::size_t count) const;

  SessionState create_session(const std::string& rater_id, const std::string& scenario);
  SessionState session(const std::string& id) const;
  SessionState add_rating(const std::string& id, long long frame, long long level);
  // Returns the path of the persisted trace.
  std::filesystem::path complete(const std::string& id);
  SessionState abandon(const std::string& id);

  // Registers the HTTP routes on `server`; the service must outlive it.
  void mount(httplib::Server& server);

 private:
  struct Entry {
    std::mutex mu;
    SessionState state;
  };

  std::shared_ptr<const ScenarioLog> scenario(const std::string& name) const;
  std::shared_ptr<Entry> entry(const std::string& id) const;

  std::filesystem::path scenario_dir_;
  std::filesystem::path ratings_dir_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const ScenarioLog>> logs_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
};

// Blocks until the server stops. Throws BindError when the address is taken.
void serve(RatingService& service, const std::string& host, int port);

}  // namespace prisk
