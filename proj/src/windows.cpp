#include <cmath>

#include "prisk/common.hpp"
#include "prisk/network.hpp"

namespace prisk {

Tensor ego_channels(const ScenarioLog& log, EgoChannels mode) {
  const std::size_t n = log.frames.size();
  Tensor out(n, ego_channel_count(mode));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = log.frames[k].ego;
    if (mode == EgoChannels::Raw) {
      const double row[] = {e.pos.x, e.pos.y, e.vel.x, e.vel.y, e.acc.x,
                            e.acc.y, e.yaw,   e.pitch, e.roll};
      std::copy(std::begin(row), std::end(row), &out.data[k * 9]);
      continue;
    }
    const double c = std::cos(e.yaw), s = std::sin(e.yaw);
    double yaw_rate = 0.0;
    if (k > 0) {
      const auto& prev = log.frames[k - 1];
      yaw_rate = wrap_angle(e.yaw - prev.ego.yaw) / (log.frames[k].t - prev.t);
    }
    const double row[] = {c * e.vel.x + s * e.vel.y,  -s * e.vel.x + c * e.vel.y,
                          c * e.acc.x + s * e.acc.y,  -s * e.acc.x + c * e.acc.y,
                          yaw_rate,                    e.vel.norm()};
    std::copy(std::begin(row), std::end(row), &out.data[k * 6]);
  }
  return out;
}

std::vector<WindowSample> make_windows(const Tensor& ego, std::span<const RiskFeatures> env,
                                       std::span<const std::optional<int>> labels,
                                       std::size_t T) {
  const std::size_t n = ego.rows();
  if (env.size() != n || labels.size() != n) {
    throw MismatchError("window inputs disagree on frame count (" + std::to_string(n) + ", " +
                        std::to_string(env.size()) + ", " + std::to_string(labels.size()) + ")");
  }
  if (T == 0) throw ConfigError("window length must be at least 1");
  std::vector<WindowSample> out;
  const std::size_t fe = ego.cols();
  for (std::size_t e = T - 1; e < n; ++e) {
    if (!labels[e]) continue;
    WindowSample w{Tensor(T, fe), Tensor(T, kEnvChannels), *labels[e]};
    const std::size_t first = e + 1 - T;
    std::copy_n(&ego.data[first * fe], T * fe, w.ego.data.begin());
    for (std::size_t t = 0; t < T; ++t) {
      const auto a = env[first + t].as_array();
      std::copy(a.begin(), a.end(), &w.env.data[t * kEnvChannels]);
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace prisk
