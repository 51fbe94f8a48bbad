#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prisk/common.hpp"
#include "prisk/network.hpp"

namespace prisk {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "prisk-checkpoint";

const char* ego_mode_name(EgoChannels m) { return m == EgoChannels::Raw ? "raw" : "reduced"; }

json cfg_to_json(const TrainConfig& c) {
  json j = {{"kind", std::string(to_string(c.kind))},
            {"ego_channels", ego_mode_name(c.ego_channels)},
            {"T", c.T},
            {"H", c.H},
            {"d_a", c.d_a},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"clip_norm", c.clip_norm},
            {"query_from_env", c.query_from_env},
            {"threads", c.threads}};
  j["class_weights"] = c.class_weights ? json(*c.class_weights) : json();
  return j;
}

TrainConfig cfg_from_json(const json& j) {
  TrainConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  const auto ego = j.at("ego_channels").get<std::string>();
  if (ego != "raw" && ego != "reduced") throw FormatError("unknown ego channel mode " + ego);
  c.ego_channels = ego == "raw" ? EgoChannels::Raw : EgoChannels::Reduced;
  c.T = j.at("T").get<int>();
  c.H = j.at("H").get<int>();
  c.d_a = j.at("d_a").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.batch = j.at("batch").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.query_from_env = j.at("query_from_env").get<bool>();
  c.threads = j.at("threads").get<int>();
  if (!j.at("class_weights").is_null()) {
    c.class_weights = j.at("class_weights").get<std::array<double, kNumLevels>>();
  }
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["cfg"] = cfg_to_json(cfg);
  j["model"] = {{"kind", std::string(to_string(model.kind))},
                {"T", model.T},
                {"f_ego", model.f_ego},
                {"f_env", model.f_env},
                {"H", model.H},
                {"d_a", model.d_a},
                {"query_from_env", model.query_from_env},
                {"scaler",
                 {{"ego_mean", model.scaler.ego_mean},
                  {"ego_std", model.scaler.ego_std},
                  {"env_mean", model.scaler.env_mean},
                  {"env_std", model.scaler.env_std}}}};
  const auto names = param_names(model.kind);
  json tensors = json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    tensors.push_back({{"name", names[i]},
                       {"shape", model.params[i].shape},
                       {"data", model.params[i].data}});
  }
  j["tensors"] = std::move(tensors);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();

  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " is malformed or truncated: " + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != kFormat) {
      throw FormatError(path.string() + " is not a checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                        " in " + path.string() + " (supported: " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.cfg = cfg_from_json(j.at("cfg"));
    const auto& m = j.at("model");
    Model& model = ck.model;
    model.kind = parse_model_kind(m.at("kind").get<std::string>());
    model.T = m.at("T").get<std::size_t>();
    model.f_ego = m.at("f_ego").get<std::size_t>();
    model.f_env = m.at("f_env").get<std::size_t>();
    model.H = m.at("H").get<std::size_t>();
    model.d_a = m.at("d_a").get<std::size_t>();
    model.query_from_env = m.at("query_from_env").get<bool>();
    const auto& s = m.at("scaler");
    model.scaler.ego_mean = s.at("ego_mean").get<std::vector<double>>();
    model.scaler.ego_std = s.at("ego_std").get<std::vector<double>>();
    model.scaler.env_mean = s.at("env_mean").get<std::vector<double>>();
    model.scaler.env_std = s.at("env_std").get<std::vector<double>>();
    if (model.scaler.ego_mean.size() != model.f_ego || model.scaler.ego_std.size() != model.f_ego ||
        model.scaler.env_mean.size() != model.f_env || model.scaler.env_std.size() != model.f_env) {
      throw FormatError("checkpoint scaler width does not match the model");
    }

    const auto names = param_names(model.kind);
    const auto& tensors = j.at("tensors");
    if (tensors.size() != names.size()) {
      throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                        std::to_string(names.size()));
    }
    const Model reference = zero_model(ck.cfg, model.f_ego);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != names[i]) {
        throw FormatError("tensor " + std::to_string(i) + " should be " + names[i]);
      }
      Tensor x;
      x.shape = t.at("shape").get<std::vector<std::size_t>>();
      x.data = t.at("data").get<std::vector<double>>();
      if (x.shape != reference.params[i].shape || x.data.size() != reference.params[i].size()) {
        throw FormatError("tensor " + names[i] + " has the wrong shape");
      }
      model.params.push_back(std::move(x));
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace prisk
