#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "prisk/common.hpp"
#include "prisk/evaluation.hpp"
#include "prisk/kvconfig.hpp"
#include "prisk/network.hpp"

namespace prisk {

void validate(const TrainConfig& cfg) {
  if (cfg.T < 1) throw ConfigError("train.T must be at least 1");
  if (cfg.H < 1 || cfg.d_a < 1) throw ConfigError("train.H and train.d_a must be at least 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("train.lr must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (cfg.batch < 1) throw ConfigError("train.batch must be at least 1");
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (!(cfg.clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be non-negative");
  if (cfg.threads < 1) throw ConfigError("train.threads must be at least 1");
  if (cfg.class_weights) {
    for (double w : *cfg.class_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("class weights must be >= 0");
    }
  }
}

TrainConfig load_train_config(const KeyValueConfig& kv) {
  auto key = [&](const std::string& k) { return kv.has("train." + k) ? "train." + k : k; };
  TrainConfig c;
  c.kind = parse_model_kind(kv.get_string(key("kind"), std::string(to_string(c.kind))));
  const auto ego = kv.get_string(key("ego_channels"), "reduced");
  if (ego == "reduced") {
    c.ego_channels = EgoChannels::Reduced;
  } else if (ego == "raw") {
    c.ego_channels = EgoChannels::Raw;
  } else {
    throw ConfigError("train.ego_channels must be 'reduced' or 'raw', got '" + ego + "'");
  }
  c.T = static_cast<int>(kv.get_int(key("T"), c.T));
  c.H = static_cast<int>(kv.get_int(key("H"), c.H));
  c.d_a = static_cast<int>(kv.get_int(key("d_a"), c.d_a));
  c.lr = kv.get_double(key("lr"), c.lr);
  c.beta1 = kv.get_double(key("beta1"), c.beta1);
  c.beta2 = kv.get_double(key("beta2"), c.beta2);
  c.eps = kv.get_double(key("eps"), c.eps);
  c.batch = static_cast<int>(kv.get_int(key("batch"), c.batch));
  c.epochs = static_cast<int>(kv.get_int(key("epochs"), c.epochs));
  c.seed = static_cast<std::uint64_t>(kv.get_int(key("seed"), static_cast<long long>(c.seed)));
  c.clip_norm = kv.get_double(key("clip_norm"), c.clip_norm);
  c.threads = static_cast<int>(kv.get_int(key("threads"), c.threads));
  const auto q = kv.get_string(key("query"), "ego");
  if (q != "ego" && q != "env") throw ConfigError("train.query must be 'ego' or 'env'");
  c.query_from_env = q == "env";
  if (kv.has(key("class_weights"))) {
    const auto w = kv.get_doubles(key("class_weights"), {});
    if (w.size() != kNumLevels) throw ConfigError("train.class_weights needs 5 values");
    c.class_weights.emplace();
    std::copy(w.begin(), w.end(), c.class_weights->begin());
  }
  validate(c);
  return c;
}

DataSplit stratified_split(std::span<const WindowSample> samples, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumLevels> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
  }
  Rng rng(seed);
  DataSplit split;
  for (auto& idx : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::lround(0.8 * n));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::lround(0.1 * n)));
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    split.val.insert(split.val.end(), idx.begin() + static_cast<long>(n_train),
                     idx.begin() + static_cast<long>(n_train + n_val));
    split.test.insert(split.test.end(), idx.begin() + static_cast<long>(n_train + n_val),
                      idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

namespace {

std::vector<WindowSample> gather(std::span<const WindowSample> data,
                                 const std::vector<std::size_t>& idx) {
  std::vector<WindowSample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

std::optional<double> validation_auc(const Model& m, std::span<const WindowSample> val) {
  if (val.size() < 2) return std::nullopt;
  const auto preds = predict(m, val);
  std::vector<std::array<double, kNumLevels>> probs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < val.size(); ++i) {
    probs.push_back(preds[i].probs);
    labels.push_back(val[i].label);
  }
  try {
    return macro_ovr_auc(probs, labels).macro;
  } catch (const DataError&) {
    return std::nullopt;
  }
}

struct Adam {
  std::vector<Tensor> m, v;
  long step = 0;

  explicit Adam(const std::vector<Tensor>& params) : m(params), v(params) {
    for (auto& t : m) std::fill(t.data.begin(), t.data.end(), 0.0);
    for (auto& t : v) std::fill(t.data.begin(), t.data.end(), 0.0);
  }

  void update(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              const TrainConfig& cfg) {
    ++step;
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (double x : g.data) sq += x * x;
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& p = params[t].data;
      auto& mt = m[t].data;
      auto& vt = v[t].data;
      const auto& g = grads[t].data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * scale;
        mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * gi;
        vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * gi * gi;
        p[i] -= cfg.lr * (mt[i] / bc1) / (std::sqrt(vt[i] / bc2) + cfg.eps);
      }
    }
  }
};

}  // namespace

TrainResult train(std::span<const WindowSample> dataset, const TrainConfig& cfg) {
  validate(cfg);
  if (dataset.empty()) throw ConfigError("training set is empty");
  const std::size_t f_ego = dataset[0].ego.cols();
  for (const auto& s : dataset) {
    if (s.ego.rows() != static_cast<std::size_t>(cfg.T) || s.env.rows() != s.ego.rows() ||
        s.ego.cols() != f_ego || s.env.cols() != kEnvChannels) {
      throw ShapeError("training windows must all be " + std::to_string(cfg.T) + " x (" +
                       std::to_string(f_ego) + " + " + std::to_string(kEnvChannels) + ")");
    }
    if (s.label < 0 || s.label >= kNumLevels) throw ShapeError("label out of range");
  }

  TrainResult result;
  result.split = stratified_split(dataset, mix_seed(cfg.seed, 1));
  const auto train_set = gather(dataset, result.split.train);
  const auto val_set = gather(dataset, result.split.val);
  if (train_set.empty()) throw ConfigError("training split is empty");

  Model model = init_model(cfg, f_ego, mix_seed(cfg.seed, 2));
  model.scaler = fit_scaler(train_set);
  const auto weights = cfg.class_weights ? *cfg.class_weights : inverse_frequency_weights(train_set);

  Adam adam(model.params);
  Model best = model;
  std::optional<double> best_auc;
  double best_loss = INFINITY;
  std::vector<std::size_t> order(train_set.size());
  std::vector<WindowSample> batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch));
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_set[order[i]]);
      const auto lg = cfg.threads == 1 ? loss_and_grads(model, batch, weights)
                                       : loss_and_grads_parallel(model, batch, weights, cfg.threads);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += lg.loss * static_cast<double>(hi - lo);
      adam.update(model.params, lg.grads, cfg);
    }
    epoch_loss /= static_cast<double>(order.size());

    EpochRecord rec{epoch, epoch_loss, validation_auc(model, val_set)};
    result.history.push_back(rec);
    const bool better = rec.val_auc ? (!best_auc || *rec.val_auc > *best_auc)
                                    : (!best_auc && epoch_loss < best_loss);
    if (better) {
      best = model;
      best_auc = rec.val_auc;
      best_loss = epoch_loss;
    }
  }
  result.model = std::move(best);
  return result;
}

TrainResult fcnn_baseline(std::span<const WindowSample> dataset, TrainConfig cfg) {
  cfg.kind = ModelKind::Fcnn;
  return train(dataset, cfg);
}

void write_history(std::ostream& out, std::span<const EpochRecord> history) {
  for (const auto& r : history) {
    nlohmann::ordered_json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}};
    j["val_auc"] = r.val_auc ? nlohmann::ordered_json(*r.val_auc) : nlohmann::ordered_json();
    out << j.dump() << '\n';
  }
}

}  // namespace prisk
