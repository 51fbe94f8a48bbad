#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prisk/riskfield.hpp"
#include "prisk/scenario.hpp"

namespace prisk {

class KeyValueConfig;

// Row-major dense array. Matrices are {rows, cols}, vectors {n}.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t n);
  Tensor(std::size_t rows, std::size_t cols);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class ModelKind { Lstmca, Lstm, Fcnn };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);  // throws ConfigError

enum class EgoChannels {
  Reduced,  // vx, vy, ax, ay (body frame), yaw_rate, speed
  Raw,      // x, y, vx, vy, ax, ay, yaw, pitch, roll
};

inline constexpr std::size_t kEnvChannels = 6;
std::size_t ego_channel_count(EgoChannels mode);

struct WindowSample {
  Tensor ego;  // T x F_ego
  Tensor env;  // T x 6, RiskFeatures::as_array order
  int label = 0;
};

struct TrainConfig {
  ModelKind kind = ModelKind::Lstmca;
  EgoChannels ego_channels = EgoChannels::Reduced;
  int T = 20;
  int H = 32;
  int d_a = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 64;
  int epochs = 50;
  std::uint64_t seed = 0;
  std::optional<std::array<double, kNumLevels>> class_weights;  // default: inverse frequency
  double clip_norm = 5.0;       // global gradient norm; 0 disables
  bool query_from_env = false;  // swap the attention query/key-value branches
  int threads = 1;              // 1 = serial reference path

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg);  // throws ConfigError

// Reads keys with an optional "train." prefix; unset keys keep defaults.
TrainConfig load_train_config(const KeyValueConfig& kv);

// Per-channel affine standardization applied before the network. Risk
// channels of the environment input are log1p-compressed first.
struct InputScaler {
  std::vector<double> ego_mean, ego_std;
  std::vector<double> env_mean, env_std;

  friend bool operator==(const InputScaler&, const InputScaler&) = default;
};

InputScaler identity_scaler(std::size_t f_ego);
InputScaler fit_scaler(std::span<const WindowSample> samples);

struct Model {
  ModelKind kind = ModelKind::Lstmca;
  std::size_t T = 0;
  std::size_t f_ego = 0;
  std::size_t f_env = kEnvChannels;
  std::size_t H = 0;
  std::size_t d_a = 0;
  bool query_from_env = false;
  InputScaler scaler;
  std::vector<Tensor> params;  // layout fixed by param_names(kind)

  friend bool operator==(const Model&, const Model&) = default;
};

std::vector<std::string> param_names(ModelKind kind);

// Uniform(+-1/sqrt(fan_in)) weights, zero biases, LSTM forget-gate bias 1.
Model init_model(const TrainConfig& cfg, std::size_t f_ego, std::uint64_t seed);
Model zero_model(const TrainConfig& cfg, std::size_t f_ego);

// Standard LSTM from a zero state; returns every step's hidden state.
// Gate rows of Wx (4H x F), Wh (4H x H) and b (4H) are stacked i, f, g, o.
Tensor lstm_forward(const Tensor& seq, const Tensor& Wx, const Tensor& Wh, const Tensor& b);

struct AttentionOutput {
  Tensor context;  // T x d_a
  Tensor weights;  // T x T, rows sum to 1
};

AttentionOutput cross_attention(const Tensor& q_seq, const Tensor& kv_seq, const Tensor& Wq,
                                const Tensor& Wk, const Tensor& Wv);

struct Output {
  std::array<double, kNumLevels> logits{};
  std::array<double, kNumLevels> probs{};
};

Output forward(const Model& model, const WindowSample& sample);

struct LossGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;  // same layout as Model::params
};

// Mean over the batch of class-weighted cross-entropy.
LossGrads loss_and_grads(const Model& model, std::span<const WindowSample> batch,
                         const std::array<double, kNumLevels>& class_weights);

// Batch split into one contiguous chunk per thread, partial gradients summed
// in thread order. Deterministic for a fixed thread count; equals the serial
// result up to summation order.
LossGrads loss_and_grads_parallel(const Model& model, std::span<const WindowSample> batch,
                                  const std::array<double, kNumLevels>& class_weights,
                                  int threads);

std::array<double, kNumLevels> inverse_frequency_weights(std::span<const WindowSample> samples);

struct Prediction {
  int level = 0;  // argmax, ties to the lower level
  std::array<double, kNumLevels> probs{};
};

std::vector<Prediction> predict(const Model& model, std::span<const WindowSample> windows);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_auc;  // absent when the validation split is degenerate
};

struct DataSplit {
  std::vector<std::size_t> train, val, test;
};

// Stratified by label: per class, shuffled, 80/10/10 with rounding.
DataSplit stratified_split(std::span<const WindowSample> samples, std::uint64_t seed);

struct TrainResult {
  Model model;  // parameters with the best validation AUC
  std::vector<EpochRecord> history;
  DataSplit split;
};

// Adam with bias correction. Throws DivergenceError on a non-finite loss.
TrainResult train(std::span<const WindowSample> dataset, const TrainConfig& cfg);

// Flattened fully connected model trained through the same loop.
TrainResult fcnn_baseline(std::span<const WindowSample> dataset, TrainConfig cfg);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const TrainConfig& cfg,
                     const std::filesystem::path& path);

struct Checkpoint {
  Model model;
  TrainConfig cfg;
};

// Throws IoError when unreadable, FormatError when malformed or versioned
// differently.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_history(std::ostream& out, std::span<const EpochRecord> history);

// Per-frame ego input channels, frames x ego_channel_count(mode).
Tensor ego_channels(const ScenarioLog& log, EgoChannels mode);

// Stride-1 windows of T frames ending at every labeled frame e >= T - 1;
// the label is the rating at e.
std::vector<WindowSample> make_windows(const Tensor& ego, std::span<const RiskFeatures> env,
                                       std::span<const std::optional<int>> labels,
                                       std::size_t T);

}  // namespace prisk
