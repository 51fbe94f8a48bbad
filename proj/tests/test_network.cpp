#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "prisk/network.hpp"

using namespace prisk;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

const std::array<double, 5> kEqual = {1, 1, 1, 1, 1};

TrainConfig small_cfg(ModelKind kind, int T, int H) {
  TrainConfig c;
  c.kind = kind;
  c.T = T;
  c.H = H;
  c.d_a = H;
  return c;
}

// Five levels by thresholds on the final-step front risk.
std::vector<WindowSample> separable_task(std::uint64_t seed, std::size_t n, std::size_t T) {
  Rng rng(seed);
  std::vector<WindowSample> out;
  const std::array<double, 4> cuts = {1.0, 3.0, 8.0, 20.0};
  for (std::size_t i = 0; i < n; ++i) {
    auto s = oracle::random_window(rng, T, 6, 0);
    const double r = std::exp(rng.uniform(-1.5, 3.7)) - 0.2;
    s.env(T - 1, 0) = std::max(r, 0.0);
    int level = 0;
    for (double c : cuts) level += s.env(T - 1, 0) >= c ? 1 : 0;
    s.label = level;
    out.push_back(std::move(s));
  }
  return out;
}

double auc_on(const Model& m, std::span<const WindowSample> data, const std::vector<std::size_t>& idx) {
  std::vector<WindowSample> subset;
  for (auto i : idx) subset.push_back(data[i]);
  std::vector<std::array<double, 5>> probs;
  std::vector<int> labels;
  for (const auto& p : predict(m, subset)) probs.push_back(p.probs);
  for (const auto& s : subset) labels.push_back(s.label);
  return *oracle::pairwise_macro_auc(probs, labels);
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("lstm with zero parameters stays at zero") {
  const Tensor Wx(8, 3), Wh(8, 2), b(8);
  Tensor seq(4, 3);
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = 0.3 * static_cast<double>(i) - 1.0;
  const auto h = lstm_forward(seq, Wx, Wh, b);
  CHECK(h.rows() == 4);
  CHECK(h.cols() == 2);
  for (double v : h.data) CHECK(v == 0.0);
}

TEST_CASE("lstm single step by hand") {
  Tensor Wx(8, 1), Wh(8, 2), b(8);
  const double wi[2] = {0.5, -0.3}, wf[2] = {0.7, 0.1}, wg[2] = {0.2, 0.4}, wo[2] = {1.0, -1.0};
  for (int j = 0; j < 2; ++j) {
    Wx(j, 0) = wi[j];
    Wx(2 + j, 0) = wf[j];
    Wx(4 + j, 0) = wg[j];
    Wx(6 + j, 0) = wo[j];
  }
  b[0] = 0.1;
  for (auto& v : Wh.data) v = 9.0;  // unused at the first step
  Tensor x(1, 1);
  x(0, 0) = 2.0;
  const auto h = lstm_forward(x, Wx, Wh, b);
  for (int j = 0; j < 2; ++j) {
    const double i = sigmoid(wi[j] * 2.0 + (j == 0 ? 0.1 : 0.0));
    const double g = std::tanh(wg[j] * 2.0);
    const double o = sigmoid(wo[j] * 2.0);
    CHECK(h(0, j) == doctest::Approx(o * std::tanh(i * g)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(lstm_forward(Tensor(2, 3), Wx, Wh, b), ShapeError);
}

TEST_CASE("lstm is causal") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor Wx(12, 4), Wh(12, 3), b(12), seq(9, 4);
    for (auto* t : {&Wx, &Wh, &b, &seq}) {
      for (auto& v : t->data) v = rng.uniform(-1, 1);
    }
    const auto full = lstm_forward(seq, Wx, Wh, b);
    const std::size_t t = 1 + rng.index(9);
    Tensor prefix(t, 4);
    std::copy_n(seq.data.begin(), t * 4, prefix.data.begin());
    const auto part = lstm_forward(prefix, Wx, Wh, b);
    for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i] == full[i]);

    Tensor padded(18, 4);
    std::copy(seq.data.begin(), seq.data.end(), padded.data.begin());
    const auto longer = lstm_forward(padded, Wx, Wh, b);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(longer[i] == full[i]);
  }
}

TEST_CASE("attention by hand") {
  Tensor q(2, 2), kv(2, 2), Wq(2, 1), Wk(2, 1), Wv(2, 1);
  q(0, 0) = 1;
  q(1, 1) = 1;
  kv(0, 0) = 1;
  kv(0, 1) = 1;
  kv(1, 0) = 2;
  Wq[0] = 1;
  Wq[1] = 2;
  Wk[0] = 1;
  Wk[1] = -1;
  Wv[0] = 3;
  Wv[1] = 1;
  const auto a = cross_attention(q, kv, Wq, Wk, Wv);
  const double e2 = std::exp(2.0), e4 = std::exp(4.0);
  CHECK(a.context(0, 0) == doctest::Approx((4 + 6 * e2) / (1 + e2)).epsilon(1e-14));
  CHECK(a.context(1, 0) == doctest::Approx((4 + 6 * e4) / (1 + e4)).epsilon(1e-14));
  CHECK(a.weights(0, 1) == doctest::Approx(e2 / (1 + e2)));
}

TEST_CASE("attention properties") {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t T = 1 + rng.index(7), H = 3, d = 2;
    Tensor q(T, H), kv(T, H), Wq(H, d), Wk(H, d), Wv(H, d);
    for (auto* t : {&q, &kv, &Wq, &Wk, &Wv}) {
      for (auto& v : t->data) v = rng.uniform(-2, 2);
    }
    const auto a = cross_attention(q, kv, Wq, Wk, Wv);
    for (std::size_t r = 0; r < T; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < T; ++c) sum += a.weights(r, c);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }

    // Permuting key/value rows leaves every context row unchanged.
    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = T; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    Tensor kvp(T, H);
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t c = 0; c < H; ++c) kvp(r, c) = kv(perm[r], c);
    }
    const auto b = cross_attention(q, kvp, Wq, Wk, Wv);
    for (std::size_t i = 0; i < a.context.size(); ++i) {
      CHECK(b.context[i] == doctest::Approx(a.context[i]).epsilon(1e-12));
    }

    // Identical key/value rows give the value projection of that row.
    Tensor same(T, H);
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t c = 0; c < H; ++c) same(r, c) = kv(0, c);
    }
    const auto s = cross_attention(q, same, Wq, Wk, Wv);
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        double v = 0.0;
        for (std::size_t c = 0; c < H; ++c) v += kv(0, c) * Wv(c, j);
        CHECK(s.context(r, j) == doctest::Approx(v).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(cross_attention(Tensor(2, 3), Tensor(3, 3), Tensor(3, 2), Tensor(3, 2), Tensor(3, 2)),
                  ShapeError);
}

TEST_CASE("zero model predicts uniformly with loss ln 5") {
  Rng rng(1);
  for (auto kind : {ModelKind::Lstmca, ModelKind::Lstm, ModelKind::Fcnn}) {
    const auto m = zero_model(small_cfg(kind, 4, 3), 6);
    std::vector<WindowSample> batch;
    for (int i = 0; i < 7; ++i) batch.push_back(oracle::random_window(rng, 4, 6, i % 5));
    for (const auto& s : batch) {
      for (double p : forward(m, s).probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
    }
    CHECK(loss_and_grads(m, batch, kEqual).loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
}

TEST_CASE("forward probabilities and bias shift") {
  Rng rng(2);
  for (auto kind : {ModelKind::Lstmca, ModelKind::Lstm, ModelKind::Fcnn}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto m = oracle::random_model(kind, 5, 4, 4, false, trial);
      const auto s = oracle::random_window(rng, 5, 6, 0);
      const auto out = forward(m, s);
      double sum = 0.0;
      for (double p : out.probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      for (auto& v : m.params.back().data) v += 3.25;
      const auto shifted = forward(m, s);
      for (int k = 0; k < 5; ++k) CHECK(shifted.probs[k] == doctest::Approx(out.probs[k]).epsilon(1e-12));
    }
  }
  const auto m = zero_model(small_cfg(ModelKind::Lstmca, 5, 4), 6);
  WindowSample wrong{Tensor(5, 6), Tensor(5, 3), 0};
  CHECK_THROWS_AS(forward(m, wrong), ShapeError);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(3);
  const std::array<double, 5> w = {1.0, 2.0, 0.5, 1.0, 1.5};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<WindowSample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(oracle::random_window(rng, 5, 6, static_cast<int>(rng.index(5))));
    for (auto kind : {ModelKind::Lstmca, ModelKind::Lstm, ModelKind::Fcnn}) {
      const auto m = oracle::random_model(kind, 5, 4, 4, seed % 2 == 1, seed);
      CHECK(oracle::gradient_check(m, batch, w) < 1e-4);
    }
  }
}

TEST_CASE("duplicating the batch keeps loss and gradients") {
  Rng rng(4);
  const auto m = oracle::random_model(ModelKind::Lstmca, 5, 4, 4, false, 9);
  std::vector<WindowSample> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(oracle::random_window(rng, 5, 6, i % 5));
  auto twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());
  const auto w = inverse_frequency_weights(batch);
  const auto a = loss_and_grads(m, batch, w);
  const auto b = loss_and_grads(m, twice, w);
  CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-13));
  for (std::size_t t = 0; t < a.grads.size(); ++t) {
    for (std::size_t i = 0; i < a.grads[t].size(); ++i) {
      CHECK(std::abs(b.grads[t][i] - a.grads[t][i]) <= 1e-13 * (1 + std::abs(a.grads[t][i])));
    }
  }
}

TEST_CASE("parallel gradients agree with the serial reference") {
  Rng rng(5);
  const auto m = oracle::random_model(ModelKind::Lstmca, 6, 5, 4, false, 2);
  std::vector<WindowSample> batch;
  for (int i = 0; i < 37; ++i) batch.push_back(oracle::random_window(rng, 6, 6, i % 5));
  const auto serial = loss_and_grads(m, batch, kEqual);
  const auto one = loss_and_grads_parallel(m, batch, kEqual, 1);
  CHECK(one.loss == serial.loss);
  CHECK(one.grads == serial.grads);
  for (int threads : {2, 3, 8}) {
    const auto par = loss_and_grads_parallel(m, batch, kEqual, threads);
    CHECK(par.loss == doctest::Approx(serial.loss).epsilon(1e-13));
    for (std::size_t t = 0; t < par.grads.size(); ++t) {
      for (std::size_t i = 0; i < par.grads[t].size(); ++i) {
        CHECK(std::abs(par.grads[t][i] - serial.grads[t][i]) <= 1e-12);
      }
    }
    CHECK(loss_and_grads_parallel(m, batch, kEqual, threads).grads == par.grads);
  }
}

TEST_CASE("inverse frequency weights") {
  std::vector<WindowSample> s(6);
  s[0].label = s[1].label = s[2].label = 0;
  s[3].label = s[4].label = 1;
  s[5].label = 4;
  const auto w = inverse_frequency_weights(s);
  CHECK(w[0] == doctest::Approx(6.0 / 9));
  CHECK(w[1] == doctest::Approx(1.0));
  CHECK(w[4] == doctest::Approx(2.0));
}

TEST_CASE("predict tie rule and consistency") {
  auto m = zero_model(small_cfg(ModelKind::Lstmca, 3, 2), 6);
  auto& b2 = m.params.back();
  const std::array<double, 5> p = {0.1, 0.5, 0.2, 0.1, 0.1};
  for (int k = 0; k < 5; ++k) b2[k] = std::log(p[k]);
  Rng rng(7);
  const std::vector<WindowSample> ws = {oracle::random_window(rng, 3, 6, 0),
                                        oracle::random_window(rng, 3, 6, 0)};
  const auto pred = predict(m, ws);
  CHECK(pred[0].level == 1);
  for (int k = 0; k < 5; ++k) CHECK(pred[0].probs[k] == doctest::Approx(p[k]));

  b2.data = {0, 0, 1, 1, 0};
  CHECK(predict(m, ws)[1].level == 2);

  const auto r = oracle::random_model(ModelKind::Lstmca, 3, 2, 2, false, 4);
  const auto pr = predict(r, ws);
  for (std::size_t i = 0; i < ws.size(); ++i) CHECK(pr[i].probs == forward(r, ws[i]).probs);
}

TEST_CASE("stratified split") {
  const auto data = separable_task(1, 500, 3);
  const auto s = stratified_split(data, 4);
  CHECK(s.train.size() + s.val.size() + s.test.size() == data.size());
  std::vector<int> seen(data.size(), 0);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (auto i : *part) ++seen[i];
  }
  for (int c : seen) CHECK(c == 1);
  CHECK(s.train.size() == doctest::Approx(400).epsilon(0.02));
  CHECK(stratified_split(data, 4).train == s.train);
}

TEST_CASE("separable task is learned") {
  const auto data = separable_task(11, 1000, 5);
  auto cfg = small_cfg(ModelKind::Lstmca, 5, 8);
  cfg.epochs = 30;
  cfg.lr = 0.01;
  cfg.batch = 32;
  cfg.seed = 3;
  const auto r = train(data, cfg);
  REQUIRE(r.history.size() == 30);
  double best = 0.0;
  for (const auto& e : r.history) best = std::max(best, *e.val_auc);
  CHECK(best >= 0.95);
  CHECK(auc_on(r.model, data, r.split.val) == doctest::Approx(best).epsilon(1e-12));

  const auto f = fcnn_baseline(data, cfg);
  CHECK(f.model.kind == ModelKind::Fcnn);
  CHECK(auc_on(f.model, data, f.split.val) >= 0.90);
}

TEST_CASE("training with zero learning rate leaves parameters unchanged") {
  const auto data = separable_task(2, 120, 4);
  auto cfg = small_cfg(ModelKind::Lstmca, 4, 4);
  cfg.lr = 0.0;
  cfg.epochs = 3;
  cfg.seed = 8;
  const auto r = train(data, cfg);
  const auto init = init_model(cfg, 6, mix_seed(cfg.seed, 2));
  CHECK(r.model.params == init.params);
  for (const auto& e : r.history) {
    CHECK(e.train_loss == doctest::Approx(r.history[0].train_loss).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic") {
  const auto data = separable_task(3, 200, 4);
  for (auto kind : {ModelKind::Lstmca, ModelKind::Lstm, ModelKind::Fcnn}) {
    auto cfg = small_cfg(kind, 4, 4);
    cfg.epochs = 3;
    cfg.seed = 5;
    const auto a = train(data, cfg);
    const auto b = train(data, cfg);
    CHECK(a.model == b.model);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_auc == b.history[i].val_auc);
    }
    cfg.threads = 2;
    CHECK(train(data, cfg).model == train(data, cfg).model);
  }
}

TEST_CASE("training config") {
  TrainConfig c;
  c.T = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.lr = -1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.H = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_THROWS_AS(parse_model_kind("svm"), ConfigError);
  CHECK(parse_model_kind("lstmca") == ModelKind::Lstmca);

  auto bad = separable_task(4, 50, 4);
  auto cfg = small_cfg(ModelKind::Lstmca, 4, 4);
  cfg.epochs = 2;
  cfg.lr = 1e300;
  cfg.clip_norm = 0;
  for (auto& s : bad) s.env(0, 0) = 1e300;
  CHECK_THROWS_AS(train(bad, cfg), DivergenceError);
}

TEST_CASE("checkpoints round-trip exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "prisk_test_ckpt";
  std::filesystem::create_directories(dir);
  Rng rng(6);
  const auto data = separable_task(5, 100, 5);
  for (auto kind : {ModelKind::Lstmca, ModelKind::Lstm, ModelKind::Fcnn}) {
    auto cfg = small_cfg(kind, 5, 4);
    cfg.seed = 77;
    cfg.class_weights = std::array<double, 5>{1, 2, 3, 4, 5};
    auto m = oracle::random_model(kind, 5, 4, 4, false, 1);
    m.scaler = fit_scaler(data);
    const auto path = dir / "m.ckpt";
    save_checkpoint(m, cfg, path);
    const auto back = load_checkpoint(path);
    CHECK(back.model == m);
    CHECK(back.cfg == cfg);
    for (const auto& s : data) CHECK(forward(back.model, s).probs == forward(m, s).probs);
  }

  std::ifstream in(dir / "m.ckpt");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(dir / "cut.ckpt") << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), FormatError);

  const auto at = text.find("\"version\":1");
  REQUIRE(at != std::string::npos);
  std::string v999 = text;
  v999.replace(at, 11, "\"version\":999");
  std::ofstream(dir / "v999.ckpt") << v999;
  try {
    load_checkpoint(dir / "v999.ckpt");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("supported: 1") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("windows") {
  ScenarioParams p;
  p.duration = 2.0;
  p.ego_speed = 10.0;
  p.participants = 0;
  const auto log = generate_synthetic(Template::StraightCruise, p, 1);
  const auto ego = ego_channels(log, EgoChannels::Reduced);
  REQUIRE(ego.rows() == 20);
  REQUIRE(ego.cols() == 6);
  CHECK(ego(5, 0) == doctest::Approx(10.0));
  CHECK(ego(5, 4) == doctest::Approx(0.0));
  CHECK(ego(5, 5) == doctest::Approx(10.0));
  CHECK(ego_channels(log, EgoChannels::Raw).cols() == 9);

  const auto env = extract_features(log, PodarConfig{});
  std::vector<std::optional<int>> labels(20);
  for (std::size_t k = 3; k < 20; ++k) labels[k] = static_cast<int>(k % 5);
  labels[10].reset();
  const auto w = make_windows(ego, env, labels, 5);
  CHECK(w.size() == 15);
  CHECK(w.front().label == 4);
  CHECK(w.front().ego.rows() == 5);
  CHECK(w.front().ego(0, 5) == ego(0, 5));
  CHECK_THROWS_AS(make_windows(ego, std::span(env).first(10), labels, 5), MismatchError);
}

}  // TEST_SUITE
