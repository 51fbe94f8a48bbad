#include "prisk/network.hpp"

#include <algorithm>
#include <cmath>

#include "prisk/common.hpp"
#include "prisk/parallel.hpp"

namespace prisk {

Tensor::Tensor(std::size_t n) : shape{n}, data(n, 0.0) {}
Tensor::Tensor(std::size_t rows, std::size_t cols) : shape{rows, cols}, data(rows * cols, 0.0) {}

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Lstmca: return "LSTMCA";
    case ModelKind::Lstm: return "LSTM";
    case ModelKind::Fcnn: return "FCNN";
  }
  return "LSTMCA";
}

ModelKind parse_model_kind(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "lstmca") return ModelKind::Lstmca;
  if (lower == "lstm") return ModelKind::Lstm;
  if (lower == "fcnn") return ModelKind::Fcnn;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (expected lstmca, lstm or fcnn)");
}

std::size_t ego_channel_count(EgoChannels mode) { return mode == EgoChannels::Raw ? 9 : 6; }

std::vector<std::string> param_names(ModelKind kind) {
  const std::vector<std::string> head = {"head.W1", "head.b1", "head.W2", "head.b2"};
  std::vector<std::string> names;
  switch (kind) {
    case ModelKind::Lstmca:
      names = {"ego.Wx", "ego.Wh",  "ego.b",   "env.Wx",  "env.Wh", "env.b",
               "attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo", "attn.bo"};
      break;
    case ModelKind::Lstm: names = {"lstm.Wx", "lstm.Wh", "lstm.b"}; break;
    case ModelKind::Fcnn: names = {"fc.W", "fc.b"}; break;
  }
  names.insert(names.end(), head.begin(), head.end());
  return names;
}

namespace {

enum : std::size_t {
  kEgoWx, kEgoWh, kEgoB, kEnvWx, kEnvWh, kEnvB, kWq, kWk, kWv, kWo, kBo,
};
enum : std::size_t { kLstmWx, kLstmWh, kLstmB };
enum : std::size_t { kFcW, kFcB };

std::vector<Tensor> shaped_params(const Model& m) {
  const std::size_t H = m.H, G = 4 * m.H, da = m.d_a;
  std::vector<Tensor> p;
  std::size_t head_in = H;
  switch (m.kind) {
    case ModelKind::Lstmca:
      p = {Tensor(G, m.f_ego), Tensor(G, H), Tensor(G),  Tensor(G, m.f_env),
           Tensor(G, H),       Tensor(G),    Tensor(H, da), Tensor(H, da),
           Tensor(H, da),      Tensor(da, da), Tensor(da)};
      head_in = da + 2 * H;
      break;
    case ModelKind::Lstm:
      p = {Tensor(G, m.f_ego + m.f_env), Tensor(G, H), Tensor(G)};
      break;
    case ModelKind::Fcnn:
      p = {Tensor(H, m.T * (m.f_ego + m.f_env)), Tensor(H)};
      break;
  }
  p.push_back(Tensor(H, head_in));
  p.push_back(Tensor(H));
  p.push_back(Tensor(kNumLevels, H));
  p.push_back(Tensor(kNumLevels));
  return p;
}

Model blank_model(const TrainConfig& cfg, std::size_t f_ego) {
  validate(cfg);
  Model m;
  m.kind = cfg.kind;
  m.T = static_cast<std::size_t>(cfg.T);
  m.f_ego = f_ego;
  m.H = static_cast<std::size_t>(cfg.H);
  m.d_a = static_cast<std::size_t>(cfg.d_a);
  m.query_from_env = cfg.query_from_env;
  m.scaler = identity_scaler(f_ego);
  m.params = shaped_params(m);
  return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Model zero_model(const TrainConfig& cfg, std::size_t f_ego) { return blank_model(cfg, f_ego); }

Model init_model(const TrainConfig& cfg, std::size_t f_ego, std::uint64_t seed) {
  Model m = blank_model(cfg, f_ego);
  Rng rng(seed);
  for (auto& t : m.params) {
    if (t.shape.size() != 2) continue;
    const double a = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    for (auto& v : t.data) v = rng.uniform(-a, a);
  }
  auto forget_one = [&](std::size_t idx) {
    for (std::size_t j = m.H; j < 2 * m.H; ++j) m.params[idx][j] = 1.0;
  };
  if (m.kind == ModelKind::Lstmca) {
    forget_one(kEgoB);
    forget_one(kEnvB);
  } else if (m.kind == ModelKind::Lstm) {
    forget_one(kLstmB);
  }
  return m;
}

InputScaler identity_scaler(std::size_t f_ego) {
  InputScaler s;
  s.ego_mean.assign(f_ego, 0.0);
  s.ego_std.assign(f_ego, 1.0);
  s.env_mean.assign(kEnvChannels, 0.0);
  s.env_std.assign(kEnvChannels, 1.0);
  return s;
}

namespace {

double env_transform(std::size_t channel, double v) {
  return channel < 4 ? std::log1p(std::max(v, 0.0)) : v;
}

void moments(const std::vector<double>& sum, const std::vector<double>& sq, double n,
             std::vector<double>& mean, std::vector<double>& sd) {
  for (std::size_t c = 0; c < sum.size(); ++c) {
    mean[c] = sum[c] / n;
    const double var = std::max(sq[c] / n - mean[c] * mean[c], 0.0);
    sd[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
}

}  // namespace

InputScaler fit_scaler(std::span<const WindowSample> samples) {
  if (samples.empty()) throw DataError("cannot fit an input scaler to zero samples");
  const std::size_t fe = samples[0].ego.cols();
  InputScaler s = identity_scaler(fe);
  std::vector<double> es(fe), eq(fe), vs(kEnvChannels), vq(kEnvChannels);
  double rows = 0.0;
  for (const auto& w : samples) {
    for (std::size_t t = 0; t < w.ego.rows(); ++t) {
      for (std::size_t c = 0; c < fe; ++c) {
        es[c] += w.ego(t, c);
        eq[c] += w.ego(t, c) * w.ego(t, c);
      }
      for (std::size_t c = 0; c < kEnvChannels; ++c) {
        const double v = env_transform(c, w.env(t, c));
        vs[c] += v;
        vq[c] += v * v;
      }
      rows += 1.0;
    }
  }
  moments(es, eq, rows, s.ego_mean, s.ego_std);
  moments(vs, vq, rows, s.env_mean, s.env_std);
  return s;
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

struct LstmCache {
  std::size_t T = 0, H = 0, F = 0;
  std::vector<double> x;      // T x F
  std::vector<double> gates;  // T x 4H, post-activation i, f, g, o
  std::vector<double> c, tc, h;  // T x H
};

void lstm_run(const double* x, std::size_t T, std::size_t F, const Tensor& Wx, const Tensor& Wh,
              const Tensor& b, LstmCache& k) {
  const std::size_t H = Wh.cols(), G = 4 * H;
  if (Wx.rows() != G || Wx.cols() != F || Wh.rows() != G || b.size() != G) {
    throw ShapeError("LSTM parameters do not match input width " + std::to_string(F));
  }
  k.T = T;
  k.H = H;
  k.F = F;
  k.x.assign(x, x + T * F);
  k.gates.resize(T * G);
  k.c.resize(T * H);
  k.tc.resize(T * H);
  k.h.resize(T * H);
  std::vector<double> z(G);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = x + t * F;
    const double* hp = t > 0 ? &k.h[(t - 1) * H] : nullptr;
    for (std::size_t r = 0; r < G; ++r) {
      double s = b[r];
      const double* wx = &Wx.data[r * F];
      for (std::size_t c = 0; c < F; ++c) s += wx[c] * xt[c];
      if (hp) {
        const double* wh = &Wh.data[r * H];
        for (std::size_t c = 0; c < H; ++c) s += wh[c] * hp[c];
      }
      z[r] = s;
    }
    double* g = &k.gates[t * G];
    for (std::size_t j = 0; j < H; ++j) {
      g[j] = sigmoid(z[j]);
      g[H + j] = sigmoid(z[H + j]);
      g[2 * H + j] = std::tanh(z[2 * H + j]);
      g[3 * H + j] = sigmoid(z[3 * H + j]);
      const double cprev = t > 0 ? k.c[(t - 1) * H + j] : 0.0;
      const double c = g[H + j] * cprev + g[j] * g[2 * H + j];
      k.c[t * H + j] = c;
      k.tc[t * H + j] = std::tanh(c);
      k.h[t * H + j] = g[3 * H + j] * k.tc[t * H + j];
    }
  }
}

// dh holds dL/dh_t from outside the recurrence. Parameter gradients are
// accumulated.
void lstm_back(const LstmCache& k, const Tensor& Wh, const std::vector<double>& dh,
               Tensor& dWx, Tensor& dWh, Tensor& db) {
  const std::size_t T = k.T, H = k.H, F = k.F, G = 4 * H;
  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(G);
  for (std::size_t tt = T; tt-- > 0;) {
    const double* g = &k.gates[tt * G];
    for (std::size_t j = 0; j < H; ++j) {
      const double i = g[j], f = g[H + j], gg = g[2 * H + j], o = g[3 * H + j];
      const double tc = k.tc[tt * H + j];
      const double cprev = tt > 0 ? k.c[(tt - 1) * H + j] : 0.0;
      const double dht = dh[tt * H + j] + dh_next[j];
      const double dc = dc_next[j] + dht * o * (1.0 - tc * tc);
      dz[j] = dc * gg * i * (1.0 - i);
      dz[H + j] = dc * cprev * f * (1.0 - f);
      dz[2 * H + j] = dc * i * (1.0 - gg * gg);
      dz[3 * H + j] = dht * tc * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    const double* xt = &k.x[tt * F];
    const double* hp = tt > 0 ? &k.h[(tt - 1) * H] : nullptr;
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < G; ++r) {
      const double d = dz[r];
      db[r] += d;
      double* gx = &dWx.data[r * F];
      for (std::size_t c = 0; c < F; ++c) gx[c] += d * xt[c];
      const double* wh = &Wh.data[r * H];
      if (hp) {
        double* gh = &dWh.data[r * H];
        for (std::size_t c = 0; c < H; ++c) gh[c] += d * hp[c];
      }
      for (std::size_t c = 0; c < H; ++c) dh_next[c] += wh[c] * d;
    }
  }
}

// ---------------------------------------------------------------------------
// Attention

struct AttnCache {
  std::size_t T = 0, H = 0, da = 0;
  std::vector<double> Q, K, V;  // T x da
  std::vector<double> A;        // T x T
  std::vector<double> C;        // T x da
};

void project(const double* x, std::size_t T, std::size_t H, const Tensor& W, double* out) {
  const std::size_t da = W.cols();
  for (std::size_t t = 0; t < T; ++t) {
    double* o = out + t * da;
    std::fill(o, o + da, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const double xv = x[t * H + h];
      const double* w = &W.data[h * da];
      for (std::size_t a = 0; a < da; ++a) o[a] += xv * w[a];
    }
  }
}

void attention_run(const double* q_seq, const double* kv_seq, std::size_t T, std::size_t H,
                   const Tensor& Wq, const Tensor& Wk, const Tensor& Wv, AttnCache& k) {
  const std::size_t da = Wq.cols();
  if (Wq.rows() != H || Wk.rows() != H || Wv.rows() != H || Wk.cols() != da ||
      Wv.cols() != da) {
    throw ShapeError("attention projections do not match hidden width " + std::to_string(H));
  }
  k.T = T;
  k.H = H;
  k.da = da;
  k.Q.resize(T * da);
  k.K.resize(T * da);
  k.V.resize(T * da);
  k.A.resize(T * T);
  k.C.assign(T * da, 0.0);
  project(q_seq, T, H, Wq, k.Q.data());
  project(kv_seq, T, H, Wk, k.K.data());
  project(kv_seq, T, H, Wv, k.V.data());
  const double scale = 1.0 / std::sqrt(static_cast<double>(da));
  for (std::size_t t = 0; t < T; ++t) {
    double* row = &k.A[t * T];
    double mx = -INFINITY;
    for (std::size_t s = 0; s < T; ++s) {
      double v = 0.0;
      for (std::size_t a = 0; a < da; ++a) v += k.Q[t * da + a] * k.K[s * da + a];
      row[s] = v * scale;
      mx = std::max(mx, row[s]);
    }
    double sum = 0.0;
    for (std::size_t s = 0; s < T; ++s) {
      row[s] = std::exp(row[s] - mx);
      sum += row[s];
    }
    for (std::size_t s = 0; s < T; ++s) row[s] /= sum;
    double* c = &k.C[t * da];
    for (std::size_t s = 0; s < T; ++s) {
      for (std::size_t a = 0; a < da; ++a) c[a] += row[s] * k.V[s * da + a];
    }
  }
}

// dC: T x da. Accumulates into dWq/dWk/dWv and the branch hidden-state grads.
void attention_back(const AttnCache& k, const double* q_seq, const double* kv_seq,
                    const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                    const std::vector<double>& dC, Tensor& dWq, Tensor& dWk, Tensor& dWv,
                    double* dq_seq, double* dkv_seq) {
  const std::size_t T = k.T, H = k.H, da = k.da;
  const double scale = 1.0 / std::sqrt(static_cast<double>(da));
  std::vector<double> dQ(T * da, 0.0), dK(T * da, 0.0), dV(T * da, 0.0), dS(T * T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* a_row = &k.A[t * T];
    const double* dc = &dC[t * da];
    double dot = 0.0;
    for (std::size_t s = 0; s < T; ++s) {
      double dA = 0.0;
      for (std::size_t a = 0; a < da; ++a) {
        dA += dc[a] * k.V[s * da + a];
        dV[s * da + a] += a_row[s] * dc[a];
      }
      dS[t * T + s] = dA;
      dot += a_row[s] * dA;
    }
    for (std::size_t s = 0; s < T; ++s) {
      dS[t * T + s] = a_row[s] * (dS[t * T + s] - dot) * scale;
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < T; ++s) {
      const double d = dS[t * T + s];
      for (std::size_t a = 0; a < da; ++a) {
        dQ[t * da + a] += d * k.K[s * da + a];
        dK[s * da + a] += d * k.Q[t * da + a];
      }
    }
  }
  auto back_proj = [&](const double* x, const Tensor& W, const std::vector<double>& dP,
                       Tensor& dW, double* dx) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        const double xv = x[t * H + h];
        const double* w = &W.data[h * da];
        double* gw = &dW.data[h * da];
        double acc = 0.0;
        for (std::size_t a = 0; a < da; ++a) {
          gw[a] += xv * dP[t * da + a];
          acc += w[a] * dP[t * da + a];
        }
        dx[t * H + h] += acc;
      }
    }
  };
  back_proj(q_seq, Wq, dQ, dWq, dq_seq);
  back_proj(kv_seq, Wk, dK, dWk, dkv_seq);
  back_proj(kv_seq, Wv, dV, dWv, dkv_seq);
}

// ---------------------------------------------------------------------------
// Whole model

struct Workspace {
  std::vector<double> ego, env, cat;  // scaled inputs
  LstmCache l1, l2;
  AttnCache attn;
  std::vector<double> cbar, head_in, a1;
  std::array<double, kNumLevels> logits{}, probs{};
};

void scale_inputs(const Model& m, const WindowSample& s, Workspace& w) {
  const std::size_t T = s.ego.rows();
  if (T == 0) throw ShapeError("empty window");
  if (s.ego.cols() != m.f_ego || s.env.cols() != m.f_env || s.env.rows() != T) {
    throw ShapeError("window shape (" + std::to_string(T) + "x" + std::to_string(s.ego.cols()) +
                     ", " + std::to_string(s.env.rows()) + "x" + std::to_string(s.env.cols()) +
                     ") does not match the model");
  }
  if (m.kind == ModelKind::Fcnn && T != m.T) {
    throw ShapeError("FCNN expects windows of " + std::to_string(m.T) + " frames, got " +
                     std::to_string(T));
  }
  const auto& sc = m.scaler;
  w.ego.resize(T * m.f_ego);
  w.env.resize(T * m.f_env);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < m.f_ego; ++c) {
      w.ego[t * m.f_ego + c] = (s.ego(t, c) - sc.ego_mean[c]) / sc.ego_std[c];
    }
    for (std::size_t c = 0; c < m.f_env; ++c) {
      w.env[t * m.f_env + c] = (env_transform(c, s.env(t, c)) - sc.env_mean[c]) / sc.env_std[c];
    }
  }
  if (m.kind != ModelKind::Lstmca) {
    const std::size_t F = m.f_ego + m.f_env;
    w.cat.resize(T * F);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy_n(&w.ego[t * m.f_ego], m.f_ego, &w.cat[t * F]);
      std::copy_n(&w.env[t * m.f_env], m.f_env, &w.cat[t * F + m.f_ego]);
    }
  }
}

void head_forward(const Model& m, Workspace& w) {
  const std::size_t n = m.params.size();
  const Tensor& W1 = m.params[n - 4];
  const Tensor& b1 = m.params[n - 3];
  const Tensor& W2 = m.params[n - 2];
  const Tensor& b2 = m.params[n - 1];
  const std::size_t H = W1.rows(), in = W1.cols();
  w.a1.resize(H);
  for (std::size_t r = 0; r < H; ++r) {
    double s = b1[r];
    for (std::size_t c = 0; c < in; ++c) s += W1.data[r * in + c] * w.head_in[c];
    w.a1[r] = std::tanh(s);
  }
  double mx = -INFINITY;
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    double s = b2[k];
    for (std::size_t c = 0; c < H; ++c) s += W2.data[k * H + c] * w.a1[c];
    w.logits[k] = s;
    mx = std::max(mx, s);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    w.probs[k] = std::exp(w.logits[k] - mx);
    sum += w.probs[k];
  }
  for (auto& p : w.probs) p /= sum;
}

void run_forward(const Model& m, const WindowSample& s, Workspace& w) {
  scale_inputs(m, s, w);
  const std::size_t T = s.ego.rows(), H = m.H;
  const auto& p = m.params;
  switch (m.kind) {
    case ModelKind::Lstmca: {
      lstm_run(w.ego.data(), T, m.f_ego, p[kEgoWx], p[kEgoWh], p[kEgoB], w.l1);
      lstm_run(w.env.data(), T, m.f_env, p[kEnvWx], p[kEnvWh], p[kEnvB], w.l2);
      const auto& q = m.query_from_env ? w.l2.h : w.l1.h;
      const auto& kv = m.query_from_env ? w.l1.h : w.l2.h;
      attention_run(q.data(), kv.data(), T, H, p[kWq], p[kWk], p[kWv], w.attn);
      const std::size_t da = m.d_a;
      w.cbar.assign(da, 0.0);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t a = 0; a < da; ++a) w.cbar[a] += w.attn.C[t * da + a];
      for (auto& v : w.cbar) v /= static_cast<double>(T);
      w.head_in.assign(da + 2 * H, 0.0);
      const Tensor& Wo = p[kWo];
      for (std::size_t j = 0; j < da; ++j) {
        double u = p[kBo][j];
        for (std::size_t k = 0; k < da; ++k) u += w.cbar[k] * Wo.data[k * da + j];
        w.head_in[j] = u;
      }
      std::copy_n(&w.l1.h[(T - 1) * H], H, &w.head_in[da]);
      std::copy_n(&w.l2.h[(T - 1) * H], H, &w.head_in[da + H]);
      break;
    }
    case ModelKind::Lstm: {
      lstm_run(w.cat.data(), T, m.f_ego + m.f_env, p[kLstmWx], p[kLstmWh], p[kLstmB], w.l1);
      w.head_in.assign(w.l1.h.end() - static_cast<std::ptrdiff_t>(H), w.l1.h.end());
      break;
    }
    case ModelKind::Fcnn: {
      const Tensor& W = p[kFcW];
      const std::size_t in = W.cols();
      w.head_in.resize(H);
      for (std::size_t r = 0; r < H; ++r) {
        double s = p[kFcB][r];
        for (std::size_t c = 0; c < in; ++c) s += W.data[r * in + c] * w.cat[c];
        w.head_in[r] = std::tanh(s);
      }
      break;
    }
  }
  head_forward(m, w);
}

void run_backward(const Model& m, Workspace& w, const std::array<double, kNumLevels>& dlogits,
                  std::vector<Tensor>& g) {
  const auto& p = m.params;
  const std::size_t n = p.size();
  const Tensor& W1 = p[n - 4];
  const Tensor& W2 = p[n - 2];
  const std::size_t Hh = W1.rows(), in = W1.cols();

  std::vector<double> dpre(Hh, 0.0);
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    const double d = dlogits[k];
    g[n - 1][k] += d;
    for (std::size_t c = 0; c < Hh; ++c) {
      g[n - 2].data[k * Hh + c] += d * w.a1[c];
      dpre[c] += W2.data[k * Hh + c] * d;
    }
  }
  std::vector<double> din(in, 0.0);
  for (std::size_t r = 0; r < Hh; ++r) {
    const double d = dpre[r] * (1.0 - w.a1[r] * w.a1[r]);
    g[n - 3][r] += d;
    for (std::size_t c = 0; c < in; ++c) {
      g[n - 4].data[r * in + c] += d * w.head_in[c];
      din[c] += W1.data[r * in + c] * d;
    }
  }

  const std::size_t T = w.l1.T, H = m.H;
  switch (m.kind) {
    case ModelKind::Lstmca: {
      const std::size_t da = m.d_a;
      const Tensor& Wo = p[kWo];
      std::vector<double> dcbar(da, 0.0);
      for (std::size_t j = 0; j < da; ++j) {
        const double du = din[j];
        g[kBo][j] += du;
        for (std::size_t k = 0; k < da; ++k) {
          g[kWo].data[k * da + j] += w.cbar[k] * du;
          dcbar[k] += Wo.data[k * da + j] * du;
        }
      }
      std::vector<double> dC(T * da);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t a = 0; a < da; ++a) dC[t * da + a] = dcbar[a] / static_cast<double>(T);

      std::vector<double> dh_ego(T * H, 0.0), dh_env(T * H, 0.0);
      for (std::size_t j = 0; j < H; ++j) {
        dh_ego[(T - 1) * H + j] += din[da + j];
        dh_env[(T - 1) * H + j] += din[da + H + j];
      }
      auto& dq = m.query_from_env ? dh_env : dh_ego;
      auto& dkv = m.query_from_env ? dh_ego : dh_env;
      const auto& q = m.query_from_env ? w.l2.h : w.l1.h;
      const auto& kv = m.query_from_env ? w.l1.h : w.l2.h;
      attention_back(w.attn, q.data(), kv.data(), p[kWq], p[kWk], p[kWv], dC, g[kWq], g[kWk],
                     g[kWv], dq.data(), dkv.data());
      lstm_back(w.l1, p[kEgoWh], dh_ego, g[kEgoWx], g[kEgoWh], g[kEgoB]);
      lstm_back(w.l2, p[kEnvWh], dh_env, g[kEnvWx], g[kEnvWh], g[kEnvB]);
      break;
    }
    case ModelKind::Lstm: {
      std::vector<double> dh(T * H, 0.0);
      for (std::size_t j = 0; j < H; ++j) dh[(T - 1) * H + j] = din[j];
      lstm_back(w.l1, p[kLstmWh], dh, g[kLstmWx], g[kLstmWh], g[kLstmB]);
      break;
    }
    case ModelKind::Fcnn: {
      const std::size_t fin = p[kFcW].cols();
      for (std::size_t r = 0; r < H; ++r) {
        const double d = din[r] * (1.0 - w.head_in[r] * w.head_in[r]);
        g[kFcB][r] += d;
        double* gw = &g[kFcW].data[r * fin];
        for (std::size_t c = 0; c < fin; ++c) gw[c] += d * w.cat[c];
      }
      break;
    }
  }
}

std::vector<Tensor> zero_like(const std::vector<Tensor>& params) {
  std::vector<Tensor> g = params;
  for (auto& t : g) std::fill(t.data.begin(), t.data.end(), 0.0);
  return g;
}

double accumulate_range(const Model& m, std::span<const WindowSample> batch, std::size_t lo,
                        std::size_t hi, const std::array<double, kNumLevels>& cw, double inv_n,
                        std::vector<Tensor>& g) {
  Workspace w;
  double loss = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const auto& s = batch[i];
    if (s.label < 0 || s.label >= kNumLevels) throw ShapeError("label out of range");
    run_forward(m, s, w);
    const auto y = static_cast<std::size_t>(s.label);
    const double wy = cw[y];
    loss += -wy * std::log(std::max(w.probs[y], 1e-300)) * inv_n;
    std::array<double, kNumLevels> d{};
    for (std::size_t k = 0; k < kNumLevels; ++k) {
      d[k] = wy * (w.probs[k] - (k == y ? 1.0 : 0.0)) * inv_n;
    }
    run_backward(m, w, d, g);
  }
  return loss;
}

}  // namespace

Tensor lstm_forward(const Tensor& seq, const Tensor& Wx, const Tensor& Wh, const Tensor& b) {
  LstmCache k;
  lstm_run(seq.data.data(), seq.rows(), seq.cols(), Wx, Wh, b, k);
  Tensor out(k.T, k.H);
  out.data = k.h;
  return out;
}

AttentionOutput cross_attention(const Tensor& q_seq, const Tensor& kv_seq, const Tensor& Wq,
                                const Tensor& Wk, const Tensor& Wv) {
  if (q_seq.rows() != kv_seq.rows() || q_seq.cols() != kv_seq.cols()) {
    throw ShapeError("query and key/value sequences differ in shape");
  }
  AttnCache k;
  attention_run(q_seq.data.data(), kv_seq.data.data(), q_seq.rows(), q_seq.cols(), Wq, Wk, Wv,
                k);
  AttentionOutput out{Tensor(k.T, k.da), Tensor(k.T, k.T)};
  out.context.data = k.C;
  out.weights.data = k.A;
  return out;
}

Output forward(const Model& model, const WindowSample& sample) {
  Workspace w;
  run_forward(model, sample, w);
  return {w.logits, w.probs};
}

LossGrads loss_and_grads(const Model& model, std::span<const WindowSample> batch,
                         const std::array<double, kNumLevels>& class_weights) {
  if (batch.empty()) throw ShapeError("empty batch");
  LossGrads r;
  r.grads = zero_like(model.params);
  r.loss = accumulate_range(model, batch, 0, batch.size(), class_weights,
                            1.0 / static_cast<double>(batch.size()), r.grads);
  return r;
}

LossGrads loss_and_grads_parallel(const Model& model, std::span<const WindowSample> batch,
                                  const std::array<double, kNumLevels>& class_weights,
                                  int threads) {
  if (batch.empty()) throw ShapeError("empty batch");
  const std::size_t nt = static_cast<std::size_t>(std::max(threads, 1));
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<Tensor>> partial(nt, zero_like(model.params));
  std::vector<double> losses(nt, 0.0);
  std::vector<std::exception_ptr> errors(nt);

#pragma omp parallel for num_threads(static_cast<int>(nt)) schedule(static, 1)
  for (std::size_t c = 0; c < nt; ++c) {
    const std::size_t lo = batch.size() * c / nt, hi = batch.size() * (c + 1) / nt;
    try {
      losses[c] = accumulate_range(model, batch, lo, hi, class_weights, inv_n, partial[c]);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  LossGrads r;
  r.grads = std::move(partial[0]);
  r.loss = losses[0];
  for (std::size_t c = 1; c < nt; ++c) {
    r.loss += losses[c];
    for (std::size_t t = 0; t < r.grads.size(); ++t) {
      for (std::size_t i = 0; i < r.grads[t].size(); ++i) r.grads[t][i] += partial[c][t][i];
    }
  }
  return r;
}

std::array<double, kNumLevels> inverse_frequency_weights(std::span<const WindowSample> samples) {
  std::array<double, kNumLevels> counts{};
  for (const auto& s : samples) counts[static_cast<std::size_t>(s.label)] += 1.0;
  const double present = static_cast<double>(
      std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0.0; }));
  std::array<double, kNumLevels> w{};
  for (std::size_t k = 0; k < kNumLevels; ++k) {
    w[k] = counts[k] > 0.0 ? static_cast<double>(samples.size()) / (present * counts[k]) : 1.0;
  }
  return w;
}

std::vector<Prediction> predict(const Model& model, std::span<const WindowSample> windows) {
  std::vector<Prediction> out(windows.size());
  Workspace w;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    run_forward(model, windows[i], w);
    out[i].probs = w.probs;
    out[i].level = static_cast<int>(std::max_element(w.probs.begin(), w.probs.end()) -
                                    w.probs.begin());
  }
  return out;
}

}  // namespace prisk
