#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "uad/data.hpp"
#include "uad/fingerprint.hpp"
#include "uad/linalg.hpp"
#include "uad/rng.hpp"

#include "json.hpp"

namespace uad::models {

using linalg::DenseMatrix;
using linalg::Vector;

enum class Architecture { SoftmaxRegression, Mlp1h };
enum class Activation { Tanh, Relu };

inline std::string to_string(Architecture a) {
  return a == Architecture::SoftmaxRegression ? "softmax-regression" : "mlp1h";
}

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Architecture architecture_from_string(const std::string& s) {
  if (s == "softmax-regression") return Architecture::SoftmaxRegression;
  if (s == "mlp1h") return Architecture::Mlp1h;
  throw std::invalid_argument("unknown architecture: " + s);
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation: " + s);
}

/// A small differentiable classifier with exact input gradients. Softmax
/// regression stores only (w1, b1) with w1 of shape K x d; the one-hidden-
/// layer MLP adds (w2, b2) and an activation.
struct Classifier {
  Architecture architecture = Architecture::SoftmaxRegression;
  Activation activation = Activation::Tanh;
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
  std::size_t hidden_width = 0;  // mlp1h only
  DenseMatrix w1;  // K x d (softmax) or h x d (mlp)
  Vector b1;       // K or h
  DenseMatrix w2;  // K x h (mlp only)
  Vector b2;       // K (mlp only)
};

inline Classifier make_softmax_regression(std::size_t input_dim, std::size_t class_count) {
  Classifier m;
  m.architecture = Architecture::SoftmaxRegression;
  m.input_dim = input_dim;
  m.class_count = class_count;
  m.w1 = DenseMatrix(class_count, input_dim);
  m.b1 = Vector(class_count, 0.0);
  return m;
}

inline Classifier make_mlp1h(std::size_t input_dim, std::size_t class_count, std::size_t hidden_width,
                             Activation activation = Activation::Tanh) {
  Classifier m;
  m.architecture = Architecture::Mlp1h;
  m.activation = activation;
  m.input_dim = input_dim;
  m.class_count = class_count;
  m.hidden_width = hidden_width;
  m.w1 = DenseMatrix(hidden_width, input_dim);
  m.b1 = Vector(hidden_width, 0.0);
  m.w2 = DenseMatrix(class_count, hidden_width);
  m.b2 = Vector(class_count, 0.0);
  return m;
}

/// Scaled-uniform init: every weight uniform in +-1/sqrt(fan_in), biases zero.
inline void init_weights(Classifier& m, std::uint64_t seed) {
  Rng rng(seed);
  const auto fill = [&](DenseMatrix& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (double& x : w.storage()) x = rng.uniform(-bound, bound);
  };
  fill(m.w1);
  std::fill(m.b1.begin(), m.b1.end(), 0.0);
  if (m.architecture == Architecture::Mlp1h) {
    fill(m.w2);
    std::fill(m.b2.begin(), m.b2.end(), 0.0);
  }
}

inline std::string fingerprint(const Classifier& m) {
  Fnv1a h;
  h.update(to_string(m.architecture));
  h.update(to_string(m.activation));
  h.update(static_cast<std::uint64_t>(m.input_dim));
  h.update(static_cast<std::uint64_t>(m.class_count));
  h.update(static_cast<std::uint64_t>(m.hidden_width));
  h.update(m.w1.flat());
  h.update(std::span<const double>(m.b1));
  h.update(m.w2.flat());
  h.update(std::span<const double>(m.b2));
  return h.hex();
}

namespace detail {

inline double activate(Activation a, double x) {
  return a == Activation::Tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

/// Derivative w.r.t. the preactivation; relu'(0) is defined as 0.
inline double activate_grad(Activation a, double pre) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }
  return pre > 0.0 ? 1.0 : 0.0;
}

inline Vector affine(const DenseMatrix& w, const Vector& b, std::span<const double> x) {
  Vector z = linalg::matvec(w, x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += b[i];
  return z;
}

inline Vector softmax(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  Vector p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

inline double log_sum_exp(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double x : z) total += std::exp(x - zmax);
  return zmax + std::log(total);
}

}  // namespace detail

inline Vector forward(const Classifier& m, std::span<const double> x) {
  if (x.size() != m.input_dim) throw std::invalid_argument("forward: input dimension mismatch");
  if (m.architecture == Architecture::SoftmaxRegression) {
    return detail::affine(m.w1, m.b1, x);
  }
  Vector a1 = detail::affine(m.w1, m.b1, x);
  for (double& h : a1) h = detail::activate(m.activation, h);
  return detail::affine(m.w2, m.b2, a1);
}

/// Cross-entropy over the softmax of the logits; always >= 0.
inline double loss(const Classifier& m, std::span<const double> x, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= m.class_count) {
    throw std::invalid_argument("loss: label out of range");
  }
  const Vector z = forward(m, x);
  return detail::log_sum_exp(z) - z[static_cast<std::size_t>(y)];
}

/// Exact backpropagated gradient of the loss w.r.t. the input. For softmax
/// regression this is w1^T (softmax(w1 x + b1) - onehot(y)).
inline Vector input_gradient(const Classifier& m, std::span<const double> x, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= m.class_count) {
    throw std::invalid_argument("input_gradient: label out of range");
  }
  if (x.size() != m.input_dim) throw std::invalid_argument("input_gradient: input dimension mismatch");
  if (m.architecture == Architecture::SoftmaxRegression) {
    Vector dz = detail::softmax(detail::affine(m.w1, m.b1, x));
    dz[static_cast<std::size_t>(y)] -= 1.0;
    return linalg::tmatvec(m.w1, dz);
  }
  Vector pre = detail::affine(m.w1, m.b1, x);
  Vector hidden(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = detail::activate(m.activation, pre[i]);
  Vector dz = detail::softmax(detail::affine(m.w2, m.b2, hidden));
  dz[static_cast<std::size_t>(y)] -= 1.0;
  Vector dh = linalg::tmatvec(m.w2, dz);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= detail::activate_grad(m.activation, pre[i]);
  return linalg::tmatvec(m.w1, dh);
}

/// Argmax prediction; ties resolved to the lowest class index.
inline int predict(const Classifier& m, std::span<const double> x) {
  const Vector z = forward(m, x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  return static_cast<int>(best);
}

inline double mean_loss(const Classifier& m, const data::Dataset& ds) {
  if (ds.n == 0) throw std::invalid_argument("mean_loss: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) total += loss(m, ds.row(i), ds.labels[i]);
  return total / static_cast<double>(ds.n);
}

inline double accuracy(const Classifier& m, const data::Dataset& ds) {
  if (ds.n == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (predict(m, ds.row(i)) == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.n);
}

// ---------------------------------------------------------------------------
// Parameter gradients and training
// ---------------------------------------------------------------------------

struct ParamGradient {
  DenseMatrix w1;
  Vector b1;
  DenseMatrix w2;
  Vector b2;

  double norm() const {
    double s = 0.0;
    for (double x : w1.flat()) s += x * x;
    for (double x : b1) s += x * x;
    for (double x : w2.flat()) s += x * x;
    for (double x : b2) s += x * x;
    return std::sqrt(s);
  }
};

/// Exact gradient of the mean loss over the given batch, accumulated in
/// batch order.
inline ParamGradient parameter_gradient(const Classifier& m, const data::Dataset& ds,
                                        std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("parameter_gradient: empty batch");
  ParamGradient g;
  g.w1 = DenseMatrix(m.w1.rows(), m.w1.cols());
  g.b1 = Vector(m.b1.size(), 0.0);
  if (m.architecture == Architecture::Mlp1h) {
    g.w2 = DenseMatrix(m.w2.rows(), m.w2.cols());
    g.b2 = Vector(m.b2.size(), 0.0);
  }
  for (const std::size_t idx : batch) {
    const auto x = ds.row(idx);
    const int y = ds.labels[idx];
    if (m.architecture == Architecture::SoftmaxRegression) {
      Vector dz = detail::softmax(detail::affine(m.w1, m.b1, x));
      dz[static_cast<std::size_t>(y)] -= 1.0;
      for (std::size_t r = 0; r < m.w1.rows(); ++r) {
        auto grow = g.w1.row(r);
        const double dzr = dz[r];
        for (std::size_t c = 0; c < m.w1.cols(); ++c) grow[c] += dzr * x[c];
        g.b1[r] += dzr;
      }
    } else {
      Vector pre = detail::affine(m.w1, m.b1, x);
      Vector hidden(pre.size());
      for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = detail::activate(m.activation, pre[i]);
      Vector dz = detail::softmax(detail::affine(m.w2, m.b2, hidden));
      dz[static_cast<std::size_t>(y)] -= 1.0;
      for (std::size_t r = 0; r < m.w2.rows(); ++r) {
        auto grow = g.w2.row(r);
        const double dzr = dz[r];
        for (std::size_t c = 0; c < m.w2.cols(); ++c) grow[c] += dzr * hidden[c];
        g.b2[r] += dzr;
      }
      Vector dh = linalg::tmatvec(m.w2, dz);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= detail::activate_grad(m.activation, pre[i]);
      for (std::size_t r = 0; r < m.w1.rows(); ++r) {
        auto grow = g.w1.row(r);
        const double dhr = dh[r];
        for (std::size_t c = 0; c < m.w1.cols(); ++c) grow[c] += dhr * x[c];
        g.b1[r] += dhr;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& x : g.w1.storage()) x *= inv;
  for (double& x : g.b1) x *= inv;
  for (double& x : g.w2.storage()) x *= inv;
  for (double& x : g.b2) x *= inv;
  return g;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  explicit TrainingDivergedError(Vector trace)
      : std::runtime_error("training diverged: non-finite loss"), trace_(std::move(trace)) {}
  const Vector& trace() const { return trace_; }

 private:
  Vector trace_;
};

struct TrainResult {
  Classifier model;
  Vector loss_trace;  // mean training loss before epoch 0 and after each epoch
};

/// Minibatch SGD with weight decay and a seeded shuffle per epoch. Fully
/// deterministic given the seed. If the last epoch ends above the initial
/// loss the best recorded snapshot is returned instead.
inline TrainResult train(Classifier model, const data::Dataset& ds, const TrainConfig& cfg) {
  if (ds.n == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0 || cfg.batch_size > ds.n) {
    throw std::invalid_argument("train: batch_size must be in [1, n]");
  }
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");

  TrainResult out;
  out.loss_trace.push_back(mean_loss(model, ds));
  Classifier best = model;
  double best_loss = out.loss_trace.front();

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < ds.n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, ds.n - start);
      const ParamGradient g = parameter_gradient(model, ds, {order.data() + start, len});
      const auto step = [&](DenseMatrix& w, const DenseMatrix& gw) {
        auto& ws = w.storage();
        const auto& gs = gw.storage();
        for (std::size_t i = 0; i < ws.size(); ++i) {
          ws[i] -= cfg.learning_rate * (gs[i] + cfg.weight_decay * ws[i]);
        }
      };
      step(model.w1, g.w1);
      for (std::size_t i = 0; i < model.b1.size(); ++i) model.b1[i] -= cfg.learning_rate * g.b1[i];
      if (model.architecture == Architecture::Mlp1h) {
        step(model.w2, g.w2);
        for (std::size_t i = 0; i < model.b2.size(); ++i) model.b2[i] -= cfg.learning_rate * g.b2[i];
      }
    }
    const double epoch_loss = mean_loss(model, ds);
    out.loss_trace.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss)) throw TrainingDivergedError(out.loss_trace);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best = model;
    }
  }
  if (out.loss_trace.back() > out.loss_trace.front()) {
    model = best;
    out.loss_trace.push_back(best_loss);
  }
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Classifier& m) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["architecture"] = to_string(m.architecture);
  j["activation"] = to_string(m.activation);
  j["input_dim"] = m.input_dim;
  j["class_count"] = m.class_count;
  j["hidden_width"] = m.hidden_width;
  j["w1"] = m.w1.storage();
  j["b1"] = m.b1;
  j["w2"] = m.w2.storage();
  j["b2"] = m.b2;
  return j;
}

inline Classifier from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  const auto arch = architecture_from_string(j.at("architecture").get<std::string>());
  Classifier m = arch == Architecture::SoftmaxRegression
                     ? make_softmax_regression(j.at("input_dim").get<std::size_t>(),
                                               j.at("class_count").get<std::size_t>())
                     : make_mlp1h(j.at("input_dim").get<std::size_t>(), j.at("class_count").get<std::size_t>(),
                                  j.at("hidden_width").get<std::size_t>(),
                                  activation_from_string(j.at("activation").get<std::string>()));
  m.activation = activation_from_string(j.at("activation").get<std::string>());
  const auto w1 = j.at("w1").get<std::vector<double>>();
  if (w1.size() != m.w1.storage().size()) throw std::runtime_error("checkpoint w1 size mismatch");
  m.w1.storage() = w1;
  m.b1 = j.at("b1").get<std::vector<double>>();
  if (m.architecture == Architecture::Mlp1h) {
    const auto w2 = j.at("w2").get<std::vector<double>>();
    if (w2.size() != m.w2.storage().size()) throw std::runtime_error("checkpoint w2 size mismatch");
    m.w2.storage() = w2;
    m.b2 = j.at("b2").get<std::vector<double>>();
  }
  return m;
}

inline void save_checkpoint(const Classifier& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << to_json(m).dump(2) << '\n';
}

inline Classifier load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace uad::models
