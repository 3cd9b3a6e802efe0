#include "uad/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "uad/data.hpp"
#include "uad/rng.hpp"

namespace {

using uad::Rng;
using uad::linalg::Vector;
namespace models = uad::models;

/// Collect mutable pointers to every parameter, for finite differencing.
std::vector<double*> parameter_view(models::Classifier& m) {
  std::vector<double*> out;
  for (double& x : m.w1.storage()) out.push_back(&x);
  for (double& x : m.b1) out.push_back(&x);
  for (double& x : m.w2.storage()) out.push_back(&x);
  for (double& x : m.b2) out.push_back(&x);
  return out;
}

/// Independent forward pass written directly from the layer definitions.
Vector reference_forward_mlp(const models::Classifier& m, const Vector& x) {
  Vector hidden(m.hidden_width, 0.0);
  for (std::size_t i = 0; i < m.hidden_width; ++i) {
    double a = m.b1[i];
    for (std::size_t j = 0; j < m.input_dim; ++j) a += m.w1(i, j) * x[j];
    hidden[i] = m.activation == models::Activation::Tanh ? std::tanh(a) : std::max(a, 0.0);
  }
  Vector z(m.class_count, 0.0);
  for (std::size_t k = 0; k < m.class_count; ++k) {
    double a = m.b2[k];
    for (std::size_t i = 0; i < m.hidden_width; ++i) a += m.w2(k, i) * hidden[i];
    z[k] = a;
  }
  return z;
}

double fd_input_gradient_error(const models::Classifier& m, Vector x, int y, double h = 1e-5) {
  const Vector g = models::input_gradient(m, x, y);
  Vector fd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = models::loss(m, x, y);
    x[i] = saved - h;
    const double dn = models::loss(m, x, y);
    x[i] = saved;
    fd[i] = (up - dn) / (2.0 * h);
  }
  Vector diff = g;
  uad::linalg::axpy_inplace(diff, -1.0, fd);
  const double scale = std::max({uad::linalg::norm2(g), uad::linalg::norm2(fd), 1e-8});
  return uad::linalg::norm2(diff) / scale;
}

TEST(Forward, ZeroModelGivesZeroLogits) {
  const auto m = models::make_softmax_regression(4, 3);
  const Vector z = models::forward(m, Vector{0.5, -0.25, 1.0, 2.0});
  for (double v : z) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Forward, OneByOneAffine) {
  auto m = models::make_softmax_regression(1, 1);
  m.w1(0, 0) = 2.0;
  m.b1[0] = 1.0;
  const Vector z = models::forward(m, Vector{3.0});
  EXPECT_DOUBLE_EQ(z[0], 7.0);
}

TEST(Forward, DimensionMismatchThrows) {
  const auto m = models::make_softmax_regression(4, 3);
  EXPECT_THROW(models::forward(m, Vector{1.0, 2.0}), std::invalid_argument);
}

TEST(Forward, MlpMatchesIndependentImplementation) {
  auto m = models::make_mlp1h(5, 3, 7, models::Activation::Tanh);
  models::init_weights(m, 42);
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    Vector x(5);
    for (double& v : x) v = rng.normal();
    const Vector got = models::forward(m, x);
    const Vector want = reference_forward_mlp(m, x);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
  }
}

TEST(Loss, UniformSoftmaxIsLogK) {
  const auto m = models::make_softmax_regression(4, 10);
  const double l = models::loss(m, Vector{1.0, 2.0, 3.0, 4.0}, 7);
  EXPECT_NEAR(l, std::log(10.0), 1e-12);
}

TEST(Loss, MonotoneDecreaseTowardZeroAsTargetLogitGrows) {
  auto m = models::make_softmax_regression(1, 2);
  m.w1(0, 0) = 1.0;  // logit_0 = x, logit_1 = 0
  double prev = models::loss(m, Vector{0.0}, 0);
  for (double x = 1.0; x <= 30.0; x += 1.0) {
    const double cur = models::loss(m, Vector{x}, 0);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_LT(prev, 1e-12);
  EXPECT_GE(prev, 0.0);
}

TEST(Loss, MatchesLogSumExpReference) {
  auto m = models::make_mlp1h(4, 5, 6);
  models::init_weights(m, 3);
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    Vector x(4);
    for (double& v : x) v = rng.normal();
    const int y = static_cast<int>(rng.index(5));
    const Vector z = models::forward(m, x);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v);
    const double want = std::log(lse) - z[static_cast<std::size_t>(y)];
    EXPECT_NEAR(models::loss(m, x, y), want, 1e-12);
    EXPECT_GE(models::loss(m, x, y), 0.0);
  }
  EXPECT_THROW(models::loss(m, Vector(4, 0.0), 5), std::invalid_argument);
}

TEST(InputGradient, ZeroModelGivesZeroGradient) {
  const auto m = models::make_softmax_regression(3, 4);
  const Vector g = models::input_gradient(m, Vector{1.0, -2.0, 0.5}, 2);
  for (double v : g) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(InputGradient, SoftmaxClosedFormAgreesWithBackprop) {
  auto m = models::make_softmax_regression(6, 4);
  models::init_weights(m, 9);
  Rng rng(10);
  Vector x(6);
  for (double& v : x) v = rng.normal();
  const int y = 1;
  const Vector g = models::input_gradient(m, x, y);
  // closed form: w1^T (softmax(w1 x + b1) - onehot(y))
  Vector z = models::forward(m, x);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - zmax);
  Vector dz(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) dz[i] = std::exp(z[i] - zmax) / total;
  dz[y] -= 1.0;
  const Vector want = uad::linalg::tmatvec(m.w1, dz);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], want[i], 1e-12);
}

TEST(InputGradient, FiniteDifferenceProbesBothArchitectures) {
  Rng rng(77);
  for (int probe = 0; probe < 30; ++probe) {
    const bool mlp = probe % 2 == 1;
    models::Classifier m = mlp ? models::make_mlp1h(6, 3, 5, models::Activation::Tanh)
                               : models::make_softmax_regression(6, 3);
    models::init_weights(m, 100 + static_cast<std::uint64_t>(probe));
    Vector x(6);
    for (double& v : x) v = rng.normal();
    const int y = static_cast<int>(rng.index(3));
    EXPECT_LE(fd_input_gradient_error(m, x, y), 1e-5);
  }
}

TEST(ParameterGradient, SaturatedCorrectLogitsHaveTinyGradient) {
  auto m = models::make_softmax_regression(1, 2);
  m.w1(0, 0) = 20.0;
  m.w1(1, 0) = -20.0;
  uad::data::Dataset ds;
  ds.n = 2;
  ds.d = 1;
  ds.class_count = 2;
  ds.features = {1.0, -1.0};
  ds.labels = {0, 1};
  const std::vector<std::size_t> batch = {0, 1};
  const auto g = models::parameter_gradient(m, ds, batch);
  EXPECT_LT(g.norm(), 1e-6);
}

TEST(ParameterGradient, SingleSampleBatchEqualsPerSample) {
  auto m = models::make_mlp1h(3, 2, 4);
  models::init_weights(m, 5);
  uad::data::Dataset ds;
  ds.n = 3;
  ds.d = 3;
  ds.class_count = 2;
  Rng rng(6);
  ds.features.resize(9);
  for (double& v : ds.features) v = rng.normal();
  ds.labels = {0, 1, 0};
  const std::vector<std::size_t> one = {1};
  const auto g1 = models::parameter_gradient(m, ds, one);
  // mean over a single sample is the per-sample gradient itself
  const std::vector<std::size_t> again = {1};
  const auto g2 = models::parameter_gradient(m, ds, again);
  EXPECT_EQ(g1.w1.storage(), g2.w1.storage());
  EXPECT_THROW(models::parameter_gradient(m, ds, {}), std::invalid_argument);
}

TEST(ParameterGradient, FiniteDifferenceOnSmallModel) {
  auto m = models::make_mlp1h(3, 2, 3);  // 20 parameters
  models::init_weights(m, 8);
  uad::data::Dataset ds;
  ds.n = 4;
  ds.d = 3;
  ds.class_count = 2;
  Rng rng(9);
  ds.features.resize(12);
  for (double& v : ds.features) v = rng.normal();
  ds.labels = {0, 1, 1, 0};
  std::vector<std::size_t> batch = {0, 1, 2, 3};
  const auto g = models::parameter_gradient(m, ds, batch);

  auto batch_loss = [&](const models::Classifier& model) {
    double total = 0.0;
    for (std::size_t i : batch) total += models::loss(model, ds.row(i), ds.labels[i]);
    return total / static_cast<double>(batch.size());
  };
  std::vector<double*> params = parameter_view(m);
  models::Classifier probe = m;
  std::vector<double*> probe_params = parameter_view(probe);
  std::vector<const double*> grad_flat;
  {
    models::ParamGradient& gg = const_cast<models::ParamGradient&>(g);
    for (double& x : gg.w1.storage()) grad_flat.push_back(&x);
    for (double& x : gg.b1) grad_flat.push_back(&x);
    for (double& x : gg.w2.storage()) grad_flat.push_back(&x);
    for (double& x : gg.b2) grad_flat.push_back(&x);
  }
  ASSERT_EQ(grad_flat.size(), probe_params.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < probe_params.size(); ++i) {
    const double saved = *probe_params[i];
    *probe_params[i] = saved + h;
    const double up = batch_loss(probe);
    *probe_params[i] = saved - h;
    const double dn = batch_loss(probe);
    *probe_params[i] = saved;
    const double fd = (up - dn) / (2.0 * h);
    EXPECT_NEAR(*grad_flat[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Train, LinearlySeparableReachesHighAccuracy) {
  const auto ds = uad::data::synth_gaussian_mixture(1, 200, 2, 2, 10.0);
  auto m = models::make_softmax_regression(2, 2);
  models::init_weights(m, 2);
  models::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.5;
  cfg.weight_decay = 0.0;
  cfg.seed = 3;
  const auto result = models::train(m, ds, cfg);
  EXPECT_GE(models::accuracy(result.model, ds), 0.99);
  EXPECT_LE(result.loss_trace.back(), result.loss_trace.front());
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  auto m = models::make_mlp1h(4, 3, 5);
  models::init_weights(m, 11);
  const auto ds = uad::data::synth_gaussian_mixture(2, 30, 4, 3, 2.0);
  models::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 10;
  const auto result = models::train(m, ds, cfg);
  EXPECT_EQ(result.model.w1.storage(), m.w1.storage());
  EXPECT_EQ(result.model.b1, m.b1);
  EXPECT_EQ(result.model.w2.storage(), m.w2.storage());
  EXPECT_EQ(result.loss_trace.size(), 1u);
}

TEST(Train, FixedSeedIsBitwiseReproducible) {
  const auto ds = uad::data::synth_gaussian_mixture(4, 60, 3, 2, 3.0);
  auto m = models::make_mlp1h(3, 2, 4);
  models::init_weights(m, 12);
  models::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.seed = 99;
  const auto a = models::train(m, ds, cfg);
  const auto b = models::train(m, ds, cfg);
  EXPECT_EQ(a.model.w1.storage(), b.model.w1.storage());
  EXPECT_EQ(a.model.b1, b.model.b1);
  EXPECT_EQ(a.model.w2.storage(), b.model.w2.storage());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Invariants, SoftmaxShiftInvariance) {
  auto m = models::make_softmax_regression(3, 4);
  models::init_weights(m, 21);
  const Vector x = {0.3, -0.7, 1.1};
  const int y = 2;
  const double l0 = models::loss(m, x, y);
  const Vector g0 = models::input_gradient(m, x, y);
  auto shifted = m;
  for (double& b : shifted.b1) b += 5.0;  // adds the constant to every logit
  EXPECT_NEAR(models::loss(shifted, x, y), l0, 1e-12);
  const Vector g1 = models::input_gradient(shifted, x, y);
  for (std::size_t i = 0; i < g0.size(); ++i) EXPECT_NEAR(g1[i], g0[i], 1e-12);
}

TEST(Invariants, BiasShiftIdentity) {
  // forward(m with b1 <- b1 + w1 u, x) == forward(m, x + u)
  for (const bool mlp : {false, true}) {
    models::Classifier m = mlp ? models::make_mlp1h(4, 3, 6) : models::make_softmax_regression(4, 3);
    models::init_weights(m, 31);
    Rng rng(32);
    Vector u(4), x(4);
    for (double& v : u) v = rng.normal();
    for (double& v : x) v = rng.normal();
    auto shifted = m;
    const Vector w1u = uad::linalg::matvec(m.w1, u);
    for (std::size_t i = 0; i < shifted.b1.size(); ++i) shifted.b1[i] += w1u[i];
    Vector xu = x;
    uad::linalg::axpy_inplace(xu, 1.0, u);
    const Vector a = models::forward(shifted, x);
    const Vector b = models::forward(m, xu);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto m = models::make_mlp1h(5, 3, 4, models::Activation::Relu);
  models::init_weights(m, 55);
  const std::string dir = ::testing::TempDir();
  const std::string path = dir + "/ckpt.json";
  models::save_checkpoint(m, path);
  const auto loaded = models::load_checkpoint(path);
  EXPECT_EQ(loaded.w1.storage(), m.w1.storage());
  EXPECT_EQ(loaded.b1, m.b1);
  EXPECT_EQ(loaded.w2.storage(), m.w2.storage());
  EXPECT_EQ(loaded.b2, m.b2);
  EXPECT_EQ(loaded.architecture, m.architecture);
  EXPECT_EQ(loaded.activation, m.activation);
  EXPECT_EQ(models::fingerprint(loaded), models::fingerprint(m));
  std::filesystem::remove(path);
}

}  // namespace
