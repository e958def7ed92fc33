#include <cstring>
#include <filesystem>

#include "test_util.hpp"

using namespace pgd;
using pgd::test::bit_equal;
using pgd::test::expect_error;
using pgd::test::random_vec;

namespace {

NetworkConfig small_config(std::uint64_t seed = 1) {
  NetworkConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_widths = {8};
  cfg.output_dim = 3;
  cfg.seed = seed;
  return cfg;
}

// Plain-loop evaluation from the layer accessors, independent of propagate().
Vec oracle_output(const Network& net, const Vec& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const Matrix w = net.layer_weight(l);
    const Vec b = net.layer_bias(l);
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = b[i];
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * a[static_cast<std::size_t>(j)];
      switch (net.config().activation) {
        case Activation::tanh: s = std::tanh(s); break;
        case Activation::relu: s = s > 0 ? s : 0; break;
        case Activation::identity: break;
      }
      next[static_cast<std::size_t>(i)] = s;
    }
    a = std::move(next);
  }
  Vec out(net.output_dim());
  for (Eigen::Index c = 0; c < net.output_dim(); ++c) {
    double s = net.head_bias()[c];
    for (Eigen::Index j = 0; j < net.hidden_dim(); ++j) s += net.head_weight()(c, j) * a[static_cast<std::size_t>(j)];
    out[c] = s;
  }
  return out;
}

double loss_at(Network net, const Vec& theta, const Vec& x, const Vec& y, const LossSpec& spec) {
  net.set_parameters(theta);
  return loss_and_residual(net.forward(x).output, y, spec).loss;
}

}  // namespace

TEST(InitNetwork, DeterministicAndSeedSensitive) {
  const Network a = init_network(small_config(1));
  const Network b = init_network(small_config(1));
  const Network c = init_network(small_config(2));
  EXPECT_TRUE(bit_equal(a.parameters(), b.parameters()));
  EXPECT_FALSE(bit_equal(a.parameters(), c.parameters()));
}

TEST(InitNetwork, ParameterCounts) {
  const Network net = init_network(small_config());
  EXPECT_EQ(net.head_size(), 3 * 8 + 3);
  EXPECT_EQ(net.trunk_size(), 4 * 8 + 8);
  EXPECT_EQ(net.parameter_count(), net.trunk_size() + net.head_size());
}

TEST(InitNetwork, ScaledUniformWithZeroBiases) {
  NetworkConfig cfg = small_config();
  cfg.hidden_widths = {16, 8};
  const Network net = init_network(cfg);
  EXPECT_LE(net.layer_weight(0).cwiseAbs().maxCoeff(), 1.0 / std::sqrt(4.0));
  EXPECT_LE(net.layer_weight(1).cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
  EXPECT_LE(net.head_weight().cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
  EXPECT_EQ(net.layer_bias(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(net.layer_bias(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(net.head_bias().cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitNetwork, InvalidConfig) {
  NetworkConfig cfg = small_config();
  cfg.hidden_widths.clear();
  expect_error(ErrorKind::config, [&] { init_network(cfg); });
  cfg = small_config();
  cfg.hidden_widths = {4, 0};
  expect_error(ErrorKind::config, [&] { init_network(cfg); });
}

TEST(Forward, ZeroParametersGiveBias) {
  Network net(small_config());
  Vec b(3);
  b << 0.5, -1.0, 2.0;
  net.set_head(Matrix::Zero(3, 8), b);
  Engine rng(1);
  const auto r = net.forward(random_vec(4, rng));
  EXPECT_EQ(r.llh.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(bit_equal(r.output, b));
  for (bool flag : {false, true}) EXPECT_TRUE(bit_equal(net.cheap_forward(Vec::Zero(4), flag).output, b));
}

TEST(Forward, IdentityActivationIsAffine) {
  NetworkConfig cfg = small_config();
  cfg.activation = Activation::identity;
  cfg.hidden_widths = {5, 6};
  const Network net = init_network(cfg);
  Engine rng(2);
  const Vec x1 = random_vec(4, rng), x2 = random_vec(4, rng);
  const double t = 0.3;
  const Vec lhs = net.forward(t * x1 + (1 - t) * x2).output;
  const Vec rhs = t * net.forward(x1).output + (1 - t) * net.forward(x2).output;
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, MatchesIndependentEvaluator) {
  Engine rng(3);
  for (Activation act : {Activation::tanh, Activation::relu}) {
    NetworkConfig cfg = small_config(7);
    cfg.hidden_widths = {7, 5, 6};
    cfg.activation = act;
    Network net = init_network(cfg);
    Vec theta = random_vec(net.parameter_count(), rng, 0.5);
    net.set_parameters(theta);
    for (int i = 0; i < 20; ++i) {
      const Vec x = random_vec(4, rng);
      const auto r = net.forward(x);
      EXPECT_LE((r.output - oracle_output(net, x)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((r.output - (net.head_weight() * r.llh + net.head_bias())).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(Forward, DimensionMismatch) {
  const Network net = init_network(small_config());
  expect_error(ErrorKind::dimension, [&] { net.forward(Vec::Zero(3)); });
  expect_error(ErrorKind::dimension, [&] { net.cheap_forward(Vec::Zero(5)); });
}

TEST(CheapForward, BitIdenticalWithoutReducedPrecision) {
  Engine rng(4);
  NetworkConfig cfg = small_config(9);
  cfg.hidden_widths = {16, 8};
  const Network net = init_network(cfg);
  for (int i = 0; i < 50; ++i) {
    const Vec x = random_vec(4, rng);
    const auto full = net.forward(x);
    const auto cheap = net.cheap_forward(x, false);
    EXPECT_TRUE(bit_equal(full.output, cheap.output));
    EXPECT_TRUE(bit_equal(full.llh, cheap.llh));
  }
}

TEST(CheapForward, ReducedPrecisionIsClose) {
  Engine rng(5);
  const Network net = init_network(small_config(10));
  for (int i = 0; i < 50; ++i) {
    const Vec x = random_vec(4, rng);
    const Vec ref = net.forward(x).output;
    const Vec low = net.cheap_forward(x, true).output;
    EXPECT_LE((low - ref).norm(), 1e-3 * std::max(1.0, ref.norm()));
  }
}

TEST(Loss, SquaredPerfectFit) {
  Vec y(2);
  y << 0.3, -1.2;
  const auto r = loss_and_residual(y, y, LossSpec{LossKind::squared_vector, 0.0});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.residual.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, SquaredValues) {
  Vec out(2), y(2);
  out << 1.0, 2.0;
  y << 0.0, 4.0;
  const auto r = loss_and_residual(out, y, LossSpec{LossKind::squared_vector, 0.0});
  EXPECT_DOUBLE_EQ(r.loss, 0.5 * (1.0 + 4.0));
  EXPECT_DOUBLE_EQ(r.residual[1], -2.0);
  expect_error(ErrorKind::dimension,
               [&] { loss_and_residual(out, Vec::Zero(2), LossSpec{LossKind::squared_scalar, 0.0}); });
}

TEST(Loss, CrossEntropyOneHot) {
  Vec logits = Vec::Zero(3);
  logits[1] = 1000.0;
  const auto r = loss_and_residual(logits, Vec::Constant(1, 1.0), LossSpec{LossKind::cross_entropy, 0.0});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.residual.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, LabelSmoothingTarget) {
  // residual = p - target, so at zero logits p = 1/C and target = p - residual
  const Vec logits = Vec::Zero(10);
  const auto r = cross_entropy_loss(logits, 4, 0.05);
  const Vec target = softmax(logits) - r.residual;
  for (Eigen::Index c = 0; c < 10; ++c) EXPECT_NEAR(target[c], c == 4 ? 0.955 : 0.005, 1e-15);
}

TEST(Loss, CrossEntropyResidualSumsToZero) {
  Engine rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vec logits = random_vec(6, rng, 3.0);
    const auto r = cross_entropy_loss(logits, i % 6, i % 2 ? 0.1 : 0.0);
    EXPECT_NEAR(r.residual.sum(), 0.0, 1e-14);
  }
}

TEST(Loss, CrossEntropyMatchesDirectFormula) {
  Vec logits(3);
  logits << 0.2, -1.0, 0.7;
  const double s = 0.1;
  const Vec p = logits.array().exp() / logits.array().exp().sum();
  double expect = 0.0;
  for (int c = 0; c < 3; ++c) expect -= ((c == 2 ? 1 - s : 0.0) + s / 3) * std::log(p[c]);
  EXPECT_NEAR(cross_entropy_loss(logits, 2, s).loss, expect, 1e-14);
}

TEST(Loss, LabelOutOfRange) {
  expect_error(ErrorKind::label, [] { cross_entropy_loss(Vec::Zero(3), 3, 0.0); });
  expect_error(ErrorKind::label,
               [] { loss_and_residual(Vec::Zero(3), Vec::Constant(1, -1.0), LossSpec{LossKind::cross_entropy, 0.0}); });
}

TEST(Backward, ZeroResidualGivesZeroGradient) {
  const Network net = init_network(small_config());
  Engine rng(7);
  const auto fr = net.forward(random_vec(4, rng));
  const auto g = net.backward(fr.cache, Vec::Zero(3));
  EXPECT_EQ(g.flatten().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.source, GradientSource::true_backward);
}

TEST(Backward, HeadGradientIsOuterProduct) {
  const Network net = init_network(small_config());
  Engine rng(8);
  const auto fr = net.forward(random_vec(4, rng));
  const Vec r = random_vec(3, rng);
  const auto g = net.backward(fr.cache, r);
  for (Eigen::Index c = 0; c < 3; ++c) {
    for (Eigen::Index j = 0; j < 8; ++j) EXPECT_EQ(g.head_grad(c, j), r[c] * fr.llh[j]);
    EXPECT_EQ(g.head_grad(c, 8), r[c]);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  Engine rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    NetworkConfig cfg;
    cfg.input_dim = 3 + trial % 3;
    cfg.hidden_widths = trial % 2 ? std::vector<Eigen::Index>{6, 5} : std::vector<Eigen::Index>{7};
    cfg.output_dim = 1 + trial % 4;
    cfg.seed = static_cast<std::uint64_t>(trial);
    Network net = init_network(cfg);
    net.set_parameters(random_vec(net.parameter_count(), rng, 0.7));
    const bool ce = trial % 2 == 0 && cfg.output_dim > 1;
    const LossSpec spec{ce ? LossKind::cross_entropy : LossKind::squared_vector, ce ? 0.05 : 0.0};
    const Vec x = random_vec(cfg.input_dim, rng);
    const Vec y = ce ? Vec::Constant(1, static_cast<double>(trial % cfg.output_dim)) : random_vec(cfg.output_dim, rng);
    const auto fr = net.forward(x);
    const Vec g = net.backward(fr.cache, loss_and_residual(fr.output, y, spec).residual).flatten();
    const Vec theta = net.parameters();
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Vec tp = theta, tm = theta;
      tp[k] += 1e-5;
      tm[k] -= 1e-5;
      const double fd = (loss_at(net, tp, x, y, spec) - loss_at(net, tm, x, y, spec)) / 2e-5;
      worst = std::max(worst, std::fabs(g[k] - fd) / std::max({std::fabs(g[k]), std::fabs(fd), 1e-4}));
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Backward, RejectsStaleCache) {
  Network net = init_network(small_config());
  const auto fr = net.forward(Vec::Ones(4));
  net.set_parameters(net.parameters());
  expect_error(ErrorKind::stale_cache, [&] { net.backward(fr.cache, Vec::Ones(3)); });
}

TEST(Checkpoint, RoundTripIsBitExact) {
  NetworkConfig cfg = small_config(3);
  cfg.hidden_widths = {5, 4};
  cfg.activation = Activation::relu;
  Network net = init_network(cfg);
  Engine rng(10);
  net.set_parameters(random_vec(net.parameter_count(), rng));
  const auto path = (std::filesystem::temp_directory_path() / "pgd_net_roundtrip.bin").string();
  net.save(path);
  const Network back = Network::load(path);
  EXPECT_TRUE(bit_equal(back.parameters(), net.parameters()));
  EXPECT_EQ(back.config().activation, Activation::relu);
  EXPECT_EQ(back.config().hidden_widths, cfg.hidden_widths);
  EXPECT_EQ(back.version(), net.version());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  BinaryWriter w;
  w.str("NOTANET");
  BinaryReader r(w.bytes());
  expect_error(ErrorKind::format, [&] { Network::read(r); });
}

TEST(LinearModel, GradientMatchesFiniteDifferences) {
  LinearModel m(3, 2);
  Engine rng(11);
  m.set_parameters(random_vec(m.parameter_count(), rng));
  const Vec x = random_vec(3, rng), y = random_vec(2, rng);
  const LossSpec spec{LossKind::squared_vector, 0.0};
  const auto fr = m.forward(x);
  const Vec g = m.backward(fr.cache, loss_and_residual(fr.output, y, spec).residual).flatten();
  const Vec theta = m.parameters();
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    LinearModel a = m, b = m;
    Vec tp = theta, tm = theta;
    tp[k] += 1e-5;
    tm[k] -= 1e-5;
    a.set_parameters(tp);
    b.set_parameters(tm);
    const double fd = (loss_and_residual(a.forward(x).output, y, spec).loss -
                       loss_and_residual(b.forward(x).output, y, spec).loss) / 2e-5;
    EXPECT_NEAR(g[k], fd, 1e-8 * std::max(1.0, std::fabs(fd)));
  }
}
