#pragma once

// Constructions with known answers, shared by the unit tests and the
// acceptance binary.

#include <random>
#include <vector>

#include "pgd/pgd.hpp"

namespace pgd::fixtures {

inline Vec gaussian(Eigen::Index n, Engine& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix gaussian(Eigen::Index r, Eigen::Index c, Engine& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

// Scalar-output network with one square identity-activation hidden layer.
// x = W1^{-1}(llh - b1), so the trunk gradient r (w_a x^T, w_a) is an exact
// fixed linear map of the head gradient r [llh; 1].
inline Network deep_linear_net(std::uint64_t seed, Eigen::Index d = 4) {
  NetworkConfig cfg;
  cfg.input_dim = d;
  cfg.hidden_widths = {d};
  cfg.output_dim = 1;
  cfg.activation = Activation::identity;
  cfg.seed = seed;
  Network net = init_network(cfg);
  Engine rng = substream(seed, "fixture");
  Vec theta = gaussian(net.parameter_count(), rng, 0.6);
  net.set_parameters(theta);
  return net;
}

struct ExampleGradient {
  Vec llh;
  Vec residual;
  GradientEstimate grad;
};

inline ExampleGradient example_gradient(const Network& net, const Vec& x, const Vec& y, const LossSpec& loss) {
  const auto fr = net.forward(x);
  const auto lr = loss_and_residual(fr.output, y, loss);
  return {fr.llh, lr.residual, net.backward(fr.cache, lr.residual)};
}

inline std::vector<FitSample> deep_linear_samples(const Network& net, std::size_t n, Engine& rng) {
  std::vector<FitSample> out;
  const LossSpec loss{LossKind::squared_vector, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    auto eg = example_gradient(net, gaussian(net.input_dim(), rng), gaussian(1, rng), loss);
    out.push_back(make_fit_sample(net.head_weight(), eg.llh, eg.residual, eg.grad.trunk_grad));
  }
  return out;
}

// trunk_grad = U* c with c_i = h^T S*_i [llh; 1] and h = W^T r.
struct PlantedModel {
  Matrix u;               // P_T x r, orthonormal columns
  std::vector<Matrix> s;  // r matrices, D x (D+1)
  Matrix head;            // C x D

  PlantedModel(Eigen::Index pt, Eigen::Index d, Eigen::Index c, Eigen::Index r, Engine& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(pt, r, rng));
    u = Matrix(qr.householderQ() * Eigen::MatrixXd::Identity(pt, r));
    for (Eigen::Index i = 0; i < r; ++i) s.push_back(gaussian(d, d + 1, rng));
    head = gaussian(c, d, rng);
  }

  Vec trunk(const Vec& llh, const Vec& residual) const {
    const Vec h = head.transpose() * residual;
    const Vec z = augment(llh);
    Vec c(u.cols());
    for (Eigen::Index i = 0; i < u.cols(); ++i) c[i] = h.dot(s[static_cast<std::size_t>(i)] * z);
    return u * c;
  }

  FitSample sample(Engine& rng) const {
    const Vec llh = gaussian(head.cols(), rng);
    const Vec r = gaussian(head.rows(), rng);
    return make_fit_sample(head, llh, r, trunk(llh, r));
  }
};

// Noise-free linear regression targets y = a . x + c for the convex test bed.
inline Dataset linear_task(std::size_t n, Eigen::Index d, std::uint64_t seed, double val_fraction = 0.0) {
  Engine rng = substream(seed, "data");
  const Vec a = gaussian(d, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double c = normal(rng);
  Dataset data;
  data.kind = TaskKind::regression;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec x = gaussian(d, rng);
    data.features.push_back(x);
    data.targets.push_back(Vec::Constant(1, a.dot(x) + c));
  }
  split_tail(data, val_fraction);
  return data;
}

// Minimizer of mean_i 1/2 (theta . phi_i - y_i)^2 + lambda/2 ||theta||^2 for
// LinearModel, phi = [x; x; 1] in its parameter order (T, W_a, b).
inline Vec linear_model_optimum(const Dataset& data, double lambda) {
  const auto d = data.input_dim();
  const auto n = static_cast<Eigen::Index>(data.train.size());
  Matrix phi(n, 2 * d + 1);
  Matrix y(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec& x = data.features[data.train[static_cast<std::size_t>(i)]];
    phi.row(i) << x.transpose(), x.transpose(), 1.0;
    y(i, 0) = data.targets[data.train[static_cast<std::size_t>(i)]][0];
  }
  // scale so the ridge objective matches the mean loss
  return solve_ridge(phi, y, lambda * static_cast<double>(n)).col(0);
}

}  // namespace pgd::fixtures
