#pragma once

// Types shared by every trainable model: the per-example forward cache, the
// gradient estimate with its trunk/head split, the losses with their
// residuals, and the TrainableModel concept the trainer is written against.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/serialize.hpp"

namespace pgd {

struct ForwardCache {
  std::vector<Vec> inputs;  // input to each trunk layer; inputs[0] is x
  std::vector<Vec> pre;     // pre-activation of each trunk layer
  Vec llh;                  // last hidden activations a(x)
  std::uint64_t version = 0;
};

struct ForwardResult {
  Vec llh;
  Vec output;
  ForwardCache cache;
};

struct CheapForwardResult {
  Vec llh;
  Vec output;
};

enum class GradientSource { true_backward, predicted };

struct GradientEstimate {
  Vec trunk_grad;     // P_T
  Matrix head_grad;   // C x (D+1), row c = residual_c * [a(x); 1]
  GradientSource source = GradientSource::true_backward;

  Eigen::Index size() const { return trunk_grad.size() + head_grad.size(); }

  /// Full parameter-order flattening: trunk, then the head rows [W_a | b].
  Vec flatten() const {
    Vec out(size());
    out.head(trunk_grad.size()) = trunk_grad;
    out.tail(head_grad.size()) = Eigen::Map<const Vec>(head_grad.data(), head_grad.size());
    return out;
  }
};

/// residual (x) [llh; 1], the closed-form head gradient.
inline Matrix head_gradient(const Vec& residual, const Vec& llh) {
  return residual * augment(llh).transpose();
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { squared_scalar, squared_vector, cross_entropy };

struct LossSpec {
  LossKind kind = LossKind::squared_vector;
  double smoothing = 0.0;

  bool classification() const { return kind == LossKind::cross_entropy; }
};

struct LossResult {
  double loss = 0.0;
  Vec residual;
};

/// Squared loss 0.5 ||f(x) - y||^2 with residual f(x) - y.
inline LossResult squared_loss(const Vec& output, const Vec& target) {
  require(output.size() == target.size(), ErrorKind::dimension,
          "squared loss: output dim " + std::to_string(output.size()) +
              " vs target dim " + std::to_string(target.size()));
  LossResult r;
  r.residual = output - target;
  r.loss = 0.5 * r.residual.squaredNorm();
  return r;
}

// std::exp rather than the vectorized Eigen exp, which returns denormals
// instead of zero for large negative arguments.
inline Vec exp_exact(const Vec& v) {
  return v.unaryExpr([](double x) { return std::exp(x); });
}

inline Vec softmax(const Vec& logits) {
  const Vec p = exp_exact(logits.array() - logits.maxCoeff());
  return p / p.sum();
}

/// Softmax cross entropy against (1 - smoothing) onehot(label) + smoothing / C.
/// The residual p - target is the gradient of the loss wrt the logits.
inline LossResult cross_entropy_loss(const Vec& logits, int label, double smoothing) {
  const auto c = logits.size();
  if (label < 0 || label >= c)
    fail(ErrorKind::label, "class index " + std::to_string(label) + " outside [0, " +
                               std::to_string(c) + ")");
  require(smoothing >= 0.0 && smoothing < 1.0, ErrorKind::domain,
          "label smoothing must lie in [0, 1)");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log(exp_exact(logits.array() - mx).sum());
  Vec target = Vec::Constant(c, smoothing / static_cast<double>(c));
  target[label] += 1.0 - smoothing;
  LossResult r;
  const Vec logp = logits.array() - lse;
  r.loss = 0.0;
  for (Eigen::Index i = 0; i < c; ++i)
    if (target[i] > 0.0) r.loss -= target[i] * logp[i];
  r.residual = exp_exact(logp) - target;
  return r;
}

/// Dispatches on the loss kind. For cross entropy, `target` holds the class
/// index in its single coordinate.
inline LossResult loss_and_residual(const Vec& output, const Vec& target, const LossSpec& spec) {
  if (spec.kind == LossKind::cross_entropy) {
    require(target.size() == 1, ErrorKind::label, "cross entropy expects a class index");
    const double idx = target[0];
    if (!(idx >= 0.0) || idx != std::floor(idx) || idx >= static_cast<double>(output.size()))
      fail(ErrorKind::label, "class index " + std::to_string(idx) + " out of range");
    return cross_entropy_loss(output, static_cast<int>(idx), spec.smoothing);
  }
  if (spec.kind == LossKind::squared_scalar)
    require(output.size() == 1, ErrorKind::dimension, "squared_scalar loss needs C = 1");
  return squared_loss(output, target);
}

// ---------------------------------------------------------------------------

/// What the trainer and predictor need from a model with a trunk/head split.
template <class M>
concept TrainableModel = requires(const M& cm, M& m, const Vec& x, const ForwardCache& cache,
                                  BinaryWriter& w) {
  { cm.input_dim() } -> std::convertible_to<Eigen::Index>;
  { cm.hidden_dim() } -> std::convertible_to<Eigen::Index>;
  { cm.output_dim() } -> std::convertible_to<Eigen::Index>;
  { cm.trunk_size() } -> std::convertible_to<Eigen::Index>;
  { cm.parameter_count() } -> std::convertible_to<Eigen::Index>;
  { cm.version() } -> std::convertible_to<std::uint64_t>;
  { cm.head_weight() } -> std::convertible_to<Matrix>;
  { cm.parameters() } -> std::convertible_to<Vec>;
  { m.set_parameters(x) };
  { cm.forward(x) } -> std::same_as<ForwardResult>;
  { cm.cheap_forward(x, true) } -> std::same_as<CheapForwardResult>;
  { cm.backward(cache, x) } -> std::same_as<GradientEstimate>;
  { cm.write(w) };
};

}  // namespace pgd
