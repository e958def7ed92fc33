#pragma once

#include <cstdint>
#include <string>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/model.hpp"
#include "pgd/serialize.hpp"

namespace pgd {

/// Linear-in-parameters model with a linear trunk branch:
///
///   f(x) = T x + W_a x + bias,   a(x) = x
///
/// T (C x d) is the trunk, (W_a, bias) the head. Under squared loss with a
/// weight-decay penalty the objective is strongly convex, and its minimizer
/// is a ridge solution over the stacked features [x; x; 1], which makes this
/// the convex test bed for the trainers. The trunk gradient r (x) x is an
/// exact linear function of the head gradient r (x) [x; 1].
///
/// Flattened order: T row-major, then head rows [W_a[c, :], bias[c]].
class LinearModel {
 public:
  LinearModel(Eigen::Index input_dim, Eigen::Index output_dim)
      : trunk_(Matrix::Zero(output_dim, input_dim)),
        head_w_(Matrix::Zero(output_dim, input_dim)),
        head_b_(Vec::Zero(output_dim)) {
    require(input_dim >= 1 && output_dim >= 1, ErrorKind::config,
            "LinearModel dimensions must be >= 1");
  }

  Eigen::Index input_dim() const { return trunk_.cols(); }
  Eigen::Index hidden_dim() const { return trunk_.cols(); }
  Eigen::Index output_dim() const { return trunk_.rows(); }
  Eigen::Index trunk_size() const { return trunk_.size(); }
  Eigen::Index parameter_count() const { return trunk_.size() + head_w_.size() + head_b_.size(); }
  std::uint64_t version() const { return version_; }
  const Matrix& head_weight() const { return head_w_; }
  const Vec& head_bias() const { return head_b_; }
  const Matrix& trunk_weight() const { return trunk_; }

  Vec parameters() const {
    Vec theta(parameter_count());
    theta.head(trunk_size()) = Eigen::Map<const Vec>(trunk_.data(), trunk_.size());
    Eigen::Index k = trunk_size();
    for (Eigen::Index c = 0; c < output_dim(); ++c) {
      theta.segment(k, input_dim()) = head_w_.row(c).transpose();
      k += input_dim();
      theta[k++] = head_b_[c];
    }
    return theta;
  }

  void set_parameters(const Vec& theta) {
    require(theta.size() == parameter_count(), ErrorKind::dimension,
            "set_parameters: expected " + std::to_string(parameter_count()) + " values");
    Eigen::Map<Vec>(trunk_.data(), trunk_.size()) = theta.head(trunk_size());
    Eigen::Index k = trunk_size();
    for (Eigen::Index c = 0; c < output_dim(); ++c) {
      head_w_.row(c) = theta.segment(k, input_dim()).transpose();
      k += input_dim();
      head_b_[c] = theta[k++];
    }
    ++version_;
  }

  ForwardResult forward(const Vec& x) const {
    check_input(x);
    ForwardResult r;
    r.llh = x;
    r.output = trunk_ * x + head_w_ * x + head_b_;
    r.cache.inputs = {x};
    r.cache.llh = x;
    r.cache.version = version_;
    return r;
  }

  CheapForwardResult cheap_forward(const Vec& x, bool reduce_precision = false) const {
    check_input(x);
    CheapForwardResult r;
    r.llh = x;
    if (reduce_precision) {
      const Eigen::VectorXf xf = x.cast<float>();
      r.output = (trunk_.cast<float>() * xf + head_w_.cast<float>() * xf + head_b_.cast<float>())
                     .cast<double>();
    } else {
      r.output = trunk_ * x + head_w_ * x + head_b_;
    }
    return r;
  }

  GradientEstimate backward(const ForwardCache& cache, const Vec& residual) const {
    if (cache.version != version_)
      fail(ErrorKind::stale_cache, "backward: stale cache");
    require(residual.size() == output_dim(), ErrorKind::dimension, "backward: residual dim");
    GradientEstimate g;
    const Matrix gt = residual * cache.llh.transpose();
    g.trunk_grad = Eigen::Map<const Vec>(gt.data(), gt.size());
    g.head_grad = head_gradient(residual, cache.llh);
    return g;
  }

  void write(BinaryWriter& w) const {
    w.str("PGDLIN");
    w.u64(1);
    w.u64(static_cast<std::uint64_t>(input_dim()));
    w.u64(static_cast<std::uint64_t>(output_dim()));
    w.u64(version_);
    w.vec(parameters());
  }

  static LinearModel read(BinaryReader& r) {
    r.expect("PGDLIN");
    require(r.u64() == 1, ErrorKind::format, "linear model checkpoint: unsupported format");
    const auto d = static_cast<Eigen::Index>(r.u64());
    const auto c = static_cast<Eigen::Index>(r.u64());
    const auto version = r.u64();
    LinearModel m(d, c);
    m.set_parameters(r.vec());
    m.version_ = version;
    return m;
  }

 private:
  void check_input(const Vec& x) const {
    require(x.size() == input_dim(), ErrorKind::dimension,
            "forward: input has dim " + std::to_string(x.size()));
  }

  Matrix trunk_;
  Matrix head_w_;
  Vec head_b_;
  std::uint64_t version_ = 0;
};

}  // namespace pgd
