#pragma once

// Multilayer perceptron with an explicit trunk/head split.
//
// Trunk: hidden layers 1..L, each pre = W x + b followed by the activation.
// Head: the final linear layer f(x) = W_a a(x) + bias, C x D, where a(x) is
// the last hidden activation (llh).
//
// Flattened parameter order (used by parameters(), gradients and
// checkpoints): for every hidden layer in order, W row-major (out x in)
// then b; after the trunk, the head rows c = 0..C-1 as [W_a[c, :], bias[c]].
// The head block therefore has the same layout as GradientEstimate::head_grad.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/model.hpp"
#include "pgd/rng.hpp"
#include "pgd/serialize.hpp"

namespace pgd {

enum class Activation { tanh, relu, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  fail(ErrorKind::config, "unknown activation '" + s + "'");
}

struct NetworkConfig {
  Eigen::Index input_dim = 1;
  std::vector<Eigen::Index> hidden_widths{8};
  Eigen::Index output_dim = 1;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;

  void validate() const {
    require(input_dim >= 1, ErrorKind::config, "input_dim must be >= 1");
    require(output_dim >= 1, ErrorKind::config, "output_dim must be >= 1");
    require(!hidden_widths.empty(), ErrorKind::config,
            "hidden_widths must be non-empty (the trunk must exist)");
    for (auto w : hidden_widths)
      require(w >= 1, ErrorKind::config, "hidden widths must be >= 1");
  }
};

namespace detail {

template <class Derived>
auto activate(const Eigen::MatrixBase<Derived>& pre, Activation act) {
  using V = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>;
  switch (act) {
    case Activation::tanh: return V(pre.array().tanh());
    case Activation::relu: return V(pre.array().max(typename Derived::Scalar(0)));
    case Activation::identity: break;
  }
  return V(pre);
}

// Derivative of the activation at `pre`, given the activation value `out`.
inline Vec activation_slope(const Vec& pre, const Vec& out, Activation act) {
  switch (act) {
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::identity: break;
  }
  return Vec::Ones(pre.size());
}

}  // namespace detail

class Network {
 public:
  /// Zero-initialized network. Use init_network for random weights.
  explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Eigen::Index in = cfg_.input_dim;
    Eigen::Index offset = 0;
    for (auto out : cfg_.hidden_widths) {
      layers_.push_back({in, out, offset});
      offset += out * in + out;
      in = out;
    }
    trunk_ = Vec::Zero(offset);
    head_w_ = Matrix::Zero(cfg_.output_dim, in);
    head_b_ = Vec::Zero(cfg_.output_dim);
  }

  const NetworkConfig& config() const { return cfg_; }
  Eigen::Index input_dim() const { return cfg_.input_dim; }
  Eigen::Index hidden_dim() const { return head_w_.cols(); }
  Eigen::Index output_dim() const { return cfg_.output_dim; }
  Eigen::Index trunk_size() const { return trunk_.size(); }
  Eigen::Index head_size() const { return head_w_.size() + head_b_.size(); }
  Eigen::Index parameter_count() const { return trunk_size() + head_size(); }
  std::uint64_t version() const { return version_; }

  const Vec& trunk() const { return trunk_; }
  const Matrix& head_weight() const { return head_w_; }
  const Vec& head_bias() const { return head_b_; }

  Vec parameters() const {
    Vec theta(parameter_count());
    theta.head(trunk_size()) = trunk_;
    Eigen::Index k = trunk_size();
    for (Eigen::Index c = 0; c < output_dim(); ++c) {
      theta.segment(k, hidden_dim()) = head_w_.row(c).transpose();
      k += hidden_dim();
      theta[k++] = head_b_[c];
    }
    return theta;
  }

  void set_parameters(const Vec& theta) {
    require(theta.size() == parameter_count(), ErrorKind::dimension,
            "set_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                std::to_string(theta.size()));
    trunk_ = theta.head(trunk_size());
    Eigen::Index k = trunk_size();
    for (Eigen::Index c = 0; c < output_dim(); ++c) {
      head_w_.row(c) = theta.segment(k, hidden_dim()).transpose();
      k += hidden_dim();
      head_b_[c] = theta[k++];
    }
    ++version_;
  }

  void set_head(const Matrix& w, const Vec& b) {
    require(w.rows() == head_w_.rows() && w.cols() == head_w_.cols() && b.size() == head_b_.size(),
            ErrorKind::dimension, "set_head: shape mismatch");
    head_w_ = w;
    head_b_ = b;
    ++version_;
  }

  /// Weight matrix and bias of hidden layer `l`.
  Matrix layer_weight(std::size_t l) const {
    const auto& s = layers_.at(l);
    return Eigen::Map<const Matrix>(trunk_.data() + s.offset, s.out, s.in);
  }
  Vec layer_bias(std::size_t l) const {
    const auto& s = layers_.at(l);
    return trunk_.segment(s.offset + s.out * s.in, s.out);
  }
  std::size_t layer_count() const { return layers_.size(); }

  /// Full back-propagable pass.
  ForwardResult forward(const Vec& x) const {
    ForwardResult r;
    propagate<double>(x, &r.cache, r.llh, r.output);
    r.cache.llh = r.llh;
    r.cache.version = version_;
    return r;
  }

  /// Activations-only pass. With reduce_precision the arithmetic runs in
  /// single precision and is widened on return; without it the result is
  /// bit-identical to forward().
  CheapForwardResult cheap_forward(const Vec& x, bool reduce_precision = false) const {
    CheapForwardResult r;
    if (reduce_precision)
      propagate<float>(x, nullptr, r.llh, r.output);
    else
      propagate<double>(x, nullptr, r.llh, r.output);
    return r;
  }

  /// Exact loss gradient given dLoss/dOutput (the residual).
  GradientEstimate backward(const ForwardCache& cache, const Vec& residual) const {
    if (cache.version != version_)
      fail(ErrorKind::stale_cache, "backward: cache from parameter version " +
                                       std::to_string(cache.version) + ", network is at " +
                                       std::to_string(version_));
    require(cache.pre.size() == layers_.size() && cache.inputs.size() == layers_.size(),
            ErrorKind::dimension, "backward: cache layer count does not match network");
    require(residual.size() == output_dim(), ErrorKind::dimension,
            "backward: residual has dim " + std::to_string(residual.size()));

    GradientEstimate g;
    g.source = GradientSource::true_backward;
    g.head_grad = head_gradient(residual, cache.llh);
    g.trunk_grad = Vec::Zero(trunk_size());

    Vec delta = head_w_.transpose() * residual;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& s = layers_[l];
      const Vec& out = (l + 1 < layers_.size()) ? cache.inputs[l + 1] : cache.llh;
      const Vec dpre = delta.cwiseProduct(detail::activation_slope(cache.pre[l], out, cfg_.activation));
      Eigen::Map<Matrix> gw(g.trunk_grad.data() + s.offset, s.out, s.in);
      gw.noalias() = dpre * cache.inputs[l].transpose();
      g.trunk_grad.segment(s.offset + s.out * s.in, s.out) = dpre;
      if (l > 0) {
        Eigen::Map<const Matrix> w(trunk_.data() + s.offset, s.out, s.in);
        delta = w.transpose() * dpre;
      }
    }
    return g;
  }

  void write(BinaryWriter& w) const {
    w.str("PGDNET");
    w.u64(1);  // format version
    w.u64(static_cast<std::uint64_t>(cfg_.input_dim));
    w.u64(cfg_.hidden_widths.size());
    for (auto h : cfg_.hidden_widths) w.u64(static_cast<std::uint64_t>(h));
    w.u64(static_cast<std::uint64_t>(cfg_.output_dim));
    w.str(to_string(cfg_.activation));
    w.u64(cfg_.seed);
    w.u64(version_);
    w.vec(parameters());
  }

  static Network read(BinaryReader& r) {
    r.expect("PGDNET");
    const auto fmt = r.u64();
    require(fmt == 1, ErrorKind::format, "network checkpoint: unsupported format " + std::to_string(fmt));
    NetworkConfig cfg;
    cfg.input_dim = static_cast<Eigen::Index>(r.u64());
    const auto nh = r.u64();
    require(nh <= 1024, ErrorKind::format, "network checkpoint: implausible layer count");
    cfg.hidden_widths.assign(nh, 0);
    for (auto& h : cfg.hidden_widths) h = static_cast<Eigen::Index>(r.u64());
    cfg.output_dim = static_cast<Eigen::Index>(r.u64());
    cfg.activation = parse_activation(r.str());
    cfg.seed = r.u64();
    const auto version = r.u64();
    Network net(cfg);
    net.set_parameters(r.vec());
    net.version_ = version;
    return net;
  }

  void save(const std::string& path) const {
    BinaryWriter w;
    write(w);
    w.save(path);
  }
  static Network load(const std::string& path) {
    auto r = BinaryReader::from_file(path);
    return read(r);
  }

 private:
  struct LayerShape {
    Eigen::Index in, out, offset;
  };

  template <class Scalar>
  void propagate(const Vec& x, ForwardCache* cache, Vec& llh, Vec& output) const {
    using V = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    require(x.size() == input_dim(), ErrorKind::dimension,
            "forward: input has dim " + std::to_string(x.size()) + ", expected " +
                std::to_string(input_dim()));
    V a = x.template cast<Scalar>();
    for (const auto& s : layers_) {
      Eigen::Map<const Matrix> w(trunk_.data() + s.offset, s.out, s.in);
      const auto b = trunk_.segment(s.offset + s.out * s.in, s.out);
      const V pre = w.template cast<Scalar>() * a + b.template cast<Scalar>();
      if (cache) {
        cache->inputs.push_back(a.template cast<double>());
        cache->pre.push_back(pre.template cast<double>());
      }
      a = detail::activate(pre, cfg_.activation);
    }
    llh = a.template cast<double>();
    output = (head_w_.template cast<Scalar>() * a + head_b_.template cast<Scalar>()).template cast<double>();
  }

  NetworkConfig cfg_;
  std::vector<LayerShape> layers_;
  Vec trunk_;
  Matrix head_w_;
  Vec head_b_;
  std::uint64_t version_ = 0;
};

/// Random initialization: every weight ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero. Deterministic in cfg.seed.
inline Network init_network(const NetworkConfig& cfg) {
  Network net(cfg);
  Engine rng = substream(cfg.seed, "init");
  Vec theta = Vec::Zero(net.parameter_count());
  Eigen::Index k = 0;
  Eigen::Index fan_in = cfg.input_dim;
  auto fill = [&](Eigen::Index out, Eigen::Index in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(in)),
                                             1.0 / std::sqrt(static_cast<double>(in)));
    for (Eigen::Index i = 0; i < out * in; ++i) theta[k++] = u(rng);
  };
  for (auto out : cfg.hidden_widths) {
    fill(out, fan_in);
    k += out;  // biases stay zero
    fan_in = out;
  }
  for (Eigen::Index c = 0; c < cfg.output_dim; ++c) {
    fill(1, fan_in);
    ++k;
  }
  net.set_parameters(theta);
  return net;
}

}  // namespace pgd
