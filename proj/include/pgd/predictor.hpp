#pragma once

// Linear gradient predictors built on the low-rank structure of per-example
// trunk gradients.
//
// Both predictors reproduce the head gradient exactly from its closed form
// residual (x) [a(x); 1] and only learn the trunk part:
//
//   scalar output      trunk ~= M [a; 1] r                 M: P_T x (D+1)
//   vector / classes   trunk ~= U c~,  c~_i = h^T S_i [a; 1],
//                      h = W_a^T r,    U: P_T x r orthonormal, S_i: D x (D+1)
//
// Both are fit by ridge least squares on FitSamples gathered from examples
// where the true trunk gradient is known.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/model.hpp"
#include "pgd/serialize.hpp"

namespace pgd {

/// Residuals at or below this magnitude carry no information about M.
inline constexpr double kResidualFloor = 1e-8;

struct FitSample {
  Vec llh;         // D
  Vec residual;    // C
  Vec h;           // D, W_a^T residual
  Vec trunk_grad;  // P_T, from a true backward pass
};

inline FitSample make_fit_sample(const Matrix& head_weight, const Vec& llh, const Vec& residual,
                                 Vec trunk_grad) {
  require(head_weight.rows() == residual.size() && head_weight.cols() == llh.size(),
          ErrorKind::dimension, "fit sample: head weight does not match llh/residual");
  return FitSample{llh, residual, head_weight.transpose() * residual, std::move(trunk_grad)};
}

struct ScalarPredictor {
  Matrix m;  // P_T x (D+1)
};

struct StructuredPredictor {
  Matrix u;               // P_T x r
  std::vector<Matrix> s;  // r matrices, each D x (D+1)

  Eigen::Index rank() const { return u.cols(); }
};

/// Predicts a zero trunk gradient (head still exact). Used before the first fit.
struct ZeroPredictor {
  Eigen::Index trunk_size = 0;
};

using GradientPredictor = std::variant<ZeroPredictor, ScalarPredictor, StructuredPredictor>;

enum class PredictorKind { automatic, scalar, structured };

inline PredictorKind parse_predictor_kind(const std::string& s) {
  if (s == "auto") return PredictorKind::automatic;
  if (s == "scalar") return PredictorKind::scalar;
  if (s == "structured") return PredictorKind::structured;
  fail(ErrorKind::config, "unknown predictor kind '" + s + "'");
}

inline std::string to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::automatic: return "auto";
    case PredictorKind::scalar: return "scalar";
    case PredictorKind::structured: return "structured";
  }
  return "?";
}

struct RefitPolicy {
  std::int64_t period = 50;              // optimizer steps between refits
  std::int64_t buffer_capacity = 256;    // retained FitSamples
  double ridge_lambda = -1.0;            // < 0 selects the data-driven default
  Eigen::Index rank = 0;                 // 0 selects by singular mass
  double rank_mass = 0.99;
  PredictorKind kind = PredictorKind::automatic;

  void validate(Eigen::Index hidden_dim) const {
    require(period >= 1, ErrorKind::config, "refit period must be >= 1");
    require(buffer_capacity >= hidden_dim + 1, ErrorKind::config,
            "refit buffer capacity must be >= D+1 = " + std::to_string(hidden_dim + 1));
    require(rank >= 0, ErrorKind::config, "rank must be >= 0");
    require(rank_mass > 0.0 && rank_mass <= 1.0, ErrorKind::config, "rank_mass must lie in (0, 1]");
  }
};

struct FitMetadata {
  std::int64_t step = 0;
  std::int64_t samples = 0;
  double lambda = 0.0;
  Eigen::Index rank = 0;
  double captured_mass = 0.0;
};

inline bool should_refit(const RefitPolicy& policy, std::int64_t step) {
  return step > 0 && step % policy.period == 0;
}

/// 1e-6 times the mean squared row norm of the feature matrix.
inline double default_ridge_lambda(const Matrix& features) {
  if (features.rows() == 0) return 0.0;
  return 1e-6 * features.rowwise().squaredNorm().mean();
}

/// Smallest r whose leading singular values hold `mass` of the total squared
/// singular mass, capped at `cap`.
inline Eigen::Index select_rank(const Vec& singulars, double mass, Eigen::Index cap) {
  const double total = singulars.squaredNorm();
  const Eigen::Index limit = std::max<Eigen::Index>(1, std::min(cap, singulars.size()));
  if (total <= 0.0) return 1;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < limit; ++i) {
    acc += singulars[i] * singulars[i];
    if (acc >= mass * total) return i + 1;
  }
  return limit;
}

// ---------------------------------------------------------------------------
// Scalar-output predictor

namespace detail {
inline Matrix scalar_features(const std::vector<const FitSample*>& used) {
  const auto d1 = used.front()->llh.size() + 1;
  Matrix phi(static_cast<Eigen::Index>(used.size()), d1);
  for (std::size_t i = 0; i < used.size(); ++i)
    phi.row(static_cast<Eigen::Index>(i)) = (augment(used[i]->llh) * used[i]->residual[0]).transpose();
  return phi;
}
}  // namespace detail

/// Least squares M for trunk_grad ~= M [llh; 1] r over samples with
/// |r| > kResidualFloor. lambda < 0 selects default_ridge_lambda.
inline ScalarPredictor fit_scalar(const std::vector<FitSample>& samples, double lambda,
                                  FitMetadata* meta = nullptr) {
  std::vector<const FitSample*> used;
  for (const auto& s : samples) {
    require(s.residual.size() == 1, ErrorKind::dimension,
            "fit_scalar: scalar predictor needs a single-output network");
    if (std::fabs(s.residual[0]) > kResidualFloor) used.push_back(&s);
  }
  if (used.empty())
    fail(ErrorKind::insufficient_data, "fit_scalar: no samples with nonzero residual");
  const auto d1 = used.front()->llh.size() + 1;
  const auto pt = used.front()->trunk_grad.size();
  if (static_cast<Eigen::Index>(used.size()) < d1)
    fail(ErrorKind::insufficient_data, "fit_scalar: " + std::to_string(used.size()) +
                                           " usable samples, need at least D+1 = " +
                                           std::to_string(d1));
  Matrix targets(static_cast<Eigen::Index>(used.size()), pt);
  for (std::size_t i = 0; i < used.size(); ++i) {
    require(used[i]->llh.size() + 1 == d1 && used[i]->trunk_grad.size() == pt,
            ErrorKind::dimension, "fit_scalar: inconsistent sample dimensions");
    targets.row(static_cast<Eigen::Index>(i)) = used[i]->trunk_grad.transpose();
  }
  const Matrix phi = detail::scalar_features(used);
  if (lambda < 0.0) lambda = default_ridge_lambda(phi);
  ScalarPredictor p;
  p.m = solve_ridge(phi, targets, lambda).transpose();
  if (meta) {
    meta->samples = static_cast<std::int64_t>(used.size());
    meta->lambda = lambda;
    meta->rank = 0;
    meta->captured_mass = 0.0;
  }
  return p;
}

inline GradientEstimate predict_scalar_residual(const ScalarPredictor& p, const Vec& llh,
                                                double residual) {
  require(p.m.cols() == llh.size() + 1, ErrorKind::dimension,
          "predict_scalar: predictor expects D = " + std::to_string(p.m.cols() - 1) +
              ", got " + std::to_string(llh.size()));
  const Vec z = augment(llh);
  GradientEstimate g;
  g.source = GradientSource::predicted;
  g.head_grad = z.transpose() * residual;  // 1 x (D+1)
  g.trunk_grad = p.m * z * residual;
  return g;
}

/// Predicted gradient for a scalar-output network at output fx and target y.
inline GradientEstimate predict_scalar(const ScalarPredictor& p, const Vec& llh, double fx,
                                       double y) {
  return predict_scalar_residual(p, llh, fx - y);
}

// ---------------------------------------------------------------------------
// Structured (vector regression / classification) predictor

/// U from the top-r left singular vectors of the stacked trunk gradients;
/// each S_i by ridge regression of c_i = U^T trunk_grad against h (x) [llh; 1].
/// r == 0 selects the rank by singular mass (see select_rank), capped at D.
inline StructuredPredictor fit_structured(const std::vector<FitSample>& samples, Eigen::Index r,
                                          double lambda, FitMetadata* meta = nullptr,
                                          double rank_mass = 0.99) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n == 0) fail(ErrorKind::insufficient_data, "fit_structured: no samples");
  const auto d = samples.front().llh.size();
  const auto pt = samples.front().trunk_grad.size();
  if (n < d + 1)
    fail(ErrorKind::insufficient_data, "fit_structured: " + std::to_string(n) +
                                           " samples, need at least D+1 = " + std::to_string(d + 1));
  require(r >= 0, ErrorKind::dimension, "fit_structured: negative rank");
  if (r > std::min(n, pt))
    fail(ErrorKind::dimension, "fit_structured: rank " + std::to_string(r) +
                                   " exceeds min(samples, P_T) = " + std::to_string(std::min(n, pt)));

  Matrix grads(pt, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    require(s.llh.size() == d && s.h.size() == d && s.trunk_grad.size() == pt, ErrorKind::dimension,
            "fit_structured: inconsistent sample dimensions");
    grads.col(i) = s.trunk_grad;
  }

  const Eigen::Index full = std::min(n, pt);
  Eigen::Index rank = r;
  double captured = 0.0;
  SvdResult svd;
  if (rank == 0) {
    svd = truncated_svd(grads, full);
    rank = select_rank(svd.singulars, rank_mass, d);
  } else {
    svd = truncated_svd(grads, rank);
  }
  const double total = svd.singulars.squaredNorm();
  captured = total > 0.0 ? svd.singulars.head(rank).squaredNorm() / total : 1.0;

  StructuredPredictor p;
  p.u = svd.u.leftCols(rank);
  const Matrix coeffs = grads.transpose() * p.u;  // n x r

  const Eigen::Index nf = d * (d + 1);
  Matrix features(n, nf);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const Matrix outer = s.h * augment(s.llh).transpose();  // D x (D+1), row-major
    features.row(i) = Eigen::Map<const Vec>(outer.data(), nf).transpose();
  }
  if (lambda < 0.0) lambda = default_ridge_lambda(features);
  const Matrix x = solve_ridge(features, coeffs, lambda);  // nf x r
  p.s.reserve(static_cast<std::size_t>(rank));
  for (Eigen::Index i = 0; i < rank; ++i) {
    const Vec col = x.col(i);
    p.s.emplace_back(Eigen::Map<const Matrix>(col.data(), d, d + 1));
  }
  if (meta) {
    meta->samples = n;
    meta->lambda = lambda;
    meta->rank = rank;
    meta->captured_mass = captured;
  }
  return p;
}

inline GradientEstimate predict_structured(const StructuredPredictor& p, const Vec& llh,
                                           const Vec& residual, const Matrix& head_weight) {
  require(head_weight.rows() == residual.size() && head_weight.cols() == llh.size(),
          ErrorKind::dimension, "predict_structured: head weight shape mismatch");
  require(!p.s.empty() && p.s.front().rows() == llh.size() &&
              p.s.front().cols() == llh.size() + 1,
          ErrorKind::dimension, "predict_structured: predictor D does not match llh");
  const Vec z = augment(llh);
  const Vec h = head_weight.transpose() * residual;
  Vec c(p.rank());
  for (Eigen::Index i = 0; i < p.rank(); ++i)
    c[i] = h.dot(p.s[static_cast<std::size_t>(i)] * z);
  GradientEstimate g;
  g.source = GradientSource::predicted;
  g.trunk_grad = p.u * c;
  g.head_grad = residual * z.transpose();
  return g;
}

/// Dispatches on the predictor variant.
inline GradientEstimate predict(const GradientPredictor& pred, const Vec& llh, const Vec& residual,
                                const Matrix& head_weight) {
  return std::visit(
      [&](const auto& p) -> GradientEstimate {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ZeroPredictor>) {
          GradientEstimate g;
          g.source = GradientSource::predicted;
          g.trunk_grad = Vec::Zero(p.trunk_size);
          g.head_grad = residual * augment(llh).transpose();
          return g;
        } else if constexpr (std::is_same_v<T, ScalarPredictor>) {
          require(residual.size() == 1, ErrorKind::dimension,
                  "scalar predictor used with a multi-output residual");
          return predict_scalar_residual(p, llh, residual[0]);
        } else {
          return predict_structured(p, llh, residual, head_weight);
        }
      },
      pred);
}

inline Eigen::Index predictor_trunk_size(const GradientPredictor& pred) {
  return std::visit(
      [](const auto& p) -> Eigen::Index {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ZeroPredictor>) return p.trunk_size;
        else if constexpr (std::is_same_v<T, ScalarPredictor>) return p.m.rows();
        else return p.u.rows();
      },
      pred);
}

/// Fits the predictor family chosen by the policy (auto: scalar when C = 1).
inline GradientPredictor fit_predictor(const std::vector<FitSample>& samples,
                                       const RefitPolicy& policy, Eigen::Index output_dim,
                                       FitMetadata* meta = nullptr) {
  PredictorKind kind = policy.kind;
  if (kind == PredictorKind::automatic)
    kind = output_dim == 1 ? PredictorKind::scalar : PredictorKind::structured;
  if (kind == PredictorKind::scalar) return fit_scalar(samples, policy.ridge_lambda, meta);
  return fit_structured(samples, policy.rank, policy.ridge_lambda, meta, policy.rank_mass);
}

// ---------------------------------------------------------------------------
// Checkpoint section

inline void write_predictor(BinaryWriter& w, const GradientPredictor& pred, const FitMetadata& meta) {
  w.str("PGDPRED");
  w.u64(1);
  w.u64(pred.index());
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ZeroPredictor>) {
          w.u64(static_cast<std::uint64_t>(p.trunk_size));
        } else if constexpr (std::is_same_v<T, ScalarPredictor>) {
          w.matrix(p.m);
        } else {
          w.matrix(p.u);
          w.u64(p.s.size());
          for (const auto& s : p.s) w.matrix(s);
        }
      },
      pred);
  w.i64(meta.step);
  w.i64(meta.samples);
  w.f64(meta.lambda);
  w.u64(static_cast<std::uint64_t>(meta.rank));
  w.f64(meta.captured_mass);
}

inline GradientPredictor read_predictor(BinaryReader& r, FitMetadata* meta) {
  r.expect("PGDPRED");
  require(r.u64() == 1, ErrorKind::format, "predictor checkpoint: unsupported format");
  const auto index = r.u64();
  GradientPredictor pred;
  if (index == 0) {
    pred = ZeroPredictor{static_cast<Eigen::Index>(r.u64())};
  } else if (index == 1) {
    pred = ScalarPredictor{r.matrix()};
  } else if (index == 2) {
    StructuredPredictor p;
    p.u = r.matrix();
    const auto k = r.u64();
    require(k == static_cast<std::uint64_t>(p.u.cols()), ErrorKind::format,
            "predictor checkpoint: rank mismatch");
    for (std::uint64_t i = 0; i < k; ++i) p.s.push_back(r.matrix());
    pred = std::move(p);
  } else {
    fail(ErrorKind::format, "predictor checkpoint: unknown variant " + std::to_string(index));
  }
  FitMetadata m;
  m.step = r.i64();
  m.samples = r.i64();
  m.lambda = r.f64();
  m.rank = static_cast<Eigen::Index>(r.u64());
  m.captured_mass = r.f64();
  if (meta) *meta = m;
  return pred;
}

}  // namespace pgd
