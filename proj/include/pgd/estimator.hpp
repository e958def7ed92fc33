#pragma once

// Control-variate debiased gradient combination and the alignment statistics
// that govern its variance.
//
//   G = f g_c + (1 - f) (h_p - (h_c - g_c))  =  g_c + (1 - f)(h_p - h_c)
//
// where g_c / h_c are the true / predicted means over the control micro-batch
// and h_p the predicted mean over the prediction micro-batch. With
// independent micro-batches E[G] = E[g] and
//
//   E||G - mu||^2 = (sigma_g^2 + (1-f) sigma_h^2 - 2 (1-f) tau) / (f m).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"
#include "pgd/log.hpp"
#include "pgd/rng.hpp"

namespace pgd {

struct BatchSplit {
  std::vector<std::size_t> control;     // positions within the mini-batch
  std::vector<std::size_t> prediction;
  double f = 1.0;
  std::size_t m = 0;
  bool rounded = false;  // f * m was not a whole number
};

/// Control micro-batch size round(f m).
inline std::size_t control_size(std::size_t m, double f) {
  require(f > 0.0 && f <= 1.0, ErrorKind::domain, "control fraction f must lie in (0, 1]");
  return static_cast<std::size_t>(std::llround(f * static_cast<double>(m)));
}

/// Uniformly random disjoint split of positions 0..m-1 into a control part of
/// size round(f m) and a prediction part with the rest.
inline BatchSplit split_minibatch(std::size_t m, double f, Engine& rng) {
  const std::size_t mc = control_size(m, f);
  if (mc == 0)
    fail(ErrorKind::control_batch_empty, "round(f*m) = 0 for f = " + std::to_string(f) +
                                             ", m = " + std::to_string(m));
  BatchSplit s;
  s.f = f;
  s.m = m;
  const double exact = f * static_cast<double>(m);
  s.rounded = std::fabs(exact - static_cast<double>(mc)) > 1e-9;
  if (s.rounded)
    log::warn_once("f*m = " + std::to_string(exact) + " is fractional; control micro-batch size rounded to " +
                   std::to_string(mc));
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  s.control.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(mc));
  s.prediction.assign(perm.begin() + static_cast<std::ptrdiff_t>(mc), perm.end());
  std::sort(s.control.begin(), s.control.end());
  std::sort(s.prediction.begin(), s.prediction.end());
  return s;
}

/// f g_c_true + (1 - f)(g_pred - (g_c_pred - g_c_true)); f = 1 returns g_c_true.
inline Vec combine_debiased(const Vec& g_c_true, const Vec& g_c_pred, const Vec& g_pred, double f) {
  require(g_c_true.size() == g_c_pred.size() && g_c_true.size() == g_pred.size(),
          ErrorKind::dimension, "combine_debiased: dimension mismatch");
  require(f > 0.0 && f <= 1.0, ErrorKind::domain, "combine_debiased: f must lie in (0, 1]");
  if (f == 1.0) return g_c_true;
  return f * g_c_true + (1.0 - f) * (g_pred - (g_c_pred - g_c_true));
}

struct AlignmentStats {
  double sigma_g = 0.0;
  double sigma_h = 0.0;
  double tau = 0.0;
  double rho = 0.0;
  double kappa = 0.0;
  std::size_t n = 0;
  Vec mu;
  Vec mu_h;
  bool degenerate = false;  // sigma_g == 0 or sigma_h == 0
};

/// Population moments (divide by n) of paired true/predicted gradients.
inline AlignmentStats alignment_stats(const std::vector<Vec>& g, const std::vector<Vec>& h) {
  require(g.size() == h.size(), ErrorKind::dimension, "alignment_stats: unequal pair counts");
  const std::size_t n = g.size();
  if (n < 2) fail(ErrorKind::insufficient_data, "alignment_stats: need at least 2 pairs");
  const auto dim = g.front().size();
  AlignmentStats s;
  s.n = n;
  s.mu = Vec::Zero(dim);
  s.mu_h = Vec::Zero(dim);
  for (std::size_t i = 0; i < n; ++i) {
    require(g[i].size() == dim && h[i].size() == dim, ErrorKind::dimension,
            "alignment_stats: inconsistent vector dimensions");
    s.mu += g[i];
    s.mu_h += h[i];
  }
  s.mu /= static_cast<double>(n);
  s.mu_h /= static_cast<double>(n);
  double sg2 = 0.0, sh2 = 0.0, tau = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec u = g[i] - s.mu;
    const Vec v = h[i] - s.mu_h;
    sg2 += u.squaredNorm();
    sh2 += v.squaredNorm();
    tau += u.dot(v);
  }
  sg2 /= static_cast<double>(n);
  sh2 /= static_cast<double>(n);
  tau /= static_cast<double>(n);
  s.sigma_g = std::sqrt(sg2);
  s.sigma_h = std::sqrt(sh2);
  s.tau = tau;
  if (s.sigma_g > 0.0 && s.sigma_h > 0.0) {
    s.rho = std::clamp(tau / (s.sigma_g * s.sigma_h), -1.0, 1.0);
    s.kappa = s.sigma_h / s.sigma_g;
  } else {
    s.degenerate = true;
    s.rho = 0.0;
    s.kappa = s.sigma_g > 0.0 ? s.sigma_h / s.sigma_g : 0.0;
  }
  return s;
}

inline AlignmentStats alignment_stats(const std::vector<std::pair<Vec, Vec>>& pairs) {
  std::vector<Vec> g, h;
  g.reserve(pairs.size());
  h.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    g.push_back(a);
    h.push_back(b);
  }
  return alignment_stats(g, h);
}

/// Variance inflation phi = V2 / V1 = (1 + (1-f) k^2 - 2 (1-f) rho k) / f.
inline double variance_inflation(double f, double rho, double kappa) {
  if (!(f > 0.0 && f <= 1.0)) fail(ErrorKind::domain, "variance_inflation: f must lie in (0, 1]");
  return (1.0 + (1.0 - f) * kappa * kappa - 2.0 * (1.0 - f) * rho * kappa) / f;
}

/// E||G - mu||^2 from raw moments.
inline double v2_exact(double sigma_g, double sigma_h, double tau, double f, std::size_t m) {
  if (!(f > 0.0 && f < 1.0)) fail(ErrorKind::domain, "v2_exact: f must lie in (0, 1)");
  require(m >= 2, ErrorKind::domain, "v2_exact: m must be >= 2");
  if (!(sigma_g > 0.0)) fail(ErrorKind::degenerate_stats, "v2_exact: sigma_g must be positive");
  return (sigma_g * sigma_g + (1.0 - f) * sigma_h * sigma_h - 2.0 * (1.0 - f) * tau) /
         (f * static_cast<double>(m));
}

inline double v2_exact(const AlignmentStats& s, double f, std::size_t m) {
  if (s.degenerate && !(s.sigma_g > 0.0))
    fail(ErrorKind::degenerate_stats, "v2_exact: degenerate alignment statistics");
  return v2_exact(s.sigma_g, s.sigma_h, s.tau, f, m);
}

/// The (rho, kappa) form: (sigma_g^2 / m) * phi(f, rho, kappa).
inline double v2_from_alignment(double sigma_g, double rho, double kappa, double f, std::size_t m) {
  return sigma_g * sigma_g / static_cast<double>(m) * variance_inflation(f, rho, kappa);
}

}  // namespace pgd
