#pragma once

// Compute model and break-even theory for predicted-gradient training, plus a
// Monte Carlo harness for the estimator's mean and variance.
//
// Costs are per example: Backward c_b, Forward c_f, CheapForward c_cf. With
//   A = c_cf / (c_f + c_b),  B = 1 - A
// the per-iteration compute ratio is gamma(f) = A + B f, and with
//   a = 1 + k^2 - 2 rho k,   b = 2 rho k - k^2   (so phi = a / f + b)
// the compute-normalized objective is
//   Q(f) = phi gamma = A a / f + B b f + (B a + A b).
// The defaults (2, 1, 0.7) give A = 0.7/3 and B = 2.3/3.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/estimator.hpp"
#include "pgd/linalg.hpp"
#include "pgd/rng.hpp"

namespace pgd {

struct CostModel {
  double backward = 2.0;
  double forward = 1.0;
  double cheap_forward = 0.7;

  void validate() const {
    require(backward > 0.0 && forward > 0.0 && cheap_forward > 0.0, ErrorKind::config,
            "cost model: all pass costs must be positive");
    require(cheap_forward <= forward + backward, ErrorKind::config,
            "cost model: cheap_forward must not exceed forward + backward");
  }

  double full() const { return forward + backward; }
  /// A = c_cf / (c_f + c_b).
  double cheap_share() const { return cheap_forward / full(); }
  /// B = 1 - A.
  double saved_share() const { return (full() - cheap_forward) / full(); }

  /// Cost of one vanilla iteration on a batch of m.
  double vanilla_batch(std::size_t m) const { return static_cast<double>(m) * full(); }
  /// Cost of one predicted iteration with m_c control and m_p prediction examples.
  double predicted_batch(std::size_t mc, std::size_t mp) const {
    return static_cast<double>(mc) * full() + static_cast<double>(mp) * cheap_forward;
  }
};

namespace detail {
inline void check_fraction_open(double f, const char* who) {
  if (!(f > 0.0 && f < 1.0)) fail(ErrorKind::domain, std::string(who) + ": f must lie in (0, 1)");
}
inline void check_fraction(double f, const char* who) {
  if (!(f > 0.0 && f <= 1.0)) fail(ErrorKind::domain, std::string(who) + ": f must lie in (0, 1]");
}
inline void check_kappa(double kappa, const char* who) {
  if (!(kappa > 0.0) || !std::isfinite(kappa))
    fail(ErrorKind::domain, std::string(who) + ": kappa must be positive");
}
inline void check_rho(double rho, const char* who) {
  if (!(rho >= -1.0 && rho <= 1.0)) fail(ErrorKind::domain, std::string(who) + ": rho must lie in [-1, 1]");
}
}  // namespace detail

/// Per-iteration cost of predicted training relative to vanilla.
inline double gamma(const CostModel& cm, double f) {
  detail::check_fraction(f, "gamma");
  return (cm.cheap_forward + (cm.full() - cm.cheap_forward) * f) / cm.full();
}

/// Minimum alignment at which predicted training breaks even with vanilla
/// SGD at a fixed f: kappa/2 + A / (2 kappa (A + B f)).
inline double rho_star(const CostModel& cm, double f, double kappa) {
  detail::check_fraction_open(f, "rho_star");
  detail::check_kappa(kappa, "rho_star");
  return kappa / 2.0 +
         cm.cheap_forward / (2.0 * kappa * (cm.cheap_forward + (cm.full() - cm.cheap_forward) * f));
}

/// phi(f, rho, kappa) * gamma(f) <= 1.
inline bool break_even_satisfied(const CostModel& cm, double f, double rho, double kappa) {
  detail::check_fraction_open(f, "break_even_satisfied");
  detail::check_kappa(kappa, "break_even_satisfied");
  detail::check_rho(rho, "break_even_satisfied");
  return variance_inflation(f, rho, kappa) * gamma(cm, f) <= 1.0;
}

/// Alignment above which the Q-optimal control fraction is below 1:
/// kappa/2 + A / (2 kappa (A + B)).
inline double rho_switch(const CostModel& cm, double kappa) {
  detail::check_kappa(kappa, "rho_switch");
  const double a = cm.cheap_share();
  const double b = cm.saved_share();
  return kappa / 2.0 + a / (2.0 * kappa * (a + b));
}

/// Q(f) = phi(f, rho, kappa) gamma(f).
inline double q_objective(const CostModel& cm, double f, double rho, double kappa) {
  detail::check_fraction(f, "q_objective");
  return variance_inflation(f, rho, kappa) * gamma(cm, f);
}

/// Q(f) written as A a / f + B b f + (B a + A b).
inline double q_decomposed(const CostModel& cm, double f, double rho, double kappa) {
  detail::check_fraction(f, "q_decomposed");
  const double ca = cm.cheap_share();
  const double cb = cm.saved_share();
  const double a = 1.0 + kappa * kappa - 2.0 * rho * kappa;
  const double b = 2.0 * rho * kappa - kappa * kappa;
  return ca * a / f + cb * b * f + (cb * a + ca * b);
}

/// phi written as a / f + b.
inline double phi_decomposed(double f, double rho, double kappa) {
  detail::check_fraction(f, "phi_decomposed");
  return (1.0 + kappa * kappa - 2.0 * rho * kappa) / f + (2.0 * rho * kappa - kappa * kappa);
}

/// Minimizer of Q over (0, 1]. Returns 1 when rho <= rho_switch, f_min in the
/// degenerate case a = 0, else min(1, sqrt(A a / (B b))).
inline double f_star(const CostModel& cm, double rho, double kappa, double f_min = 0.01) {
  detail::check_kappa(kappa, "f_star");
  detail::check_rho(rho, "f_star");
  detail::check_fraction_open(f_min, "f_star (f_min)");
  if (rho <= rho_switch(cm, kappa)) return 1.0;
  const double a = 1.0 + kappa * kappa - 2.0 * rho * kappa;
  const double b = 2.0 * rho * kappa - kappa * kappa;
  if (a <= 0.0) return f_min;
  return std::min(1.0, std::sqrt(cm.cheap_share() * a / (cm.saved_share() * b)));
}

// ---------------------------------------------------------------------------
// Convergence bounds for SGD with an unbiased gradient of variance <= V.

struct BoundInputs {
  double initial_gap = 1.0;        // F(theta_0) - F*
  double strong_convexity = 1.0;   // alpha
  double smoothness = 1.0;         // L
  double stepsize = 0.1;           // eta
  double variance = 0.0;           // V
  std::int64_t horizon = 1;        // T
};

namespace detail {
inline void check_bound_inputs(const BoundInputs& b) {
  require(b.initial_gap >= 0.0, ErrorKind::domain, "bound: initial gap must be >= 0");
  require(b.smoothness > 0.0, ErrorKind::domain, "bound: L must be positive");
  require(b.stepsize > 0.0, ErrorKind::domain, "bound: stepsize must be positive");
  require(b.variance >= 0.0, ErrorKind::domain, "bound: V must be >= 0");
  require(b.horizon >= 0, ErrorKind::domain, "bound: T must be >= 0");
  if (b.stepsize > 1.0 / b.smoothness)
    fail(ErrorKind::stepsize, "stepsize " + std::to_string(b.stepsize) + " exceeds 1/L");
}
}  // namespace detail

/// Strongly convex, constant step:
/// (1 - alpha eta)^T (gap - L eta V / (2 alpha)) + L eta V / (2 alpha).
inline double sc_bound(const BoundInputs& b) {
  detail::check_bound_inputs(b);
  require(b.strong_convexity > 0.0, ErrorKind::domain, "sc_bound: alpha must be positive");
  const double floor = b.smoothness * b.stepsize * b.variance / (2.0 * b.strong_convexity);
  const double contraction = std::pow(1.0 - b.strong_convexity * b.stepsize, static_cast<double>(b.horizon));
  return contraction * (b.initial_gap - floor) + floor;
}

/// Non-convex average squared gradient norm: 2 gap / (eta T) + L eta V.
inline double nc_bound(const BoundInputs& b) {
  detail::check_bound_inputs(b);
  require(b.horizon >= 1, ErrorKind::domain, "nc_bound: T must be >= 1");
  return 2.0 * b.initial_gap / (b.stepsize * static_cast<double>(b.horizon)) +
         b.smoothness * b.stepsize * b.variance;
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the debiased estimator.

struct SimulationConfig {
  double sigma_g = 1.0;
  double sigma_h = 1.0;
  double tau = 1.0;
  Eigen::Index dim = 4;
  double f = 0.5;
  std::size_t m = 100;
  std::size_t trials = 200000;
  std::uint64_t seed = 0;
  double mean_scale = 1.0;  // |mu| per coordinate; mu_h = -mean_scale / 2 per coordinate
  bool debias = true;       // false uses the naive f g_c + (1 - f) h_p
  unsigned threads = 0;     // 0 = hardware concurrency

  static SimulationConfig from_alignment(double rho, double kappa) {
    SimulationConfig c;
    c.sigma_g = 1.0;
    c.sigma_h = kappa;
    c.tau = rho * kappa;
    return c;
  }
};

struct SimulationResult {
  double mean_err = 0.0;        // || mean(G) - mu ||
  double standard_error = 0.0;  // sqrt(predicted_var / trials)
  double emp_var = 0.0;         // mean || G - mu ||^2
  double predicted_var = 0.0;   // v2_exact
  std::size_t trials = 0;

  double ratio() const { return emp_var / predicted_var; }
};

namespace detail {
struct ChunkAccum {
  Vec err_sum;
  double sq_sum = 0.0;
};

// G - mu for `trials` independent mini-batches. Per example u ~ N(0, sg^2/d I),
// v = (tau / sg^2) u + w with w ~ N(0, (sh^2 - tau^2/sg^2)/d I).
inline ChunkAccum simulate_chunk(const SimulationConfig& c, std::size_t mc, std::size_t mp,
                                 std::size_t trials, Engine rng) {
  const auto d = c.dim;
  const double su = c.sigma_g / std::sqrt(static_cast<double>(d));
  const double resid_var = std::max(0.0, c.sigma_h * c.sigma_h - c.tau * c.tau / (c.sigma_g * c.sigma_g));
  const double sw = std::sqrt(resid_var / static_cast<double>(d));
  const double beta = c.tau / (c.sigma_g * c.sigma_g);
  const Vec mu = Vec::Constant(d, c.mean_scale);
  const Vec mu_h = Vec::Constant(d, -0.5 * c.mean_scale);
  std::normal_distribution<double> normal(0.0, 1.0);

  ChunkAccum acc{Vec::Zero(d), 0.0};
  Vec gc(d), hc(d), hp(d), u(d), w(d);
  for (std::size_t t = 0; t < trials; ++t) {
    gc.setZero();
    hc.setZero();
    hp.setZero();
    for (std::size_t i = 0; i < mc; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = su * normal(rng);
      for (Eigen::Index j = 0; j < d; ++j) w[j] = sw * normal(rng);
      gc += u;
      hc += beta * u + w;
    }
    for (std::size_t i = 0; i < mp; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = su * normal(rng);
      for (Eigen::Index j = 0; j < d; ++j) w[j] = sw * normal(rng);
      hp += beta * u + w;
    }
    const Vec g_bar = mu + gc / static_cast<double>(mc);
    const Vec hc_bar = mu_h + hc / static_cast<double>(mc);
    const Vec hp_bar = mu_h + hp / static_cast<double>(mp);
    const Vec big_g = c.debias ? Vec(g_bar + (1.0 - c.f) * (hp_bar - hc_bar))
                               : Vec(c.f * g_bar + (1.0 - c.f) * hp_bar);
    const Vec e = big_g - mu;
    acc.err_sum += e;
    acc.sq_sum += e.squaredNorm();
  }
  return acc;
}
}  // namespace detail

/// Draws `trials` mini-batches of synthetic per-example gradient pairs with
/// the requested second moments, forms G for each and compares its empirical
/// mean and spread with the closed forms. Work is split into a fixed number
/// of chunks with their own substreams and reduced in chunk order, so the
/// result does not depend on the thread count.
inline SimulationResult simulate_estimator(const SimulationConfig& c) {
  if (!(c.sigma_g > 0.0) || !(c.sigma_h >= 0.0))
    fail(ErrorKind::moment, "simulate: sigma_g must be positive and sigma_h nonnegative");
  if (std::fabs(c.tau) > c.sigma_g * c.sigma_h * (1.0 + 1e-12))
    fail(ErrorKind::moment, "simulate: |tau| exceeds sigma_g * sigma_h");
  require(c.dim >= 1, ErrorKind::domain, "simulate: dim must be >= 1");
  if (!(c.f > 0.0 && c.f < 1.0)) fail(ErrorKind::domain, "simulate: f must lie in (0, 1)");
  require(c.trials >= 10000, ErrorKind::domain, "simulate: trials must be >= 1e4");
  const std::size_t mc = control_size(c.m, c.f);
  require(std::fabs(c.f * static_cast<double>(c.m) - static_cast<double>(mc)) < 1e-9, ErrorKind::domain,
          "simulate: f*m must be a whole number");
  require(mc >= 1 && mc < c.m, ErrorKind::domain, "simulate: both micro-batches must be non-empty");
  const std::size_t mp = c.m - mc;

  constexpr std::size_t kChunks = 16;
  std::vector<detail::ChunkAccum> parts(kChunks);
  unsigned nthreads = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
  nthreads = std::min<unsigned>(nthreads, kChunks);
  auto chunk_trials = [&](std::size_t k) {
    return c.trials / kChunks + (k < c.trials % kChunks ? 1 : 0);
  };
  auto work = [&](unsigned tid) {
    for (std::size_t k = tid; k < kChunks; k += nthreads)
      parts[k] = detail::simulate_chunk(c, mc, mp, chunk_trials(k), substream(c.seed, "simulation", k));
  };
  if (nthreads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  Vec err = Vec::Zero(c.dim);
  double sq = 0.0;
  for (const auto& p : parts) {
    err += p.err_sum;
    sq += p.sq_sum;
  }
  SimulationResult r;
  r.trials = c.trials;
  r.mean_err = (err / static_cast<double>(c.trials)).norm();
  r.emp_var = sq / static_cast<double>(c.trials);
  r.predicted_var = v2_exact(c.sigma_g, c.sigma_h, c.tau, c.f, c.m);
  r.standard_error = std::sqrt(r.predicted_var / static_cast<double>(c.trials));
  return r;
}

/// Positional form.
inline SimulationResult simulate_estimator(double sigma_g, double sigma_h, double tau,
                                           Eigen::Index dim, double f, std::size_t m,
                                           std::size_t trials, std::uint64_t seed) {
  SimulationConfig c;
  c.sigma_g = sigma_g;
  c.sigma_h = sigma_h;
  c.tau = tau;
  c.dim = dim;
  c.f = f;
  c.m = m;
  c.trials = trials;
  c.seed = seed;
  return simulate_estimator(c);
}

// ---------------------------------------------------------------------------
// Grid sweeps

struct SweepRow {
  double f, rho, kappa, phi, gamma, q;
  bool break_even;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  static constexpr const char* kHeader = "f,rho,kappa,phi,gamma,Q,break_even";

  void write_csv(std::ostream& os) const {
    os << kHeader << '\n';
    os << std::setprecision(17);
    for (const auto& r : rows)
      os << r.f << ',' << r.rho << ',' << r.kappa << ',' << r.phi << ',' << r.gamma << ',' << r.q
         << ',' << (r.break_even ? 1 : 0) << '\n';
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::data, "cannot open " + path + " for writing");
    write_csv(out);
  }
};

/// Evenly spaced grid start, start+step, ..., up to stop (inclusive within
/// half a step).
inline std::vector<double> linear_grid(double start, double stop, double step) {
  require(step > 0.0 && stop >= start, ErrorKind::config, "grid: need step > 0 and stop >= start");
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 0.5));
  for (long i = 0; i <= n; ++i) g.push_back(start + static_cast<double>(i) * step);
  return g;
}

inline SweepResult sweep(const CostModel& cm, const std::vector<double>& fs,
                         const std::vector<double>& rhos, const std::vector<double>& kappas) {
  auto increasing = [](const std::vector<double>& v) {
    return !v.empty() && std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  require(increasing(fs) && increasing(rhos) && increasing(kappas), ErrorKind::config,
          "sweep: grid coordinates must be non-empty and strictly increasing");
  SweepResult out;
  for (double f : fs)
    for (double rho : rhos)
      for (double kappa : kappas) {
        detail::check_fraction(f, "sweep");
        detail::check_rho(rho, "sweep");
        detail::check_kappa(kappa, "sweep");
        SweepRow r;
        r.f = f;
        r.rho = rho;
        r.kappa = kappa;
        r.phi = variance_inflation(f, rho, kappa);
        r.gamma = gamma(cm, f);
        r.q = r.phi * r.gamma;
        r.break_even = r.q <= 1.0;
        out.rows.push_back(r);
      }
  return out;
}

}  // namespace pgd
