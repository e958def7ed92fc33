// Acceptance checks. Prints one PASS/FAIL line per criterion; exits nonzero
// if any fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"

using namespace pgd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

double cos_sim(const Vec& a, const Vec& b) { return a.dot(b) / (a.norm() * b.norm()); }

Outcome ac1_theory() {
  const CostModel cm;
  const double r01 = rho_star(cm, 0.1, 1), r02 = rho_star(cm, 0.2, 1), r05 = rho_star(cm, 0.5, 1);
  const double rs = rho_switch(cm, 1), fs = f_star(cm, 0.8, 1);
  bool ok = std::fabs(r01 - 0.8763) <= 1e-3 && std::fabs(r02 - 0.8017) <= 1e-3 && std::fabs(r05 - 0.6892) <= 1e-3 &&
            std::fabs(rs - 0.61667) <= 1e-4 && std::fabs(fs - 0.4504) <= 1e-2 && pgd::gamma(cm, 1.0) == 1.0;
  for (int i = 1; i <= 1000; ++i) ok = ok && pgd::gamma(cm, i / 1000.0) > 0.7 / 3;
  return {ok, "rho_star(0.1,0.2,0.5)=" + fmt(r01) + "," + fmt(r02) + "," + fmt(r05) + " rho_switch=" + fmt(rs) +
                  " f_star=" + fmt(fs)};
}

Outcome ac2_inflation() {
  double worst_one = 0.0, worst_form = 0.0;
  for (int i = 1; i <= 100; ++i) worst_one = std::max(worst_one, std::fabs(variance_inflation(i / 100.0, 1, 1) - 1));
  Engine rng(2024);
  std::uniform_real_distribution<double> uf(0.01, 1.0), ur(-1.0, 1.0), uk(0.05, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double f = uf(rng), rho = ur(rng), kappa = uk(rng);
    const double a = variance_inflation(f, rho, kappa), b = phi_decomposed(f, rho, kappa);
    worst_form = std::max(worst_form, std::fabs(a - b) / std::max(1.0, std::fabs(a)));
  }
  return {worst_one <= 1e-12 && worst_form <= 1e-12,
          "max|phi(f,1,1)-1|=" + fmt(worst_one) + " max form gap=" + fmt(worst_form)};
}

Outcome ac3_unbiased() {
  SimulationConfig c = SimulationConfig::from_alignment(0.8, 1.2);
  c.f = 0.25;
  c.m = 20;
  c.trials = 200000;
  c.seed = 3;
  const auto r = simulate_estimator(c);
  return {r.mean_err <= 4 * r.standard_error,
          "mean_err=" + fmt(r.mean_err) + " (" + fmt(r.mean_err / r.standard_error, 3) + " standard errors)"};
}

Outcome ac4_variance() {
  double worst = 0.0;
  std::uint64_t seed = 40;
  for (double f : {0.1, 0.25, 0.5})
    for (double rho : {0.0, 0.5, 0.9})
      for (double kappa : {0.8, 1.0, 1.25}) {
        SimulationConfig c = SimulationConfig::from_alignment(rho, kappa);
        c.f = f;
        c.m = 20;
        c.trials = 100000;
        c.seed = seed++;
        const auto r = simulate_estimator(c);
        worst = std::max(worst, std::fabs(r.ratio() - 1.0));
      }
  return {worst <= 0.02, "27 grid points, max relative gap=" + fmt(worst, 4)};
}

double loss_at(Network net, const Vec& theta, const Vec& x, const Vec& y, const LossSpec& spec) {
  net.set_parameters(theta);
  return loss_and_residual(net.forward(x).output, y, spec).loss;
}

Outcome ac5_gradients() {
  Engine rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    NetworkConfig cfg;
    cfg.input_dim = 2 + trial % 4;
    cfg.hidden_widths = trial % 3 == 0 ? std::vector<Eigen::Index>{5, 4} : std::vector<Eigen::Index>{3 + trial % 5};
    cfg.output_dim = 1 + trial % 3;
    cfg.activation = trial % 4 == 3 ? Activation::identity : Activation::tanh;
    cfg.seed = static_cast<std::uint64_t>(100 + trial);
    Network net = init_network(cfg);
    net.set_parameters(fixtures::gaussian(net.parameter_count(), rng, 0.7));
    const bool ce = trial % 2 == 1 && cfg.output_dim > 1;
    const LossSpec spec{ce ? LossKind::cross_entropy : LossKind::squared_vector, ce ? 0.1 : 0.0};
    const Vec x = fixtures::gaussian(cfg.input_dim, rng);
    const Vec y = ce ? Vec::Constant(1, trial % cfg.output_dim) : fixtures::gaussian(cfg.output_dim, rng);
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
  return {worst <= 1e-5, "100 nets, max relative error=" + fmt(worst, 3)};
}

Outcome ac6_perfect_predictor() {
  bool ok = true;
  std::string detail;
  for (bool cls : {false, true}) {
    const Dataset data = cls ? gen_blobs(800, 4, 6, 3.0, 6) : gen_regression(800, 6, 0.1, 6, 2);
    NetworkConfig nc;
    nc.input_dim = data.input_dim();
    nc.output_dim = data.output_dim();
    nc.hidden_widths = {16, 8};
    nc.seed = 6;
    const Network net = init_network(nc);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.control_fraction = 0.25;
    cfg.loss.kind = cls ? LossKind::cross_entropy : LossKind::squared_vector;
    cfg.optimizer = OptimizerKind::sgd_momentum;
    cfg.momentum = 0.9;
    cfg.warmup = false;
    cfg.seed = 6;
    Trainer<Network> van(cfg, data, net, Algorithm::vanilla);
    Trainer<Network> pre(cfg, data, net, Algorithm::predicted, std::nullopt, TrainHooks{true});
    int identical = 0;
    for (int s = 0; s < 50 && van.step() && pre.step(); ++s) {
      const Vec a = van.model().parameters(), b = pre.model().parameters();
      if (std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) break;
      ++identical;
    }
    ok = ok && identical == 50;
    detail += std::string(cls ? " classification" : "regression") + "=" + std::to_string(identical) + "/50";
  }
  return {ok, "bit-identical steps: " + detail};
}

Outcome ac7_predictor_fidelity() {
  const Network net = fixtures::deep_linear_net(3);
  Engine rng(7);
  const ScalarPredictor p = fit_scalar(fixtures::deep_linear_samples(net, 64, rng), -1.0);
  const LossSpec loss{LossKind::squared_vector, 0.0};
  double scalar_cos = 1.0;
  for (int i = 0; i < 200; ++i) {
    const auto eg = fixtures::example_gradient(net, fixtures::gaussian(4, rng), fixtures::gaussian(1, rng), loss);
    scalar_cos = std::min(scalar_cos, cos_sim(predict_scalar(p, eg.llh, eg.residual[0], 0.0).trunk_grad, eg.grad.trunk_grad));
  }
  const fixtures::PlantedModel planted(40, 6, 4, 3, rng);
  std::vector<FitSample> train;
  for (int i = 0; i < 300; ++i) train.push_back(planted.sample(rng));
  const auto sp = fit_structured(train, 0, -1.0);
  double planted_cos = 1.0;
  for (int i = 0; i < 200; ++i) {
    const auto s = planted.sample(rng);
    planted_cos = std::min(planted_cos, cos_sim(predict_structured(sp, s.llh, s.residual, planted.head).trunk_grad, s.trunk_grad));
  }
  return {scalar_cos >= 0.999 && planted_cos >= 0.99,
          "held-out min cosine: deep linear=" + fmt(scalar_cos, 8) + " planted=" + fmt(planted_cos, 8)};
}

Outcome ac8_convex() {
  const Dataset data = fixtures::linear_task(256, 3, 11);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.control_fraction = 0.25;
  cfg.learning_rate = 0.1;
  cfg.lr_decay = 0.01;
  cfg.weight_decay = 1e-3;
  cfg.epochs = 400;
  cfg.eval_every = 0;
  cfg.refit.period = 20;
  cfg.seed = 11;
  const Vec opt = fixtures::linear_model_optimum(data, cfg.weight_decay);
  const double dv = (train_vanilla(cfg, data, LinearModel(3, 1)).model.parameters() - opt).norm();
  const double dp = (train_predicted(cfg, data, LinearModel(3, 1)).model.parameters() - opt).norm();
  return {dv <= 1e-3 && dp <= 1e-3, "|theta-theta*| vanilla=" + fmt(dv, 3) + " predicted=" + fmt(dp, 3)};
}

Outcome ac9_cost() {
  const Dataset data = gen_regression(400, 4, 0.1, 9);
  NetworkConfig nc;
  nc.input_dim = 4;
  nc.hidden_widths = {8};
  nc.seed = 9;
  const Network net = init_network(nc);
  bool ok = true;
  TrainConfig cfg;
  cfg.batch_size = 40;
  cfg.warmup = false;
  cfg.eval_every = 0;
  for (double f : {0.1, 0.25, 0.5, 0.75}) {
    cfg.control_fraction = f;
    cfg.budget.reset();
    Trainer<Network> van(cfg, data, net, Algorithm::vanilla);
    Trainer<Network> pre(cfg, data, net, Algorithm::predicted);
    for (int s = 1; s <= 5; ++s) {
      van.step();
      pre.step();
      ok = ok && van.cost_units() == 3.0 * 40 * s;
      ok = ok && std::fabs(pre.cost_units() - s * 40 * (0.7 + 2.3 * f)) <= 1e-9 * pre.cost_units();
    }
  }
  std::string detail;
  for (double f : {0.1, 0.25, 0.5, 0.75})
    for (int k : {10, 50}) {
      cfg.control_fraction = f;
      cfg.budget = 3.0 * 40 * k;
      const auto rep = run_budgeted_comparison(cfg, data, net);
      const auto expect = static_cast<std::int64_t>(std::floor(k / pgd::gamma(cfg.cost_model, f)));
      const bool hit = rep.vanilla.steps == k && std::llabs(rep.predicted.steps - expect) <= 1;
      ok = ok && hit;
      if (f == 0.25 && k == 50)
        detail = " e.g. f=0.25 k=50: vanilla=" + std::to_string(rep.vanilla.steps) +
                 " predicted=" + std::to_string(rep.predicted.steps) + " floor(k/gamma)=" + std::to_string(expect);
    }
  return {ok, "per-batch ledger 3m and m(0.7+2.3f);" + detail};
}

Outcome ac10_blobs() {
  const Dataset data = gen_blobs(5000, 10, 32, 4.0, 10);
  NetworkConfig nc;
  nc.input_dim = 32;
  nc.output_dim = 10;
  nc.hidden_widths = {32};
  nc.seed = 10;
  const Network net = init_network(nc);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.control_fraction = 0.25;
  cfg.loss.kind = LossKind::cross_entropy;
  cfg.learning_rate = 0.05;
  cfg.eval_every = 0;
  cfg.refit.period = 25;
  cfg.refit.buffer_capacity = 256;
  cfg.seed = 10;
  cfg.budget = 3.0 * 32 * 300;

  const auto fitted = run_budgeted_comparison(cfg, data, net);
  const auto perfect = run_budgeted_comparison(cfg, data, net, std::nullopt, TrainHooks{true});
  const bool logged = std::isfinite(fitted.rho_hat_trunk) && std::isfinite(fitted.kappa_hat_trunk);
  const bool consistent = perfect.break_even == perfect.predicted_not_worse;
  std::string d = "fitted: trunk rho_hat=" + fmt(fitted.rho_hat_trunk, 4) +
                  " kappa_hat=" + fmt(fitted.kappa_hat_trunk, 4) + " full rho_hat=" + fmt(fitted.rho_hat, 4) +
                  " kappa_hat=" + fmt(fitted.kappa_hat, 4) + " rho_star=" + fmt(fitted.rho_star, 4) +
                  " verdict=" + (fitted.break_even ? "break-even" : "below") +
                  " loss predicted/vanilla=" + fmt(fitted.predicted.final_train_loss, 4) + "/" +
                  fmt(fitted.vanilla.final_train_loss, 4) + "; perfect: verdict=" +
                  (perfect.break_even ? "break-even" : "below") + " loss predicted/vanilla=" +
                  fmt(perfect.predicted.final_train_loss, 4) + "/" + fmt(perfect.vanilla.final_train_loss, 4);
  return {logged && consistent, d};
}

}  // namespace

int main() {
  log::set_level(log::Level::quiet);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"AC1", ac1_theory},          {"AC2", ac2_inflation},       {"AC3", ac3_unbiased},
      {"AC4", ac4_variance},        {"AC5", ac5_gradients},       {"AC6", ac6_perfect_predictor},
      {"AC7", ac7_predictor_fidelity}, {"AC8", ac8_convex},       {"AC9", ac9_cost},
      {"AC10", ac10_blobs}};
  int failures = 0;
  for (const auto& [name, fn] : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %s %s [%.2fs]\n", name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
