// Trains a small regression network with both algorithms under the same
// cost budget and prints what the break-even test says about the run.

#include <iomanip>
#include <iostream>

#include "pgd/pgd.hpp"

int main() {
  const pgd::Dataset data = pgd::gen_regression(2000, 8, 0.1, 7);

  pgd::NetworkConfig net;
  net.input_dim = data.input_dim();
  net.output_dim = data.output_dim();
  net.hidden_widths = {32};
  net.seed = 7;

  pgd::TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.control_fraction = 0.25;
  cfg.learning_rate = 0.05;
  cfg.budget = 3.0 * 32 * 400;  // 400 vanilla steps worth of compute
  cfg.refit.period = 25;
  cfg.seed = 7;

  const auto rep = pgd::run_budgeted_comparison(cfg, data, pgd::init_network(net));

  std::cout << std::setprecision(5);
  std::cout << "gamma(f)           " << rep.gamma << '\n';
  std::cout << "vanilla   steps " << rep.vanilla.steps << "  train loss " << rep.vanilla.final_train_loss << '\n';
  std::cout << "predicted steps " << rep.predicted.steps << "  train loss " << rep.predicted.final_train_loss
            << '\n';
  std::cout << "measured rho " << rep.rho_hat << " (trunk " << rep.rho_hat_trunk << "), kappa " << rep.kappa_hat
            << '\n';
  std::cout << "rho* at that kappa " << rep.rho_star << ", break-even " << (rep.break_even ? "yes" : "no") << '\n';
}
