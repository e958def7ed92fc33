// pgd: data generation, training runs, break-even analysis and Monte Carlo checks.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pgd/pgd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options shared by the run commands: config file, --set overrides and one
// flag per config key. Resolution order is defaults < file < --set < flags.
struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::string out_dir = "out";

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", sets, "override, repeatable: --set key=value");
    cmd->add_option("--out", out_dir, "output directory or file");
    for (const auto& key : pgd::config_keys()) {
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      cmd->add_option_function<std::string>(names, [this, key](const std::string& v) { flags[key] = v; },
                                            "config key " + key);
    }
  }

  pgd::RunSpec resolve() const {
    pgd::RunSpec spec;
    if (!config_path.empty()) pgd::apply_config_file(spec, config_path);
    for (const auto& s : sets) {
      const auto [k, v] = pgd::split_assignment(s);
      pgd::apply_setting(spec, k, v);
    }
    // task first so an explicit loss flag is not reset by it
    if (auto it = flags.find("task"); it != flags.end()) pgd::apply_setting(spec, it->first, it->second);
    for (const auto& [k, v] : flags)
      if (k != "task") pgd::apply_setting(spec, k, v);
    return spec;
  }
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  pgd::require(static_cast<bool>(out), pgd::ErrorKind::data, "cannot open " + p.string() + " for writing");
  return out;
}

void write_effective(const fs::path& dir, const pgd::RunSpec& spec) {
  open_out(dir / "effective_config.txt") << pgd::effective_config(spec);
}

double json_num(double x) { return std::isfinite(x) ? x : 0.0; }

json summary_json(const pgd::RunSummary& s) {
  return json{{"steps", s.steps},
              {"cost_units", s.cost_units},
              {"forward", s.ledger.forward},
              {"backward", s.ledger.backward},
              {"cheap_forward", s.ledger.cheap_forward},
              {"final_train_loss", json_num(s.final_train_loss)},
              {"final_val_metric", json_num(s.final_val_metric)}};
}

int cmd_gen_data(const RunOptions& opt) {
  const auto spec = opt.resolve();
  pgd::RunSpec synth = spec;
  synth.data.clear();
  const auto data = pgd::make_dataset(synth);
  fs::path out = opt.out_dir;
  if (out.extension() != ".csv") {
    fs::create_directories(out);
    write_effective(out, spec);
    out /= "data.csv";
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  pgd::write_csv(data, out.string());
  std::cout << "wrote " << data.size() << " examples (" << data.train.size() << " train, "
            << data.validation.size() << " validation) to " << out.string() << '\n';
  return 0;
}

int cmd_train(const RunOptions& opt, const std::string& resume_path) {
  const auto spec = opt.resolve();
  const auto data = pgd::make_dataset(spec);
  const fs::path dir = opt.out_dir;
  fs::create_directories(dir);
  write_effective(dir, spec);

  auto trainer = resume_path.empty()
                     ? pgd::Trainer<pgd::Network>(spec.train, data, pgd::init_network(pgd::network_config(spec, data)),
                                                  spec.algo)
                     : pgd::Trainer<pgd::Network>::resume(resume_path, spec.train, data);
  trainer.run();

  {
    auto out = open_out(dir / "metrics.csv");
    pgd::write_metrics_csv(trainer.records(), out);
  }
  if (spec.algo == pgd::Algorithm::predicted) {
    auto out = open_out(dir / "alignment.csv");
    pgd::write_alignment_csv(trainer.records(), out);
  }
  trainer.save_checkpoint((dir / "checkpoint.bin").string());
  trainer.model().save((dir / "model.bin").string());

  const double train_loss = pgd::mean_loss(trainer.model(), data, data.train, spec.train.loss);
  const double val = pgd::evaluate_metric(trainer.model(), data, data.validation, spec.train.loss);
  std::cout << std::setprecision(6) << "algo=" << pgd::to_string(spec.algo) << " steps=" << trainer.steps()
            << " cost_units=" << trainer.cost_units() << " train_loss=" << train_loss << " val_metric=" << val
            << '\n';
  return 0;
}

int cmd_compare(const RunOptions& opt) {
  const auto spec = opt.resolve();
  if (!spec.train.budget) pgd::fail(pgd::ErrorKind::budget, "compare needs budget=<cost units>");
  const auto data = pgd::make_dataset(spec);
  const fs::path dir = opt.out_dir;
  fs::create_directories(dir);
  write_effective(dir, spec);

  const auto init = pgd::init_network(pgd::network_config(spec, data));
  const auto rep = pgd::run_budgeted_comparison(spec.train, data, init);
  {
    auto out = open_out(dir / "vanilla_metrics.csv");
    pgd::write_metrics_csv(rep.vanilla.records, out);
  }
  {
    auto out = open_out(dir / "predicted_metrics.csv");
    pgd::write_metrics_csv(rep.predicted.records, out);
  }
  {
    auto out = open_out(dir / "alignment.csv");
    pgd::write_alignment_csv(rep.predicted.records, out);
  }
  json j{{"budget", rep.budget},
         {"f", rep.f},
         {"gamma", rep.gamma},
         {"vanilla", summary_json(rep.vanilla)},
         {"predicted", summary_json(rep.predicted)},
         {"rho_hat", json_num(rep.rho_hat)},
         {"kappa_hat", json_num(rep.kappa_hat)},
         {"rho_hat_trunk", json_num(rep.rho_hat_trunk)},
         {"kappa_hat_trunk", json_num(rep.kappa_hat_trunk)},
         {"rho_star", json_num(rep.rho_star)},
         {"break_even", rep.break_even},
         {"predicted_not_worse", rep.predicted_not_worse}};
  open_out(dir / "report.json") << j.dump(2) << '\n';
  std::cout << std::setprecision(6) << "vanilla_steps=" << rep.vanilla.steps
            << " predicted_steps=" << rep.predicted.steps << " rho_hat=" << rep.rho_hat
            << " kappa_hat=" << rep.kappa_hat << " rho_hat_trunk=" << rep.rho_hat_trunk
            << " rho_star=" << rep.rho_star << " break_even=" << (rep.break_even ? "true" : "false")
            << " vanilla_loss=" << rep.vanilla.final_train_loss
            << " predicted_loss=" << rep.predicted.final_train_loss << '\n';
  return 0;
}

struct AnalyzeOptions {
  double f = 0.25;
  double kappa = 1.0;
  std::optional<double> rho;
  pgd::CostModel cost;
  std::string sweep_out;
  std::string f_grid = "0.05:1:0.05";
  std::string rho_grid = "0:1:0.05";
  std::string kappa_grid = "0.25:2:0.25";
};

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      parts.push_back(std::stod(item));
    } catch (const std::exception&) {
      pgd::fail(pgd::ErrorKind::config, "grid '" + s + "': expected start:stop:step");
    }
  }
  if (parts.size() == 1) return {parts[0]};
  pgd::require(parts.size() == 3, pgd::ErrorKind::config, "grid '" + s + "': expected start:stop:step");
  return pgd::linear_grid(parts[0], parts[1], parts[2]);
}

int cmd_analyze(const AnalyzeOptions& o) {
  o.cost.validate();
  std::cout << std::setprecision(6);
  std::cout << "A=" << o.cost.cheap_share() << " B=" << o.cost.saved_share() << '\n';
  std::cout << "gamma=" << pgd::gamma(o.cost, o.f) << '\n';
  if (o.f < 1.0) std::cout << "rho_star=" << pgd::rho_star(o.cost, o.f, o.kappa) << '\n';
  std::cout << "rho_switch=" << pgd::rho_switch(o.cost, o.kappa) << '\n';
  if (o.rho) {
    std::cout << "phi=" << pgd::variance_inflation(o.f, *o.rho, o.kappa) << '\n';
    std::cout << "Q=" << pgd::q_objective(o.cost, o.f, *o.rho, o.kappa) << '\n';
    std::cout << "f_star=" << pgd::f_star(o.cost, *o.rho, o.kappa) << '\n';
    if (o.f < 1.0)
      std::cout << "break_even=" << (pgd::break_even_satisfied(o.cost, o.f, *o.rho, o.kappa) ? "true" : "false")
                << '\n';
  }
  if (!o.sweep_out.empty()) {
    const auto res = pgd::sweep(o.cost, parse_grid(o.f_grid), parse_grid(o.rho_grid), parse_grid(o.kappa_grid));
    fs::path p = o.sweep_out;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    res.write_csv(p.string());
    std::cout << "wrote " << res.rows.size() << " rows to " << p.string() << '\n';
  }
  return 0;
}

struct SimulateOptions {
  double rho = 0.8;
  double kappa = 1.0;
  double f = 0.25;
  std::size_t m = 200;
  std::size_t trials = 200000;
  Eigen::Index dim = 4;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
};

int cmd_simulate(const SimulateOptions& o) {
  if (!(o.rho >= -1.0 && o.rho <= 1.0)) pgd::fail(pgd::ErrorKind::moment, "rho must lie in [-1, 1]");
  if (!(o.kappa >= 0.0)) pgd::fail(pgd::ErrorKind::moment, "kappa must be >= 0");
  auto c = pgd::SimulationConfig::from_alignment(o.rho, o.kappa);
  c.f = o.f;
  c.m = o.m;
  c.trials = o.trials;
  c.dim = o.dim;
  c.seed = o.seed;
  c.threads = o.threads;
  const auto r = pgd::simulate_estimator(c);
  const double z = r.mean_err / r.standard_error;
  std::cout << std::setprecision(6) << "mean_err=" << r.mean_err << " standard_error=" << r.standard_error
            << " mean_err_se=" << z << " emp_var=" << r.emp_var << " pred_var=" << r.predicted_var
            << " ratio=" << r.ratio() << '\n';
  if (!o.out.empty()) {
    fs::path p = o.out;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    auto out = open_out(p);
    out << "rho,kappa,f,m,trials,dim,seed,mean_err,standard_error,emp_var,pred_var,ratio\n"
        << std::setprecision(17) << o.rho << ',' << o.kappa << ',' << o.f << ',' << o.m << ',' << o.trials << ','
        << o.dim << ',' << o.seed << ',' << r.mean_err << ',' << r.standard_error << ',' << r.emp_var << ','
        << r.predicted_var << ',' << r.ratio() << '\n';
  }
  return 0;
}

void print_error(const std::string& kind, int code, const std::string& message) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  std::cerr << "error=" << kind << " exit=" << code << " message=" << flat << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predicted-gradient training toolkit"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "quiet, warn or info");

  RunOptions gen_opt, train_opt, cmp_opt;
  std::string resume_path;
  auto* gen = app.add_subcommand("gen-data", "synthesize a dataset and write it as CSV");
  gen_opt.attach(gen);
  auto* train = app.add_subcommand("train", "run one algorithm; writes metrics, checkpoint and config");
  train_opt.attach(train);
  train->add_option("--resume", resume_path, "continue from a run checkpoint");
  auto* cmp = app.add_subcommand("compare", "vanilla vs predicted under one cost budget");
  cmp_opt.attach(cmp);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "break-even quantities and grid sweeps");
  analyze->add_option("--f", an.f, "control fraction");
  analyze->add_option("--kappa", an.kappa, "relative scale sigma_h / sigma_g");
  analyze->add_option_function<double>("--rho", [&](double v) { an.rho = v; }, "alignment");
  analyze->add_option("--cost-forward", an.cost.forward);
  analyze->add_option("--cost-backward", an.cost.backward);
  analyze->add_option("--cost-cheap-forward", an.cost.cheap_forward);
  analyze->add_option("--sweep", an.sweep_out, "write the grid sweep CSV here");
  analyze->add_option("--f-grid", an.f_grid, "start:stop:step");
  analyze->add_option("--rho-grid", an.rho_grid, "start:stop:step");
  analyze->add_option("--kappa-grid", an.kappa_grid, "start:stop:step");

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo check of the debiased estimator");
  simulate->add_option("--rho", sim.rho);
  simulate->add_option("--kappa", sim.kappa);
  simulate->add_option("--f", sim.f);
  simulate->add_option("--m", sim.m);
  simulate->add_option("--trials", sim.trials);
  simulate->add_option("--dim", sim.dim);
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--threads", sim.threads);
  simulate->add_option("--out", sim.out, "write the verification table CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("ConfigError", 2, e.what());
    return 2;
  }

  try {
    if (log_level == "quiet") pgd::log::set_level(pgd::log::Level::quiet);
    else if (log_level == "info") pgd::log::set_level(pgd::log::Level::info);
    if (*gen) return cmd_gen_data(gen_opt);
    if (*train) return cmd_train(train_opt, resume_path);
    if (*cmp) return cmd_compare(cmp_opt);
    if (*analyze) return cmd_analyze(an);
    if (*simulate) return cmd_simulate(sim);
  } catch (const pgd::Error& e) {
    const int code = pgd::exit_code(e.kind());
    print_error(std::string(pgd::kind_name(e.kind())), code, e.message());
    return code;
  } catch (const std::exception& e) {
    print_error("InternalError", 1, e.what());
    return 1;
  }
  return 0;
}
