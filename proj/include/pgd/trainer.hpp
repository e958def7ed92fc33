#pragma once

// Training loops: vanilla mini-batch SGD and predicted-gradient training,
// sharing one shuffle stream so runs with the same seed see the same batches.
//
// Per mini-batch, predicted training
//   1. splits the batch into a control part (round(f m)) and a prediction part,
//   2. runs Forward + Backward on the control part and the predictor on the
//      same llh, CheapForward + predictor on the prediction part,
//   3. forms G = f g_c + (1 - f)(h_p - (h_c - g_c)) and takes one optimizer step,
//   4. refits the predictor from buffered control samples when the policy says so.
//
// G is accumulated as one correctly rounded weighted sum over per-example
// vectors (ExactVecSum) rather than from rounded micro-batch means. The sum
// then does not depend on how the batch was partitioned, which is what makes
// a perfect predictor reproduce the vanilla trajectory bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pgd/analysis.hpp"
#include "pgd/data.hpp"
#include "pgd/error.hpp"
#include "pgd/estimator.hpp"
#include "pgd/exact_sum.hpp"
#include "pgd/linalg.hpp"
#include "pgd/log.hpp"
#include "pgd/model.hpp"
#include "pgd/predictor.hpp"
#include "pgd/rng.hpp"
#include "pgd/serialize.hpp"

namespace pgd {

enum class Algorithm { vanilla, predicted };
enum class OptimizerKind { sgd, sgd_momentum };

inline std::string to_string(Algorithm a) { return a == Algorithm::vanilla ? "vanilla" : "predicted"; }
inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "vanilla") return Algorithm::vanilla;
  if (s == "predicted") return Algorithm::predicted;
  fail(ErrorKind::config, "unknown algorithm '" + s + "'");
}
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "sgd_momentum"; }
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd_momentum" || s == "momentum") return OptimizerKind::sgd_momentum;
  fail(ErrorKind::config, "unknown optimizer '" + s + "'");
}

struct TrainConfig {
  std::int64_t epochs = 10;
  std::size_t batch_size = 32;
  double control_fraction = 0.25;
  LossSpec loss;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.05;
  double lr_decay = 0.0;  // step t uses learning_rate / (1 + lr_decay * t)
  double momentum = 0.0;
  double weight_decay = 0.0;  // adds weight_decay * theta to every update
  RefitPolicy refit;
  CostModel cost_model;
  std::optional<double> budget;  // cost units; when set, epochs is ignored
  bool warmup = true;            // fit the predictor from one full batch before step 0
  bool reduce_precision = false; // single-precision CheapForward
  std::int64_t eval_every = 1;   // validation cadence in steps; 0 disables
  std::uint64_t seed = 0;

  void validate(Algorithm algo) const {
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
    require(budget.has_value() || epochs >= 1, ErrorKind::config, "epochs must be >= 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::config,
            "learning rate must be positive");
    require(lr_decay >= 0.0, ErrorKind::config, "lr_decay must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::config, "momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, ErrorKind::config, "weight_decay must be >= 0");
    require(eval_every >= 0, ErrorKind::config, "eval_every must be >= 0");
    require(loss.smoothing >= 0.0 && loss.smoothing < 1.0, ErrorKind::config, "smoothing must lie in [0, 1)");
    cost_model.validate();
    if (algo == Algorithm::predicted)
      require(control_fraction > 0.0 && control_fraction < 1.0, ErrorKind::config,
              "control fraction f must lie in (0, 1) for predicted training");
  }
};

/// Pass counts of a run. cost_units() is always recomputed from the counts.
struct BudgetLedger {
  std::uint64_t forward = 0;
  std::uint64_t cheap_forward = 0;
  std::uint64_t backward = 0;

  double cost_units(const CostModel& cm) const {
    return static_cast<double>(forward) * cm.forward + static_cast<double>(backward) * cm.backward +
           static_cast<double>(cheap_forward) * cm.cheap_forward;
  }
};

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double cost_units = 0.0;
  double loss = 0.0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  // Full-vector alignment of the control-batch pairs (NaN for vanilla).
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  double kappa_hat = std::numeric_limits<double>::quiet_NaN();
  double phi_hat = std::numeric_limits<double>::quiet_NaN();
  // Trunk coordinates only, where the predictor is not exact.
  double rho_hat_trunk = std::numeric_limits<double>::quiet_NaN();
  double kappa_hat_trunk = std::numeric_limits<double>::quiet_NaN();
  bool refit = false;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,cost_units,loss,val_metric,rho_hat,kappa_hat,phi_hat,refit";
inline constexpr const char* kAlignmentHeader = "step,rho_hat,kappa_hat,rho_hat_trunk,kappa_hat_trunk";

inline void write_metrics_csv(const std::vector<StepRecord>& records, std::ostream& os) {
  os << kMetricsHeader << '\n' << std::setprecision(17);
  for (const auto& r : records)
    os << r.step << ',' << r.epoch << ',' << r.cost_units << ',' << r.loss << ',' << r.val_metric << ','
       << r.rho_hat << ',' << r.kappa_hat << ',' << r.phi_hat << ',' << (r.refit ? 1 : 0) << '\n';
}

inline void write_alignment_csv(const std::vector<StepRecord>& records, std::ostream& os) {
  os << kAlignmentHeader << '\n' << std::setprecision(17);
  for (const auto& r : records)
    os << r.step << ',' << r.rho_hat << ',' << r.kappa_hat << ',' << r.rho_hat_trunk << ','
       << r.kappa_hat_trunk << '\n';
}

struct OptimizerState {
  Vec buffer;  // momentum buffer; empty until the first momentum step
};

/// sgd: theta - lr g. Momentum: buffer' = momentum * buffer + g,
/// theta - lr buffer'.
inline std::pair<Vec, OptimizerState> optimizer_step(const Vec& theta, const Vec& g, OptimizerState state,
                                                     double lr, double momentum,
                                                     OptimizerKind kind = OptimizerKind::sgd_momentum) {
  require(theta.size() == g.size(), ErrorKind::dimension,
          "optimizer_step: theta has " + std::to_string(theta.size()) + " entries, g has " +
              std::to_string(g.size()));
  if (kind == OptimizerKind::sgd) return {theta - lr * g, std::move(state)};
  if (state.buffer.size() == 0) state.buffer = Vec::Zero(g.size());
  require(state.buffer.size() == g.size(), ErrorKind::dimension, "optimizer_step: momentum buffer size");
  state.buffer = momentum * state.buffer + g;
  Vec next = theta - lr * state.buffer;
  return {std::move(next), std::move(state)};
}

/// Test-only switches.
struct TrainHooks {
  // PredictGrad runs Forward + Backward on the example itself, so h == g.
  bool perfect_predictor = false;
};

/// One mini-batch worth of gradient information.
struct BatchGradient {
  Vec g;                          // combined (or vanilla mean) gradient
  double loss = 0.0;              // mean loss over every example touched
  std::size_t control = 0;
  std::size_t prediction = 0;
  std::optional<AlignmentStats> full;
  std::optional<AlignmentStats> trunk;
};

template <TrainableModel Model>
struct TrainResult {
  Model model;
  std::vector<StepRecord> records;
  BudgetLedger ledger;
  GradientPredictor predictor;
  std::int64_t steps = 0;
};

/// Mean loss over the given examples.
template <TrainableModel Model>
double mean_loss(const Model& model, const Dataset& data, const std::vector<std::size_t>& idx,
                 const LossSpec& loss) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  ExactSum s;
  for (auto i : idx) s.add(loss_and_residual(model.cheap_forward(data.features[i]).output, data.targets[i], loss).loss);
  return s.value() / static_cast<double>(idx.size());
}

/// Accuracy for classification, mean loss for regression.
template <TrainableModel Model>
double evaluate_metric(const Model& model, const Dataset& data, const std::vector<std::size_t>& idx,
                       const LossSpec& loss) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (data.kind != TaskKind::classification) return mean_loss(model, data, idx, loss);
  std::size_t correct = 0;
  for (auto i : idx) {
    const Vec out = model.cheap_forward(data.features[i]).output;
    Eigen::Index arg;
    out.maxCoeff(&arg);
    if (arg == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

/// Exact mean of per-example true gradients over the given examples.
template <TrainableModel Model>
Vec full_gradient(const Model& model, const Dataset& data, const std::vector<std::size_t>& idx,
                  const LossSpec& loss) {
  ExactVecSum acc(model.parameter_count());
  const double w = 1.0 / static_cast<double>(idx.size());
  for (auto i : idx) {
    const auto fr = model.forward(data.features[i]);
    const auto lr = loss_and_residual(fr.output, data.targets[i], loss);
    acc.add(model.backward(fr.cache, lr.residual).flatten(), w);
  }
  return acc.value();
}

template <TrainableModel Model>
class Trainer {
 public:
  /// `data` must outlive the trainer. For predicted training an initial
  /// predictor may be supplied; otherwise it starts at ZeroPredictor and is
  /// seeded by the warmup batch when cfg.warmup is set.
  Trainer(TrainConfig cfg, const Dataset& data, Model model, Algorithm algo,
          std::optional<GradientPredictor> predictor = std::nullopt, TrainHooks hooks = {})
      : cfg_(std::move(cfg)),
        data_(&data),
        model_(std::move(model)),
        algo_(algo),
        hooks_(hooks),
        shuffle_rng_(substream(cfg_.seed, "shuffle")),
        split_rng_(substream(cfg_.seed, "split")),
        predictor_(ZeroPredictor{model_.trunk_size()}) {
    cfg_.validate(algo_);
    data.validate();
    require(model_.input_dim() == data.input_dim(), ErrorKind::dimension,
            "model input dim " + std::to_string(model_.input_dim()) + " does not match data dim " +
                std::to_string(data.input_dim()));
    require(model_.output_dim() == data.output_dim(), ErrorKind::dimension,
            "model output dim " + std::to_string(model_.output_dim()) + " does not match data output dim " +
                std::to_string(data.output_dim()));
    require(cfg_.loss.classification() == (data.kind == TaskKind::classification), ErrorKind::config,
            "loss kind does not match the dataset task");
    if (algo_ == Algorithm::predicted && control_size(cfg_.batch_size, cfg_.control_fraction) == 0)
      fail(ErrorKind::control_batch_empty, "round(f*m) = 0 for f = " + std::to_string(cfg_.control_fraction) +
                                               ", m = " + std::to_string(cfg_.batch_size));
    if (data.train.size() < std::min(cfg_.batch_size, min_batch()))
      fail(ErrorKind::data, "training split has " + std::to_string(data.train.size()) +
                                " examples, fewer than the minimum batch of " + std::to_string(min_batch()));
    if (algo_ == Algorithm::predicted) cfg_.refit.validate(model_.hidden_dim());
    if (predictor) {
      require(predictor_trunk_size(*predictor) == model_.trunk_size(), ErrorKind::dimension,
              "predictor trunk size does not match the model");
      predictor_ = std::move(*predictor);
      warmup_done_ = true;
    }
    if (algo_ == Algorithm::vanilla || !cfg_.warmup) warmup_done_ = true;
    if (cfg_.budget) {
      const double one = batch_cost(std::min(cfg_.batch_size, data.train.size()));
      if (!(*cfg_.budget >= one))
        fail(ErrorKind::budget, "budget " + std::to_string(*cfg_.budget) +
                                    " is smaller than the cost of one batch (" + std::to_string(one) + ")");
    }
  }

  const Model& model() const { return model_; }
  const std::vector<StepRecord>& records() const { return records_; }
  const BudgetLedger& ledger() const { return ledger_; }
  const GradientPredictor& predictor() const { return predictor_; }
  const FitMetadata& fit_metadata() const { return fit_meta_; }
  const TrainConfig& config() const { return cfg_; }
  Algorithm algorithm() const { return algo_; }
  std::int64_t steps() const { return step_; }
  bool finished() const { return finished_; }
  double cost_units() const { return ledger_.cost_units(cfg_.cost_model); }

  /// Cost of one batch of size m under this trainer's algorithm.
  double batch_cost(std::size_t m) const {
    if (algo_ == Algorithm::vanilla) return cfg_.cost_model.vanilla_batch(m);
    const std::size_t mc = control_size(m, cfg_.control_fraction);
    return cfg_.cost_model.predicted_batch(mc, m - mc);
  }

  /// Processes the next mini-batch. Returns false once the run is over.
  bool step() {
    if (finished_) return false;
    if (!warmup_done_) run_warmup();
    std::vector<std::size_t> batch;
    if (!next_batch(batch)) {
      finished_ = true;
      return false;
    }
    if (cfg_.budget && cost_units() + batch_cost(batch.size()) > *cfg_.budget) {
      finished_ = true;
      return false;
    }

    BatchGradient bg = algo_ == Algorithm::vanilla ? vanilla_gradient(batch, &ledger_)
                                                   : predicted_gradient(batch, split_rng_, &ledger_, true);
    Vec theta = model_.parameters();
    if (cfg_.weight_decay > 0.0) bg.g += cfg_.weight_decay * theta;
    const double lr = cfg_.learning_rate / (1.0 + cfg_.lr_decay * static_cast<double>(step_));
    auto [next, state] = optimizer_step(theta, bg.g, std::move(opt_state_), lr, cfg_.momentum, cfg_.optimizer);
    opt_state_ = std::move(state);
    model_.set_parameters(next);
    ++step_;

    StepRecord rec;
    rec.step = step_;
    rec.epoch = epoch_;
    rec.loss = bg.loss;
    if (bg.full) {
      rec.rho_hat = bg.full->rho;
      rec.kappa_hat = bg.full->kappa;
      rec.phi_hat = variance_inflation(cfg_.control_fraction, bg.full->rho, bg.full->kappa);
    }
    if (bg.trunk) {
      rec.rho_hat_trunk = bg.trunk->rho;
      rec.kappa_hat_trunk = bg.trunk->kappa;
    }
    if (algo_ == Algorithm::predicted && should_refit(cfg_.refit, step_)) rec.refit = refit();
    if (cfg_.eval_every > 0 && (step_ % cfg_.eval_every == 0 || step_ == 1))
      last_val_ = evaluate_metric(model_, *data_, data_->validation, cfg_.loss);
    rec.val_metric = last_val_;
    rec.cost_units = cost_units();
    records_.push_back(rec);
    return true;
  }

  void run() {
    while (step()) {
    }
  }

  TrainResult<Model> result() const { return {model_, records_, ledger_, predictor_, step_}; }

  /// Mean of true per-example gradients over the batch.
  BatchGradient vanilla_gradient(const std::vector<std::size_t>& batch, BudgetLedger* ledger) const {
    BatchGradient bg;
    ExactVecSum acc(model_.parameter_count());
    ExactSum loss;
    const double w = 1.0 / static_cast<double>(batch.size());
    for (auto idx : batch) {
      const auto fr = model_.forward(data_->features[idx]);
      const auto lr = loss_and_residual(fr.output, data_->targets[idx], cfg_.loss);
      acc.add(model_.backward(fr.cache, lr.residual).flatten(), w);
      loss.add(lr.loss);
      if (ledger) {
        ++ledger->forward;
        ++ledger->backward;
      }
    }
    bg.g = acc.value();
    bg.loss = loss.value() / static_cast<double>(batch.size());
    bg.control = batch.size();
    return bg;
  }

  /// Debiased combined gradient for one batch. When `collect` is set,
  /// control examples are pushed into the fit buffer.
  BatchGradient predicted_gradient(const std::vector<std::size_t>& batch, Engine& split_rng,
                                   BudgetLedger* ledger, bool collect = false) {
    const double f = cfg_.control_fraction;
    const BatchSplit split = split_minibatch(batch.size(), f, split_rng);
    const std::size_t mc = split.control.size();
    const std::size_t mp = split.prediction.size();
    const Matrix& head = model_.head_weight();
    const Eigen::Index pt = model_.trunk_size();

    BatchGradient bg;
    bg.control = mc;
    bg.prediction = mp;
    ExactVecSum acc(model_.parameter_count());
    ExactSum loss;
    std::vector<Vec> gs, hs;
    gs.reserve(mc);
    hs.reserve(mc);
    const double w_true = mp == 0 ? 1.0 / static_cast<double>(mc) : f / static_cast<double>(mc);
    const double w_corr = (1.0 - f) / static_cast<double>(mc);
    const double w_pred = mp == 0 ? 0.0 : (1.0 - f) / static_cast<double>(mp);

    for (auto pos : split.control) {
      const auto idx = batch[pos];
      const auto fr = model_.forward(data_->features[idx]);
      const auto lr = loss_and_residual(fr.output, data_->targets[idx], cfg_.loss);
      GradientEstimate g = model_.backward(fr.cache, lr.residual);
      const GradientEstimate h = predict_gradient(idx, fr.llh, lr.residual);
      Vec gf = g.flatten();
      Vec hf = h.flatten();
      acc.add(gf, w_true);
      if (mp > 0) acc.add(gf - hf, w_corr);
      loss.add(lr.loss);
      if (collect) push_sample(make_fit_sample(head, fr.llh, lr.residual, std::move(g.trunk_grad)));
      gs.push_back(std::move(gf));
      hs.push_back(std::move(hf));
      if (ledger) {
        ++ledger->forward;
        ++ledger->backward;
      }
    }
    for (auto pos : split.prediction) {
      const auto idx = batch[pos];
      const auto cf = model_.cheap_forward(data_->features[idx], cfg_.reduce_precision);
      const auto lr = loss_and_residual(cf.output, data_->targets[idx], cfg_.loss);
      acc.add(predict_gradient(idx, cf.llh, lr.residual).flatten(), w_pred);
      loss.add(lr.loss);
      if (ledger) ++ledger->cheap_forward;
    }
    bg.g = acc.value();
    bg.loss = loss.value() / static_cast<double>(batch.size());
    if (mc >= 2) {
      bg.full = alignment_stats(gs, hs);
      for (auto& v : gs) v.conservativeResize(pt);
      for (auto& v : hs) v.conservativeResize(pt);
      bg.trunk = alignment_stats(gs, hs);
    }
    return bg;
  }

  // -------------------------------------------------------------------------
  // Run checkpoints: network + predictor + optimizer + RNG + loop position.

  void write_checkpoint(BinaryWriter& w) const {
    w.str("PGDRUN");
    w.u64(1);
    w.str(to_string(algo_));
    w.u64(data_->size());
    w.u64(data_->train.size());
    w.i64(step_);
    w.i64(epoch_);
    w.u64(cursor_);
    w.sizes(perm_);
    w.u64(ledger_.forward);
    w.u64(ledger_.cheap_forward);
    w.u64(ledger_.backward);
    w.str(engine_state(shuffle_rng_));
    w.str(engine_state(split_rng_));
    w.boolean(warmup_done_);
    w.boolean(finished_);
    w.f64(last_val_);
    w.vec(opt_state_.buffer);
    model_.write(w);
    write_predictor(w, predictor_, fit_meta_);
    w.u64(buffer_.size());
    w.u64(buffer_next_);
    for (const auto& s : buffer_) {
      w.vec(s.llh);
      w.vec(s.residual);
      w.vec(s.h);
      w.vec(s.trunk_grad);
    }
    w.u64(records_.size());
    for (const auto& r : records_) {
      w.i64(r.step);
      w.i64(r.epoch);
      w.f64(r.cost_units);
      w.f64(r.loss);
      w.f64(r.val_metric);
      w.f64(r.rho_hat);
      w.f64(r.kappa_hat);
      w.f64(r.phi_hat);
      w.f64(r.rho_hat_trunk);
      w.f64(r.kappa_hat_trunk);
      w.boolean(r.refit);
    }
  }

  void save_checkpoint(const std::string& path) const {
    BinaryWriter w;
    write_checkpoint(w);
    w.save(path);
  }

  /// Restores a run written by write_checkpoint. The configuration and data
  /// must be the ones the run was started with.
  static Trainer resume(BinaryReader& r, TrainConfig cfg, const Dataset& data, TrainHooks hooks = {}) {
    r.expect("PGDRUN");
    require(r.u64() == 1, ErrorKind::format, "run checkpoint: unsupported format");
    const Algorithm algo = parse_algorithm(r.str());
    const auto n = r.u64();
    const auto ntrain = r.u64();
    require(n == data.size() && ntrain == data.train.size(), ErrorKind::data,
            "run checkpoint: dataset does not match the checkpointed run");
    const auto step = r.i64();
    const auto epoch = r.i64();
    const auto cursor = r.u64();
    auto perm = r.sizes();
    BudgetLedger ledger;
    ledger.forward = r.u64();
    ledger.cheap_forward = r.u64();
    ledger.backward = r.u64();
    const auto shuffle_state = r.str();
    const auto split_state = r.str();
    const bool warmup_done = r.boolean();
    const bool finished = r.boolean();
    const double last_val = r.f64();
    OptimizerState opt{r.vec()};
    Model model = Model::read(r);
    FitMetadata meta;
    GradientPredictor pred = read_predictor(r, &meta);

    // Construct without the budget check; the ledger is restored below.
    auto budget = cfg.budget;
    cfg.budget.reset();
    Trainer t(std::move(cfg), data, std::move(model), algo, std::nullopt, hooks);
    t.cfg_.budget = budget;
    t.step_ = step;
    t.epoch_ = epoch;
    t.cursor_ = static_cast<std::size_t>(cursor);
    t.perm_ = std::move(perm);
    t.ledger_ = ledger;
    t.shuffle_rng_ = engine_from_state(shuffle_state);
    t.split_rng_ = engine_from_state(split_state);
    t.warmup_done_ = warmup_done;
    t.finished_ = finished;
    t.last_val_ = last_val;
    t.opt_state_ = std::move(opt);
    t.predictor_ = std::move(pred);
    t.fit_meta_ = meta;
    const auto nbuf = r.u64();
    t.buffer_next_ = static_cast<std::size_t>(r.u64());
    for (std::uint64_t i = 0; i < nbuf; ++i) {
      FitSample s;
      s.llh = r.vec();
      s.residual = r.vec();
      s.h = r.vec();
      s.trunk_grad = r.vec();
      t.buffer_.push_back(std::move(s));
    }
    const auto nrec = r.u64();
    for (std::uint64_t i = 0; i < nrec; ++i) {
      StepRecord rec;
      rec.step = r.i64();
      rec.epoch = r.i64();
      rec.cost_units = r.f64();
      rec.loss = r.f64();
      rec.val_metric = r.f64();
      rec.rho_hat = r.f64();
      rec.kappa_hat = r.f64();
      rec.phi_hat = r.f64();
      rec.rho_hat_trunk = r.f64();
      rec.kappa_hat_trunk = r.f64();
      rec.refit = r.boolean();
      t.records_.push_back(rec);
    }
    require(r.at_end(), ErrorKind::format, "run checkpoint: trailing data");
    return t;
  }

  static Trainer resume(const std::string& path, TrainConfig cfg, const Dataset& data, TrainHooks hooks = {}) {
    auto r = BinaryReader::from_file(path);
    return resume(r, std::move(cfg), data, hooks);
  }

 private:
  std::size_t min_batch() const {
    if (algo_ == Algorithm::vanilla) return 1;
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(1.0 / cfg_.control_fraction - 1e-12)));
  }

  // Pulls the next batch from the current epoch's shuffled order, starting a
  // new epoch when needed. A trailing partial batch below min_batch() is dropped.
  bool next_batch(std::vector<std::size_t>& batch) {
    for (int attempts = 0; attempts < 2; ++attempts) {
      if (cursor_ >= perm_.size()) {
        if (!cfg_.budget && epoch_ >= cfg_.epochs) return false;
        perm_ = data_->train;
        std::shuffle(perm_.begin(), perm_.end(), shuffle_rng_);
        cursor_ = 0;
        ++epoch_;
      }
      const std::size_t take = std::min(cfg_.batch_size, perm_.size() - cursor_);
      if (take < cfg_.batch_size && take < min_batch()) {
        cursor_ = perm_.size();
        continue;
      }
      batch.assign(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
      cursor_ += take;
      return true;
    }
    return false;
  }

  GradientEstimate predict_gradient(std::size_t idx, const Vec& llh, const Vec& residual) const {
    if (hooks_.perfect_predictor) {
      const auto fr = model_.forward(data_->features[idx]);
      const auto lr = loss_and_residual(fr.output, data_->targets[idx], cfg_.loss);
      GradientEstimate g = model_.backward(fr.cache, lr.residual);
      g.source = GradientSource::predicted;
      return g;
    }
    return predict(predictor_, llh, residual, model_.head_weight());
  }

  void push_sample(FitSample s) {
    const auto cap = static_cast<std::size_t>(cfg_.refit.buffer_capacity);
    if (buffer_.size() < cap) {
      buffer_.push_back(std::move(s));
    } else {
      buffer_[buffer_next_] = std::move(s);
      buffer_next_ = (buffer_next_ + 1) % cap;
    }
  }

  bool refit() {
    try {
      FitMetadata meta;
      GradientPredictor next = fit_predictor(buffer_, cfg_.refit, model_.output_dim(), &meta);
      meta.step = step_;
      predictor_ = std::move(next);
      fit_meta_ = meta;
      return true;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::insufficient_data && e.kind() != ErrorKind::singular_system &&
          e.kind() != ErrorKind::dimension)
        throw;
      log::warn("predictor refit skipped at step " + std::to_string(step_) + ": " + e.what());
      return false;
    }
  }

  // One batch of full passes used only to seed the fit buffer; charged to the
  // ledger. It holds at least D+1 examples so the first fit is determined.
  void run_warmup() {
    warmup_done_ = true;
    Engine rng = substream(cfg_.seed, "warmup");
    std::vector<std::size_t> pool = data_->train;
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto want = std::max<std::size_t>(cfg_.batch_size, static_cast<std::size_t>(model_.hidden_dim()) + 1);
    pool.resize(std::min(want, pool.size()));
    for (auto idx : pool) {
      const auto fr = model_.forward(data_->features[idx]);
      const auto lr = loss_and_residual(fr.output, data_->targets[idx], cfg_.loss);
      GradientEstimate g = model_.backward(fr.cache, lr.residual);
      push_sample(make_fit_sample(model_.head_weight(), fr.llh, lr.residual, std::move(g.trunk_grad)));
      ++ledger_.forward;
      ++ledger_.backward;
    }
    refit();
  }

  TrainConfig cfg_;
  const Dataset* data_;
  Model model_;
  Algorithm algo_;
  TrainHooks hooks_;
  Engine shuffle_rng_;
  Engine split_rng_;
  GradientPredictor predictor_;
  FitMetadata fit_meta_;
  std::vector<FitSample> buffer_;
  std::size_t buffer_next_ = 0;
  OptimizerState opt_state_;
  BudgetLedger ledger_;
  std::vector<StepRecord> records_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t step_ = 0;
  double last_val_ = std::numeric_limits<double>::quiet_NaN();
  bool warmup_done_ = false;
  bool finished_ = false;
};

template <TrainableModel Model>
TrainResult<Model> train_vanilla(const TrainConfig& cfg, const Dataset& data, Model model) {
  Trainer<Model> t(cfg, data, std::move(model), Algorithm::vanilla);
  t.run();
  return t.result();
}

template <TrainableModel Model>
TrainResult<Model> train_predicted(const TrainConfig& cfg, const Dataset& data, Model model,
                                   std::optional<GradientPredictor> predictor = std::nullopt,
                                   TrainHooks hooks = {}) {
  Trainer<Model> t(cfg, data, std::move(model), Algorithm::predicted, std::move(predictor), hooks);
  t.run();
  return t.result();
}

// ---------------------------------------------------------------------------
// Equal-budget comparison

struct RunSummary {
  std::vector<StepRecord> records;
  BudgetLedger ledger;
  std::int64_t steps = 0;
  double cost_units = 0.0;
  double final_train_loss = 0.0;
  double final_val_metric = 0.0;
};

struct ComparisonReport {
  double budget = 0.0;
  double f = 0.0;
  double gamma = 0.0;
  RunSummary vanilla;
  RunSummary predicted;
  // Means of the per-step estimates over the predicted run.
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  double kappa_hat = std::numeric_limits<double>::quiet_NaN();
  double rho_hat_trunk = std::numeric_limits<double>::quiet_NaN();
  double kappa_hat_trunk = std::numeric_limits<double>::quiet_NaN();
  double rho_star = std::numeric_limits<double>::quiet_NaN();  // at the measured kappa
  bool break_even = false;                                    // break-even verdict at (rho_hat, kappa_hat)
  bool predicted_not_worse = false;                           // predicted final loss <= vanilla final loss
};

namespace detail {
inline double finite_mean(const std::vector<StepRecord>& recs, double StepRecord::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : recs)
    if (std::isfinite(r.*field)) {
      s += r.*field;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

template <TrainableModel Model>
RunSummary summarize(const Trainer<Model>& t, const Dataset& data) {
  RunSummary s;
  s.records = t.records();
  s.ledger = t.ledger();
  s.steps = t.steps();
  s.cost_units = t.cost_units();
  s.final_train_loss = mean_loss(t.model(), data, data.train, t.config().loss);
  s.final_val_metric = evaluate_metric(t.model(), data, data.validation, t.config().loss);
  return s;
}
}  // namespace detail

/// Trains both algorithms from the same initial model until each has spent
/// cfg.budget cost units, then applies the break-even test to the alignment
/// measured during the predicted run.
template <TrainableModel Model>
ComparisonReport run_budgeted_comparison(const TrainConfig& cfg, const Dataset& data, const Model& init,
                                         std::optional<GradientPredictor> predictor = std::nullopt,
                                         TrainHooks hooks = {}) {
  if (!cfg.budget) fail(ErrorKind::budget, "compare: a cost budget is required");
  Trainer<Model> vanilla(cfg, data, init, Algorithm::vanilla);
  Trainer<Model> predicted(cfg, data, init, Algorithm::predicted, std::move(predictor), hooks);
  vanilla.run();
  predicted.run();

  ComparisonReport rep;
  rep.budget = *cfg.budget;
  rep.f = cfg.control_fraction;
  rep.gamma = gamma(cfg.cost_model, cfg.control_fraction);
  rep.vanilla = detail::summarize(vanilla, data);
  rep.predicted = detail::summarize(predicted, data);
  rep.rho_hat = detail::finite_mean(rep.predicted.records, &StepRecord::rho_hat);
  rep.kappa_hat = detail::finite_mean(rep.predicted.records, &StepRecord::kappa_hat);
  rep.rho_hat_trunk = detail::finite_mean(rep.predicted.records, &StepRecord::rho_hat_trunk);
  rep.kappa_hat_trunk = detail::finite_mean(rep.predicted.records, &StepRecord::kappa_hat_trunk);
  if (std::isfinite(rep.rho_hat) && rep.kappa_hat > 0.0) {
    rep.rho_star = rho_star(cfg.cost_model, cfg.control_fraction, rep.kappa_hat);
    rep.break_even = break_even_satisfied(cfg.cost_model, cfg.control_fraction,
                                          std::clamp(rep.rho_hat, -1.0, 1.0), rep.kappa_hat);
  }
  rep.predicted_not_worse = rep.predicted.final_train_loss <= rep.vanilla.final_train_loss;
  return rep;
}

}  // namespace pgd
