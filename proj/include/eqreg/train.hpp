#pragma once

#include <functional>
#include <numeric>

#include "eqreg/deq.hpp"
#include "eqreg/synth.hpp"
#include "eqreg/unroll.hpp"

namespace eqreg {

struct TrainConfig {
  std::string mode = "unroll";  // unroll | deq
  double lambda = 0.1;
  int window = 5;
  int epochs = 30;
  double lr = 1e-4;
  bool lr_decay = true;  // step decay to 0.3x / 0.1x at 60% / 85% of epochs
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double alpha = 1.0;
  std::size_t hidden = 16;
  double init_std = 0.35;
  int batch = 1;  // pairs per optimizer update (gradient accumulation)
  // unroll
  int t_train = 3;
  WeightScheme scheme = WeightScheme::FinalOnly;
  // deq
  SolverConfig solver;
  PhantomConfig phantom;
  int sampled_states = 3;  // S
  double gamma = 0.5;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double mean_solver_steps = 0;   // deq only
  double mean_residual = 0;       // deq only
};

template <class T>
struct TrainResult {
  UpdateNet<T> net;
  std::vector<EpochLog> log;
};

// Single-threaded SGD over the pair list, AdamW updates, deterministic
// seeded shuffling per epoch. `warm_start` seeds the parameters from an
// existing model (e.g. equilibrium training refining an unrolled one).
template <class T>
TrainResult<T> train_model(const std::vector<SyntheticPair>& pairs, const TrainConfig& cfg,
                           const std::function<void(const EpochLog&)>& on_epoch = {},
                           const UpdateNet<T>* warm_start = nullptr) {
  if (pairs.empty()) fail_contract("train_model: no training pairs");
  if (cfg.mode != "unroll" && cfg.mode != "deq")
    fail_contract("train_model: unknown mode ", cfg.mode);

  TrainResult<T> res;
  if (warm_start) {
    res.net.alpha = warm_start->alpha;
    res.net.hidden = warm_start->hidden;
    for (const auto& [name, p] : warm_start->params.all())
      res.net.params.add(name, p.detached());
  } else {
    res.net = UpdateNet<T>::make(cfg.seed, cfg.alpha, cfg.hidden, cfg.init_std);
  }
  AdamW<T> opt(cfg.lr, cfg.weight_decay);
  Rng shuffle_rng(cfg.seed ^ 0x5bf0363546069117ull);

  // pre-convert images once
  std::vector<Tensor<T>> fixed, moving;
  fixed.reserve(pairs.size());
  moving.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<T> fv(p.fixed.size()), mv(p.moving.size());
    for (std::size_t i = 0; i < fv.size(); ++i) fv[i] = static_cast<T>(p.fixed[i]);
    for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = static_cast<T>(p.moving[i]);
    fixed.emplace_back(Shape{1, 1, p.h, p.w}, std::move(fv));
    moving.emplace_back(Shape{1, 1, p.h, p.w}, std::move(mv));
  }

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Tape<T> tape;

  UnrollConfig unroll_cfg{cfg.t_train, cfg.scheme};

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_decay) {
      double factor = 1.0;
      if (epoch > 0.85 * cfg.epochs)
        factor = 0.1;
      else if (epoch > 0.6 * cfg.epochs)
        factor = 0.3;
      opt.set_lr(cfg.lr * factor);
    }
    // Fisher-Yates with the deterministic generator
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    EpochLog log;
    log.epoch = epoch;
    int in_batch = 0;
    res.net.params.zero_grad();
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t idx = order[k];
      tape.reset();
      if (cfg.mode == "unroll") {
        Tensor<T> loss = bptt_loss(tape, res.net, fixed[idx], moving[idx], unroll_cfg,
                                   cfg.lambda, cfg.window);
        tape.backward(loss);
        auto bound = res.net.params.bind(tape);
        res.net.params.accumulate(tape, bound);
        log.loss += static_cast<double>(loss.item());
      } else {
        auto dl = deq_loss(tape, res.net, fixed[idx], moving[idx], cfg.solver,
                           cfg.phantom, cfg.sampled_states, cfg.gamma, cfg.lambda,
                           cfg.window);
        log.loss += dl.total;
        log.mean_solver_steps += dl.report.steps_used;
        log.mean_residual += dl.report.residual_trace.empty()
                                 ? 0.0
                                 : dl.report.residual_trace.back();
      }
      if (++in_batch >= cfg.batch || k + 1 == order.size()) {
        opt.step(res.net.params);
        res.net.params.zero_grad();
        in_batch = 0;
      }
    }
    const double n = static_cast<double>(pairs.size());
    log.loss /= n;
    log.mean_solver_steps /= n;
    log.mean_residual /= n;
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

}  // namespace eqreg
