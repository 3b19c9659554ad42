#pragma once

#include <algorithm>
#include <set>

#include "eqreg/classical.hpp"
#include "eqreg/deq.hpp"
#include "eqreg/metrics.hpp"
#include "eqreg/synth.hpp"
#include "eqreg/unroll.hpp"

namespace eqreg {

enum class RegMode { Zero, Classical, Unroll, Deq, GroundTruth };

inline RegMode parse_mode(const std::string& s) {
  if (s == "zero") return RegMode::Zero;
  if (s == "classical") return RegMode::Classical;
  if (s == "unroll") return RegMode::Unroll;
  if (s == "deq") return RegMode::Deq;
  if (s == "gt") return RegMode::GroundTruth;
  fail_contract("unknown registration mode: ", s);
}

struct EvalRecord {
  double dice = 0;
  double hd = 0;           // mean over labels present in both masks
  double tre = 0;
  double folded_fraction = 0;
  double std_log_jdet = 0;
  int steps = 0;           // requested inference budget
  int steps_used = 0;
  double residual = 0;     // final relative residual of the iteration
  bool converged = false;
};

// Inference configuration shared by the evaluation entry points.
template <class T>
struct EvalContext {
  RegMode mode = RegMode::Zero;
  const UpdateNet<T>* net = nullptr;
  SolverConfig solver;          // deq
  ClassicalConfig classical;    // classical
};

template <class T>
struct InferredField {
  Tensor<T> field;
  int steps_used = 0;
  double residual = 0;
  bool converged = false;
};

template <class T>
InferredField<T> infer_field(const EvalContext<T>& ctx, const SyntheticPair& pair,
                             int steps) {
  const Shape img_shape{1, 1, pair.h, pair.w};
  const Shape field_shape{1, 2, pair.h, pair.w};
  InferredField<T> out;
  switch (ctx.mode) {
    case RegMode::Zero: {
      out.field = Tensor<T>::zeros(field_shape);
      out.converged = true;
      return out;
    }
    case RegMode::GroundTruth: {
      std::vector<T> v(pair.gt_field.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(pair.gt_field[i]);
      out.field = Tensor<T>(field_shape, std::move(v));
      out.converged = true;
      return out;
    }
    default: break;
  }

  std::vector<T> fv(pair.fixed.size()), mv(pair.moving.size());
  for (std::size_t i = 0; i < fv.size(); ++i) fv[i] = static_cast<T>(pair.fixed[i]);
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = static_cast<T>(pair.moving[i]);
  Tensor<T> fixed(img_shape, std::move(fv));
  Tensor<T> moving(img_shape, std::move(mv));

  if (ctx.mode == RegMode::Classical) {
    ClassicalConfig cfg = ctx.classical;
    cfg.max_iters = steps;
    auto res = classical_register(fixed, moving, cfg);
    out.field = std::move(res.field);
    out.steps_used = res.iters_used;
    out.converged = res.converged;
    if (res.loss_trace.size() >= 2) {
      const double prev = res.loss_trace[res.loss_trace.size() - 2];
      const double last = res.loss_trace.back();
      out.residual = std::abs(last - prev) / (std::abs(prev) + kResidualEps);
    }
    return out;
  }

  if (!ctx.net) fail_contract("infer_field: learned mode requires a model");
  Tape<T> tape;
  NoGradScope ng(tape);
  if (ctx.mode == RegMode::Unroll) {
    auto traj = unroll_forward(tape, *ctx.net, fixed, moving, steps);
    out.field = traj.back();
    out.steps_used = steps;
    if (traj.size() >= 2)
      out.residual = relative_residual(traj[traj.size() - 1].vec(),
                                       traj[traj.size() - 2].vec());
    out.converged = out.residual < ctx.solver.rel_tol;
    return out;
  }

  SolverConfig cfg = ctx.solver;
  cfg.max_steps = steps;
  auto eq = solve_equilibrium(tape, *ctx.net, fixed, moving, cfg);
  out.field = std::move(eq.state);
  out.steps_used = eq.report.steps_used;
  out.residual = eq.report.residual_trace.empty() ? 0.0
                                                  : eq.report.residual_trace.back();
  out.converged = eq.report.converged;
  return out;
}

// Labels common to both masks, for the Hausdorff mean.
inline std::vector<int> common_labels(const std::vector<std::uint8_t>& a,
                                      const std::vector<std::uint8_t>& b) {
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::vector<int> out;
  for (int l : sa)
    if (l != 0 && sb.count(l)) out.push_back(l);
  return out;
}

inline EvalRecord score_field(const std::vector<double>& field, const SyntheticPair& pair) {
  EvalRecord rec;
  const auto warped = warp_labels(pair.labels_moving, field.data(), pair.h, pair.w);
  rec.dice = dice(pair.labels_fixed, warped).mean;
  const auto labels = common_labels(pair.labels_fixed, warped);
  double hd_sum = 0;
  for (int l : labels)
    hd_sum += hausdorff(pair.labels_fixed, warped, pair.h, pair.w, l);
  rec.hd = labels.empty() ? 0.0 : hd_sum / static_cast<double>(labels.size());
  rec.tre = tre(pair.kp_fixed, pair.kp_moving, field.data(), pair.h, pair.w).mean;
  const auto jac = jacobian_stats(field.data(), pair.h, pair.w);
  rec.folded_fraction = jac.folded_fraction;
  rec.std_log_jdet = jac.std_log_jdet;
  return rec;
}

template <class T>
EvalRecord evaluate_pair(const EvalContext<T>& ctx, const SyntheticPair& pair, int steps) {
  if (steps < 1 && ctx.mode != RegMode::Zero && ctx.mode != RegMode::GroundTruth)
    fail_contract("evaluate_pair: steps must be >= 1 for iterative modes");
  auto inf = infer_field(ctx, pair, steps);
  std::vector<double> field(inf.field.numel());
  for (std::size_t i = 0; i < field.size(); ++i)
    field[i] = static_cast<double>(inf.field.vec()[i]);
  EvalRecord rec = score_field(field, pair);
  rec.steps = steps;
  rec.steps_used = inf.steps_used;
  rec.residual = inf.residual;
  rec.converged = inf.converged;
  return rec;
}

struct StepAggregate {
  int steps = 0;
  double dice_mean = 0, dice_std = 0;
  double hd_mean = 0;
  double tre_mean = 0;
  double folded_mean = 0, folded_std = 0;
  double std_log_jdet_mean = 0;
  double residual_mean = 0;
  double converged_fraction = 0;
};

struct SweepResult {
  std::vector<StepAggregate> per_step;
  std::vector<std::vector<EvalRecord>> records;  // [step index][pair index]
  int trained_steps = 0;
  int best_dice_steps = 0;
};

template <class T>
SweepResult convergence_sweep(const EvalContext<T>& ctx,
                              const std::vector<SyntheticPair>& pairs,
                              const std::vector<int>& step_counts, int trained_steps) {
  if (step_counts.empty()) fail_contract("convergence_sweep: empty step list");
  for (std::size_t i = 1; i < step_counts.size(); ++i)
    if (step_counts[i] <= step_counts[i - 1])
      fail_contract("convergence_sweep: step counts must be strictly increasing");
  SweepResult res;
  res.trained_steps = trained_steps;
  double best_dice = -1;
  for (int steps : step_counts) {
    std::vector<EvalRecord> recs;
    recs.reserve(pairs.size());
    for (const auto& p : pairs) recs.push_back(evaluate_pair(ctx, p, steps));
    StepAggregate agg;
    agg.steps = steps;
    const double n = static_cast<double>(recs.size());
    double d2 = 0, f2 = 0;
    for (const auto& r : recs) {
      agg.dice_mean += r.dice;
      agg.hd_mean += r.hd;
      agg.tre_mean += r.tre;
      agg.folded_mean += r.folded_fraction;
      agg.std_log_jdet_mean += r.std_log_jdet;
      agg.residual_mean += r.residual;
      agg.converged_fraction += r.converged ? 1.0 : 0.0;
    }
    agg.dice_mean /= n;
    agg.hd_mean /= n;
    agg.tre_mean /= n;
    agg.folded_mean /= n;
    agg.std_log_jdet_mean /= n;
    agg.residual_mean /= n;
    agg.converged_fraction /= n;
    for (const auto& r : recs) {
      d2 += (r.dice - agg.dice_mean) * (r.dice - agg.dice_mean);
      f2 += (r.folded_fraction - agg.folded_mean) * (r.folded_fraction - agg.folded_mean);
    }
    agg.dice_std = std::sqrt(d2 / n);
    agg.folded_std = std::sqrt(f2 / n);
    if (agg.dice_mean > best_dice) {
      best_dice = agg.dice_mean;
      res.best_dice_steps = steps;
    }
    res.per_step.push_back(agg);
    res.records.push_back(std::move(recs));
  }
  return res;
}

}  // namespace eqreg
