#pragma once

#include <cmath>

#include "eqreg/network.hpp"

namespace eqreg {

enum class WeightScheme {
  FinalOnly,    // w_t = 0: only the final-state loss
  Exponential,  // w_t = 10^((t-1)/(T-1)), t = 1..T
};

struct UnrollConfig {
  int steps = 3;
  WeightScheme scheme = WeightScheme::FinalOnly;
};

inline double unroll_weight(WeightScheme scheme, int t, int T) {
  if (scheme == WeightScheme::FinalOnly) return 0.0;
  if (T <= 1) return 1.0;
  return std::pow(10.0, static_cast<double>(t - 1) / static_cast<double>(T - 1));
}

// Repeated weight-tied updates from u_0 = 0. Returns [u_0 ... u_{t_inf}].
// Records on the tape whenever grads are enabled; wrap in NoGradScope for
// inference.
template <class T>
std::vector<Tensor<T>> unroll_forward(Tape<T>& tape, const UpdateNet<T>& net,
                                      const Tensor<T>& fixed, const Tensor<T>& moving,
                                      int t_inf) {
  if (t_inf < 0) fail_contract("unroll_forward: steps must be >= 0, got ", t_inf);
  auto bound = net.params.bind(tape);
  std::vector<Tensor<T>> traj;
  traj.reserve(t_inf + 1);
  traj.push_back(Tensor<T>::zeros({1, 2, fixed.shape[2], fixed.shape[3]}));
  for (int t = 1; t <= t_inf; ++t) {
    Tensor<T> next = net.step(tape, bound, fixed, moving, traj.back());
    if (!next.all_finite()) fail_numeric("unroll_forward: non-finite field at step ", t);
    traj.push_back(std::move(next));
  }
  return traj;
}

// Training objective over the unrolled trajectory:
//   L(phi_T) + sum_t w_t L(phi_t), every step on the tape.
template <class T>
Tensor<T> bptt_loss(Tape<T>& tape, const UpdateNet<T>& net, const Tensor<T>& fixed,
                    const Tensor<T>& moving, const UnrollConfig& cfg, double lambda,
                    int window = 5) {
  if (cfg.steps < 1) fail_contract("bptt_loss: T must be >= 1, got ", cfg.steps);
  auto bound = net.params.bind(tape);
  Tensor<T> u = Tensor<T>::zeros({1, 2, fixed.shape[2], fixed.shape[3]});
  Tensor<T> total;
  bool have_total = false;
  for (int t = 1; t <= cfg.steps; ++t) {
    u = net.step(tape, bound, fixed, moving, u);
    if (!u.all_finite()) fail_numeric("bptt_loss: non-finite field at step ", t);
    const double w = unroll_weight(cfg.scheme, t, cfg.steps);
    const bool is_final = t == cfg.steps;
    if (w == 0.0 && !is_final) continue;
    Tensor<T> lt = total_loss(tape, fixed, moving, u, lambda, window);
    // final state carries both the standalone term and its weighted term
    Tensor<T> term = is_final
                         ? (w == 0.0 ? lt : scale(tape, lt, 1.0 + w))
                         : scale(tape, lt, w);
    total = have_total ? add(tape, total, term) : term;
    have_total = true;
  }
  return total;
}

}  // namespace eqreg
