#pragma once

#include <algorithm>
#include <cmath>

#include "eqreg/image_ops.hpp"

namespace eqreg {

struct ClassicalConfig {
  double lambda = 0.1;
  double eta0 = 1.0;    // max step length in pixels (gradient is sup-normalised)
  int max_iters = 200;
  double tol = 1e-5;    // relative loss-change stopping threshold
  int window = 5;
  bool adapt = true;    // backtracking line search; false = fixed eta0 steps
};

template <class T>
struct ClassicalResult {
  Tensor<T> field;
  std::vector<double> loss_trace;  // initial loss plus one entry per accepted step
  int iters_used = 0;
  bool converged = false;
};

// Iterative registration by descent on the registration objective. The raw
// LNCC gradient has magnitude ~1e-4 per pixel, so steps use the
// sup-normalised direction and eta is the step length in pixels: halved when
// the loss would increase, grown 1.1x on success, capped at eta0.
template <class T>
ClassicalResult<T> classical_register(const Tensor<T>& fixed, const Tensor<T>& moving,
                                      const ClassicalConfig& cfg) {
  if (cfg.eta0 <= 0) fail_contract("classical_register: eta0 must be > 0");
  if (cfg.max_iters < 1) fail_contract("classical_register: max_iters must be >= 1");
  Tape<T> tape;
  Tensor<T> u = Tensor<T>::zeros({1, 2, fixed.shape[2], fixed.shape[3]});

  const auto eval_loss = [&](const Tensor<T>& field) {
    NoGradScope ng(tape);
    return static_cast<double>(
        total_loss(tape, fixed, moving, field, cfg.lambda, cfg.window).item());
  };

  ClassicalResult<T> res;
  double loss_prev = eval_loss(u);
  res.loss_trace.push_back(loss_prev);
  double eta = cfg.eta0;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    tape.reset();
    Tensor<T> uw = tape.watch(u);
    Tensor<T> loss = total_loss(tape, fixed, moving, uw, cfg.lambda, cfg.window);
    const double loss_val = static_cast<double>(loss.item());
    if (!std::isfinite(loss_val))
      fail_numeric("classical_register: non-finite loss at iteration ", it);
    tape.backward(loss);
    Tensor<T> g = tape.grad_of(uw);
    double gmax = 0;
    for (T v : g.vec()) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
    if (gmax == 0) {
      res.converged = true;
      break;
    }

    const auto candidate = [&](double step) {
      Tensor<T> c = u.detached();
      const double s = step / gmax;
      for (std::size_t i = 0; i < c.numel(); ++i)
        c.vec()[i] -= static_cast<T>(s * static_cast<double>(g.vec()[i]));
      return c;
    };

    Tensor<T> next;
    double loss_next;
    if (cfg.adapt) {
      bool accepted = false;
      while (eta > 1e-12) {
        next = candidate(eta);
        loss_next = eval_loss(next);
        if (std::isfinite(loss_next) && loss_next <= loss_val) {
          accepted = true;
          break;
        }
        eta *= 0.5;
      }
      if (!accepted) {
        res.converged = true;
        break;
      }
      eta = std::min(eta * 1.1, cfg.eta0);
    } else {
      next = candidate(cfg.eta0);
      loss_next = eval_loss(next);
      if (!std::isfinite(loss_next))
        fail_numeric("classical_register: non-finite loss at iteration ", it);
    }

    u = std::move(next);
    res.loss_trace.push_back(loss_next);
    res.iters_used = it;
    if (std::abs(loss_prev) > 0 &&
        std::abs(loss_next - loss_prev) / std::abs(loss_prev) < cfg.tol) {
      res.converged = true;
      loss_prev = loss_next;
      break;
    }
    loss_prev = loss_next;
  }
  res.field = std::move(u);
  return res;
}

}  // namespace eqreg
