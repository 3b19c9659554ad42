#pragma once

#include <atomic>
#include <cmath>
#include <iostream>

#include "eqreg/network.hpp"
#include "eqreg/solver.hpp"

namespace eqreg {

struct PhantomConfig {
  double tau = 0.5;  // damping in (0,1]
  int steps = 5;     // K
};

inline void check_phantom(const PhantomConfig& cfg) {
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0))
    fail_contract("phantom: tau must be in (0,1], got ", cfg.tau);
  if (cfg.steps < 1) fail_contract("phantom: K must be >= 1, got ", cfg.steps);
}

// The deq core works on any parameterised equilibrium map
//   MapFn: (Tape<T>&, const std::map<std::string,Tensor<T>>& bound, const Tensor<T>& u)
//          -> Tensor<T>
// which lets the scalar and tiny-net oracles exercise the exact same code
// path as the full registration model.

template <class T>
struct EquilibriumResult {
  Tensor<T> state;  // u*, untracked
  SolverReport report;
  std::vector<std::vector<T>> trajectory;  // iterate values incl. u_0 and u*
};

// Gradient-free equilibrium solve u = g(u); contributes zero stored state.
template <class T, class MapFn>
EquilibriumResult<T> solve_equilibrium_map(Tape<T>& tape, const ParameterSet<T>& params,
                                           MapFn&& map_fn, const Tensor<T>& u0,
                                           const SolverConfig& cfg,
                                           bool keep_trajectory = false) {
  NoGradScope ng(tape);
  auto bound = params.bind(tape);  // untracked views under no-grad
  const Shape shape = u0.shape;
  const auto g = [&](const std::vector<T>& flat) {
    Tensor<T> u(shape, flat);
    return map_fn(tape, bound, u).vec();
  };
  EquilibriumResult<T> res;
  std::vector<T> state = u0.vec();
  res.report = fixed_point_solve<T>(g, state, cfg,
                                    keep_trajectory ? &res.trajectory : nullptr);
  res.state = Tensor<T>(shape, std::move(state));
  return res;
}

// Damped sequence launched at a detached state. `states` are the K
// linearisation points [phi^0 ... phi^{K-1}]; `final_state` is the result of
// the K-th damped step, where the loss is applied, so backward runs through
// exactly K recorded steps.
template <class T>
struct PhantomRollout {
  std::vector<Tensor<T>> states;
  Tensor<T> final_state;
};

template <class T, class MapFn>
PhantomRollout<T> phantom_sequence_map(Tape<T>& tape, const ParameterSet<T>& params,
                                       MapFn&& map_fn, const Tensor<T>& start,
                                       const PhantomConfig& cfg) {
  check_phantom(cfg);
  auto bound = params.bind(tape);
  PhantomRollout<T> roll;
  Tensor<T> cur = detach(start);
  roll.states.push_back(cur);
  for (int p = 0; p < cfg.steps; ++p) {
    Tensor<T> g = map_fn(tape, bound, cur);
    Tensor<T> next = cfg.tau == 1.0
                         ? g
                         : add(tape, scale(tape, g, cfg.tau),
                               scale(tape, cur, 1.0 - cfg.tau));
    if (p + 1 < cfg.steps) roll.states.push_back(next);
    cur = std::move(next);
  }
  roll.final_state = cur;
  return roll;
}

// Phantom-gradient backward: scalar loss on the rollout's final state,
// ordinary reverse sweep through the K damped steps, gradients accumulated
// into the parameter set.
template <class T>
double phantom_gradient(Tape<T>& tape, ParameterSet<T>& params, const Tensor<T>& loss) {
  tape.backward(loss);
  params.accumulate(tape, params.bind(tape));
  return static_cast<double>(loss.item());
}

// Exact implicit-function-theorem gradient at a solved fixed point:
//   dL/dtheta = dL/du* (I - dg/du*)^{-1} dg/dtheta.
// Dense Jacobians assembled with one seeded backward pass per state
// component; test oracle only, state dimension capped at 512.
template <class T, class MapFn>
std::map<std::string, Tensor<T>> ift_gradient_exact_map(const ParameterSet<T>& params,
                                                        MapFn&& map_fn,
                                                        const Tensor<T>& u_star,
                                                        const Tensor<T>& loss_grad) {
  const std::size_t n = u_star.numel();
  if (n > 512)
    fail_contract("ift_gradient_exact: state dimension ", n, " exceeds oracle cap 512");
  if (loss_grad.numel() != n)
    fail_contract("ift_gradient_exact: loss_grad numel ", loss_grad.numel(), " != state ",
                  n);

  std::vector<double> ImJt(n * n, 0.0);  // (I - dg/du*)^T
  std::map<std::string, std::vector<std::vector<double>>> jtheta;  // rows: dg_i/dtheta
  Tape<T> tape;
  for (std::size_t i = 0; i < n; ++i) {
    tape.reset();
    auto bound = params.bind(tape);
    Tensor<T> u = tape.watch(u_star);
    Tensor<T> g = map_fn(tape, bound, u);
    if (g.numel() != n) fail_contract("ift_gradient_exact: map changed dimension");
    std::vector<T> seed(n, T(0));
    seed[i] = T(1);
    tape.backward_seeded(g, std::span<const T>(seed.data(), seed.size()));
    Tensor<T> du = tape.grad_of(u);
    for (std::size_t j = 0; j < n; ++j) {
      const double jac = static_cast<double>(du.vec()[j]);  // dg_i/du_j
      ImJt[j * n + i] = (i == j ? 1.0 : 0.0) - jac;
    }
    for (const auto& [name, view] : bound) {
      Tensor<T> dth = tape.grad_of(view);
      jtheta[name].emplace_back(dth.vec().begin(), dth.vec().end());
    }
  }

  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<double>(loss_grad.vec()[i]);
  std::vector<double> A = ImJt;
  double max_abs = 0;
  for (double v : A) max_abs = std::max(max_abs, std::abs(v));
  const double pivot = linalg::solve_inplace(A, w, n);
  if (pivot < 1e-12 * (max_abs + 1e-300)) {
    std::vector<double> base(n * n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) base[r * n + c] = ImJt[c * n + r];
    fail_numeric(
        "ift_gradient_exact: (I - dg/du*) is singular; smallest singular value ~ ",
        linalg::smallest_singular_value(std::move(base), n));
  }

  std::map<std::string, Tensor<T>> grads;
  for (const auto& [name, rows] : jtheta) {
    const Tensor<T>& p = params.at(name);
    Tensor<T> gp = Tensor<T>::zeros(p.shape);
    for (std::size_t k = 0; k < p.numel(); ++k) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += w[i] * rows[i][k];
      gp.vec()[k] = static_cast<T>(acc);
    }
    grads.emplace(name, std::move(gp));
  }
  return grads;
}

// ---- registration-model wrappers ----

template <class T>
auto registration_map(const UpdateNet<T>& net, const Tensor<T>& fixed,
                      const Tensor<T>& moving) {
  return [&net, &fixed, &moving](Tape<T>& tape, const typename UpdateNet<T>::Bound& b,
                                 const Tensor<T>& u) {
    return net.equilibrium_map(tape, b, fixed, moving, u);
  };
}

template <class T>
EquilibriumResult<T> solve_equilibrium(Tape<T>& tape, const UpdateNet<T>& net,
                                       const Tensor<T>& fixed, const Tensor<T>& moving,
                                       const SolverConfig& cfg,
                                       bool keep_trajectory = false) {
  const Tensor<T> u0 = Tensor<T>::zeros({1, 2, fixed.shape[2], fixed.shape[3]});
  return solve_equilibrium_map(tape, net.params, registration_map(net, fixed, moving),
                               u0, cfg, keep_trajectory);
}

template <class T>
PhantomRollout<T> phantom_sequence(Tape<T>& tape, const UpdateNet<T>& net,
                                   const Tensor<T>& fixed, const Tensor<T>& moving,
                                   const Tensor<T>& start, const PhantomConfig& cfg) {
  return phantom_sequence_map(tape, net.params, registration_map(net, fixed, moving),
                              start, cfg);
}

template <class T>
std::map<std::string, Tensor<T>> ift_gradient_exact(const UpdateNet<T>& net,
                                                    const Tensor<T>& fixed,
                                                    const Tensor<T>& moving,
                                                    const Tensor<T>& u_star,
                                                    const Tensor<T>& loss_grad) {
  return ift_gradient_exact_map(net.params, registration_map(net, fixed, moving), u_star,
                                loss_grad);
}

template <class T>
struct DeqLossResult {
  double total = 0;
  SolverReport report;
  int sampled_states = 0;
  bool clamped = false;  // requested S exceeded the realised trajectory
};

// Equilibrium training loss: L(phi*) + gamma * sum over S intermediate states
// sampled at equal intervals from the solver trajectory. Each term is
// differentiated through its own phantom rollout; parameter gradients
// accumulate into net.params. Stored tape state depends only on K and S,
// never on the solver budget.
template <class T>
DeqLossResult<T> deq_loss(Tape<T>& tape, UpdateNet<T>& net, const Tensor<T>& fixed,
                          const Tensor<T>& moving, const SolverConfig& solver,
                          const PhantomConfig& phantom, int S, double gamma,
                          double lambda, int window = 5) {
  if (S < 0) fail_contract("deq_loss: S must be >= 0, got ", S);
  if (S > 0 && gamma <= 0) fail_contract("deq_loss: gamma must be > 0 when S > 0");

  auto eq = solve_equilibrium(tape, net, fixed, moving, solver, S > 0);

  DeqLossResult<T> res;
  res.report = eq.report;

  std::vector<std::pair<Tensor<T>, double>> terms;
  terms.emplace_back(eq.state, 1.0);
  if (S > 0) {
    const int N = static_cast<int>(eq.trajectory.size()) - 1;
    int s_eff = S;
    if (S > N + 1) {
      s_eff = N + 1;
      res.clamped = true;
      static std::atomic<int> warned{0};
      if (warned.fetch_add(1) < 3)
        std::cerr << "[eqreg] warning: requested " << S
                  << " intermediate states but trajectory has " << N + 1
                  << "; clamping\n";
    }
    for (int i = 1; i <= s_eff; ++i) {
      const int idx = static_cast<int>(std::lround(static_cast<double>(i) *
                                                   static_cast<double>(N) /
                                                   static_cast<double>(s_eff + 1)));
      terms.emplace_back(Tensor<T>(eq.state.shape, eq.trajectory[std::min(idx, N)]),
                         gamma);
    }
    res.sampled_states = s_eff;
  }

  auto bound = net.params.bind(tape);
  for (auto& [state, weight] : terms) {
    PhantomRollout<T> roll = phantom_sequence(tape, net, fixed, moving, state, phantom);
    Tensor<T> loss = total_loss(tape, fixed, moving, roll.final_state, lambda, window);
    Tensor<T> weighted = weight == 1.0 ? loss : scale(tape, loss, weight);
    tape.backward(weighted);
    net.params.accumulate(tape, bound);
    res.total += static_cast<double>(weighted.item());
  }
  return res;
}

}  // namespace eqreg
