#pragma once

#include <cmath>
#include <deque>
#include <functional>

#include "eqreg/common.hpp"
#include "eqreg/linalg.hpp"

namespace eqreg {

enum class SolveMethod { Plain, Anderson };

struct SolverConfig {
  int max_steps = 48;
  double rel_tol = 1e-3;
  SolveMethod method = SolveMethod::Anderson;
  int anderson_memory = 5;
};

struct SolverReport {
  int steps_used = 0;
  std::vector<double> residual_trace;  // ||u_{t+1}-u_t|| / (||u_t|| + eps)
  bool converged = false;
};

inline constexpr double kResidualEps = 1e-8;

template <class T>
double relative_residual(const std::vector<T>& next, const std::vector<T>& prev) {
  double diff2 = 0, prev2 = 0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    const double d = static_cast<double>(next[i]) - static_cast<double>(prev[i]);
    diff2 += d * d;
    prev2 += static_cast<double>(prev[i]) * static_cast<double>(prev[i]);
  }
  return std::sqrt(diff2) / (std::sqrt(prev2) + kResidualEps);
}

// Fixed-point iteration u <- g(u) on flat states, plain or Anderson-accelerated.
// Non-convergence within the budget is reported, not thrown. When `trajectory`
// is given it receives every iterate including u_0 and the final state.
template <class T>
SolverReport fixed_point_solve(const std::function<std::vector<T>(const std::vector<T>&)>& g,
                               std::vector<T>& u, const SolverConfig& cfg,
                               std::vector<std::vector<T>>* trajectory = nullptr) {
  if (cfg.max_steps < 1) fail_contract("fixed_point_solve: max_steps must be >= 1");
  if (cfg.rel_tol <= 0) fail_contract("fixed_point_solve: rel_tol must be > 0");
  if (cfg.anderson_memory < 1) fail_contract("fixed_point_solve: anderson memory must be >= 1");
  SolverReport rep;
  if (trajectory) trajectory->push_back(u);

  const std::size_t dim = u.size();
  std::deque<std::vector<double>> du_hist, df_hist;  // difference columns
  std::vector<double> f_prev, u_prev_d;

  for (int t = 0; t < cfg.max_steps; ++t) {
    std::vector<T> gu = g(u);
    if (gu.size() != dim) fail_contract("fixed_point_solve: map changed dimension");
    for (T v : gu)
      if (!std::isfinite(static_cast<double>(v)))
        fail_numeric("fixed_point_solve: non-finite iterate at step ", t + 1);

    std::vector<T> next;
    if (cfg.method == SolveMethod::Plain) {
      next = std::move(gu);
    } else {
      // Anderson: mix recent residual differences, fall back to a plain step
      // when the mixing system is ill-conditioned.
      std::vector<double> f(dim);
      for (std::size_t i = 0; i < dim; ++i)
        f[i] = static_cast<double>(gu[i]) - static_cast<double>(u[i]);
      if (!f_prev.empty()) {
        std::vector<double> du(dim), df(dim);
        for (std::size_t i = 0; i < dim; ++i) {
          du[i] = static_cast<double>(u[i]) - u_prev_d[i];
          df[i] = f[i] - f_prev[i];
        }
        du_hist.push_back(std::move(du));
        df_hist.push_back(std::move(df));
        if (static_cast<int>(du_hist.size()) > cfg.anderson_memory) {
          du_hist.pop_front();
          df_hist.pop_front();
        }
      }
      u_prev_d.assign(u.begin(), u.end());
      f_prev = f;

      next.assign(dim, T(0));
      bool mixed = false;
      const std::size_t m = df_hist.size();
      if (m > 0) {
        std::vector<double> gram(m * m), rhs(m);
        double diag_max = 0;
        for (std::size_t a = 0; a < m; ++a) {
          for (std::size_t b = a; b < m; ++b) {
            double s = 0;
            for (std::size_t i = 0; i < dim; ++i) s += df_hist[a][i] * df_hist[b][i];
            gram[a * m + b] = s;
            gram[b * m + a] = s;
          }
          diag_max = std::max(diag_max, gram[a * m + a]);
          double s = 0;
          for (std::size_t i = 0; i < dim; ++i) s += df_hist[a][i] * f[i];
          rhs[a] = s;
        }
        // light Tikhonov so near-duplicate columns stay solvable
        for (std::size_t a = 0; a < m; ++a) gram[a * m + a] += 1e-12 * diag_max;
        std::vector<double> A = gram, gamma = rhs;
        const double pivot = linalg::solve_inplace(A, gamma, m);
        if (pivot > 1e-10 * (diag_max + 1e-300)) {
          for (std::size_t i = 0; i < dim; ++i) {
            double v = static_cast<double>(gu[i]);
            for (std::size_t a = 0; a < m; ++a)
              v -= gamma[a] * (du_hist[a][i] + df_hist[a][i]);
            next[i] = static_cast<T>(v);
          }
          mixed = true;
          bool finite = true;
          for (T v : next)
            if (!std::isfinite(static_cast<double>(v))) { finite = false; break; }
          if (!finite) mixed = false;
        }
      }
      if (!mixed) next = gu;
    }

    const double res = relative_residual(next, u);
    rep.residual_trace.push_back(res);
    u = std::move(next);
    rep.steps_used = t + 1;
    if (trajectory) trajectory->push_back(u);
    if (res < cfg.rel_tol) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

}  // namespace eqreg
