#pragma once

#include <map>
#include <string>

#include "eqreg/tape.hpp"

namespace eqreg {

// Named trainable tensors plus their accumulated gradients. Iteration order is
// the map order, so updates are deterministic.
template <class T>
class ParameterSet {
public:
  void add(const std::string& name, Tensor<T> t) {
    if (params_.count(name)) fail_contract("duplicate parameter name: ", name);
    t.requires_grad = true;
    params_.emplace(name, std::move(t));
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail_contract("unknown parameter: ", name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail_contract("unknown parameter: ", name);
    return it->second;
  }

  std::map<std::string, Tensor<T>>& all() { return params_; }
  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }

  // Tape-bound views; call once per tape so every step shares the same leaves.
  std::map<std::string, Tensor<T>> bind(Tape<T>& tape) const {
    std::map<std::string, Tensor<T>> bound;
    for (const auto& [name, t] : params_) bound.emplace(name, tape.watch(t));
    return bound;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) grads_[name].assign(t.numel(), T(0));
  }

  // grads += tape adjoints of the given bound views.
  void accumulate(const Tape<T>& tape, const std::map<std::string, Tensor<T>>& bound) {
    for (const auto& [name, view] : bound) {
      auto& g = grads_[name];
      if (g.empty()) g.assign(view.numel(), T(0));
      if (const auto* src = tape.grad(view.node)) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*src)[i];
      }
    }
  }

  const std::vector<T>& grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) fail_contract("no gradient for parameter: ", name);
    return it->second;
  }
  std::map<std::string, std::vector<T>>& grads() { return grads_; }

  bool all_finite() const {
    for (const auto& [name, t] : params_)
      if (!t.all_finite()) return false;
    return true;
  }

private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, std::vector<T>> grads_;
};

// AdamW with decoupled weight decay. Moments are kept in double so the update
// path is identical for f32 and f64 parameters.
template <class T>
class AdamW {
public:
  AdamW(double lr = 1e-4, double weight_decay = 1e-4, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParameterSet<T>& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, p] : ps.all()) {
      const auto& g = ps.grad(name);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) m.assign(p.numel(), 0.0);
      if (v.empty()) v.assign(p.numel(), 0.0);
      auto& pv = p.vec();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double upd = mhat / (std::sqrt(vhat) + eps_) + wd_ * static_cast<double>(pv[i]);
        pv[i] = static_cast<T>(static_cast<double>(pv[i]) - lr_ * upd);
      }
    }
    if (!ps.all_finite()) fail_numeric("non-finite parameter after AdamW step ", t_);
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace eqreg
