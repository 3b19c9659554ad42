#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "eqreg/common.hpp"
#include "eqreg/kernels.hpp"
#include "eqreg/tensor.hpp"

namespace eqreg {

enum class OpKind : std::uint8_t {
  Leaf,
  Conv2d,
  ConcatC,
  Add,
  Sub,
  Mul,
  Tanh,
  Scale,
  Mean,
  Sample,
  Lncc,
  DiffReg,
};

// One recorded operation. `saved` holds the arrays retained for the backward
// rule; sharing the storage of the forward tensors, not copying it.
template <class T>
struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<int> ins;           // tape ids of inputs, -1 = untracked input
  std::vector<Tensor<T>> saved;   // arrays retained for backward
  Shape out_shape;
  double scalar = 0;              // Scale factor / Lncc eps
  int iarg = 0;                   // Lncc window / Conv2d has_bias
  std::vector<std::size_t> split; // ConcatC per-input channel counts
};

// Reverse-mode tape. Append-only during forward; backward() sweeps the node
// list in reverse. One tape per thread; see the concurrency notes in README.
template <class T>
class Tape {
public:
  bool recording() const { return grad_on_; }

  // Marks a tensor as a differentiation root. Repeated watches of the same
  // storage on one tape return the same leaf, so parameters stay weight-tied
  // across steps. No-op (returns an untracked view) while grads are disabled.
  Tensor<T> watch(const Tensor<T>& t) {
    Tensor<T> out = t;
    if (!grad_on_) return out;
    const void* key = static_cast<const void*>(t.data.get());
    auto it = leaf_ids_.find(key);
    if (it != leaf_ids_.end()) {
      out.node = it->second;
      out.requires_grad = true;
      return out;
    }
    Node<T> n;
    n.op = OpKind::Leaf;
    n.out_shape = t.shape;
    const int id = push(std::move(n));
    leaf_ids_.emplace(key, id);
    out.node = id;
    out.requires_grad = true;
    return out;
  }

  int record(Node<T>&& n) {
    stored_ += n.saved.size();
    return push(std::move(n));
  }

  std::size_t stored_state_count() const { return stored_; }
  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    bar_.clear();
    leaf_ids_.clear();
    stored_ = 0;
  }

  // Accumulated adjoint of a node after backward(); nullptr if none reached it.
  const std::vector<T>* grad(int node) const {
    if (node < 0 || static_cast<std::size_t>(node) >= bar_.size()) return nullptr;
    if (bar_[node].empty()) return nullptr;
    return &bar_[node];
  }

  // Gradient for a tensor; zeros when the tensor never received one.
  Tensor<T> grad_of(const Tensor<T>& t) const {
    if (const auto* g = grad(t.node)) return Tensor<T>(t.shape, *g);
    return Tensor<T>::zeros(t.shape);
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.is_scalar())
      fail_contract("backward requires a scalar loss, got shape ", shape_str(loss.shape));
    if (loss.node < 0)
      fail_contract("backward requires a loss connected to the tape");
    const T one(1);
    run_backward(loss.node, std::span<const T>(&one, 1));
  }

  // Generalised VJP entry used by the Jacobian-assembling oracle.
  void backward_seeded(const Tensor<T>& out, std::span<const T> seed) {
    if (out.node < 0) fail_contract("backward_seeded requires a tracked tensor");
    if (seed.size() != out.numel())
      fail_contract("seed size ", seed.size(), " != output numel ", out.numel());
    run_backward(out.node, seed);
  }

private:
  friend class NoGradScope;

  int push(Node<T>&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<T>& bar(int id) {
    auto& b = bar_[id];
    if (b.empty()) b.assign(numel(nodes_[id].out_shape), T(0));
    return b;
  }

  void add_into(int id, const T* src, std::size_t n) {
    if (id < 0) return;
    auto& b = bar(id);
    for (std::size_t i = 0; i < n; ++i) b[i] += src[i];
  }

  void run_backward(int root, std::span<const T> seed) {
    bar_.assign(nodes_.size(), {});
    auto& b = bar(root);
    for (std::size_t i = 0; i < seed.size(); ++i) b[i] = seed[i];
    for (int id = root; id >= 0; --id) {
      if (bar_[id].empty()) continue;
      step_backward(id);
    }
  }

  void step_backward(int id) {
    const Node<T>& n = nodes_[id];
    const std::vector<T>& dy = bar_[id];
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Add: {
        add_into(n.ins[0], dy.data(), dy.size());
        add_into(n.ins[1], dy.data(), dy.size());
        break;
      }
      case OpKind::Sub: {
        add_into(n.ins[0], dy.data(), dy.size());
        if (n.ins[1] >= 0) {
          auto& b = bar(n.ins[1]);
          for (std::size_t i = 0; i < dy.size(); ++i) b[i] -= dy[i];
        }
        break;
      }
      case OpKind::Mul: {
        const auto& av = n.saved[0].vec();
        const auto& bv = n.saved[1].vec();
        if (n.ins[0] >= 0) {
          auto& b = bar(n.ins[0]);
          for (std::size_t i = 0; i < dy.size(); ++i) b[i] += dy[i] * bv[i];
        }
        if (n.ins[1] >= 0) {
          auto& b = bar(n.ins[1]);
          for (std::size_t i = 0; i < dy.size(); ++i) b[i] += dy[i] * av[i];
        }
        break;
      }
      case OpKind::Tanh: {
        const auto& yv = n.saved[0].vec();
        auto& b = bar(n.ins[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) b[i] += dy[i] * (T(1) - yv[i] * yv[i]);
        break;
      }
      case OpKind::Scale: {
        const T s = static_cast<T>(n.scalar);
        auto& b = bar(n.ins[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) b[i] += dy[i] * s;
        break;
      }
      case OpKind::Mean: {
        const std::size_t m = numel(nodes_[n.ins[0]].out_shape);
        const T g = dy[0] / static_cast<T>(m);
        auto& b = bar(n.ins[0]);
        for (std::size_t i = 0; i < m; ++i) b[i] += g;
        break;
      }
      case OpKind::ConcatC: {
        const std::size_t N = n.out_shape[0];
        const std::size_t H = n.out_shape[2];
        const std::size_t W = n.out_shape[3];
        const std::size_t plane = H * W;
        std::size_t co = 0;
        std::size_t c_total = n.out_shape[1];
        for (std::size_t k = 0; k < n.split.size(); ++k) {
          const std::size_t ck = n.split[k];
          if (n.ins[k] >= 0) {
            auto& b = bar(n.ins[k]);
            for (std::size_t nn = 0; nn < N; ++nn)
              for (std::size_t c = 0; c < ck; ++c) {
                const T* src = dy.data() + ((nn * c_total + co + c) * plane);
                T* dst = b.data() + ((nn * ck + c) * plane);
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
              }
          }
          co += ck;
        }
        break;
      }
      case OpKind::Conv2d: {
        const auto& xs = n.saved[0];
        const auto& ws = n.saved[1];
        const std::size_t N = xs.shape[0], Ci = xs.shape[1], H = xs.shape[2],
                          W = xs.shape[3];
        const std::size_t Co = ws.shape[0];
        if (n.ins[0] >= 0)
          kernels::conv2d_backward_x(dy.data(), ws.ptr(), bar(n.ins[0]).data(), N, Ci, Co,
                                     H, W);
        if (n.ins[1] >= 0)
          kernels::conv2d_backward_w(dy.data(), xs.ptr(), bar(n.ins[1]).data(), N, Ci, Co,
                                     H, W);
        if (n.iarg && n.ins[2] >= 0)
          kernels::conv2d_backward_b(dy.data(), bar(n.ins[2]).data(), N, Co, H, W);
        break;
      }
      case OpKind::Sample: {
        const auto& img = n.saved[0];
        const auto& disp = n.saved[1];
        const std::size_t N = img.shape[0], C = img.shape[1], H = img.shape[2],
                          W = img.shape[3];
        T* dimg = n.ins[0] >= 0 ? bar(n.ins[0]).data() : nullptr;
        T* ddisp = n.ins[1] >= 0 ? bar(n.ins[1]).data() : nullptr;
        kernels::sample_backward(img.ptr(), disp.ptr(), dy.data(), dimg, ddisp, N, C, H,
                                 W);
        break;
      }
      case OpKind::Lncc: {
        const auto& f = n.saved[0];
        const auto& g = n.saved[1];
        const std::size_t planes = f.shape[0] * f.shape[1];
        const std::size_t H = f.shape[2], W = f.shape[3];
        T* df = n.ins[0] >= 0 ? bar(n.ins[0]).data() : nullptr;
        T* dg = n.ins[1] >= 0 ? bar(n.ins[1]).data() : nullptr;
        kernels::lncc_backward(f.ptr(), g.ptr(), static_cast<double>(dy[0]), df, dg,
                               planes, H, W, n.iarg, n.scalar);
        break;
      }
      case OpKind::DiffReg: {
        const auto& u = n.saved[0];
        const std::size_t NC = u.shape[0] * u.shape[1];
        const std::size_t H = u.shape[2], W = u.shape[3];
        kernels::diffusion_backward(u.ptr(), static_cast<double>(dy[0]),
                                    bar(n.ins[0]).data(), NC, H, W);
        break;
      }
    }
  }

  std::vector<Node<T>> nodes_;
  std::vector<std::vector<T>> bar_;
  std::unordered_map<const void*, int> leaf_ids_;
  std::size_t stored_ = 0;
  bool grad_on_ = true;
};

// RAII scope that disables recording, e.g. around the equilibrium forward
// solve, which must not retain any state.
class NoGradScope {
public:
  template <class T>
  explicit NoGradScope(Tape<T>& tape) : flag_(&tape.grad_on_), prev_(tape.grad_on_) {
    tape.grad_on_ = false;
  }
  ~NoGradScope() { *flag_ = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

private:
  bool* flag_;
  bool prev_;
};

}  // namespace eqreg
