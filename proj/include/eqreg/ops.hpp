#pragma once

#include <cmath>
#include <span>

#include "eqreg/tape.hpp"

// The closed set of differentiable operations used by the registration
// pipeline. Every function computes values eagerly and records a node when the
// tape is live and at least one input is tracked.

namespace eqreg {

namespace detail {

template <class T>
Tensor<T> finish(Tape<T>& tape, Tensor<T> out, Node<T>&& node) {
  bool tracked = false;
  for (int id : node.ins) tracked |= id >= 0;
  if (tape.recording() && tracked) {
    node.out_shape = out.shape;
    out.node = tape.record(std::move(node));
    out.requires_grad = true;
  }
  return out;
}

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    fail_contract(op, ": shape mismatch ", shape_str(a.shape), " vs ",
                  shape_str(b.shape));
}

template <class T>
void check_nchw(const char* op, const Tensor<T>& t) {
  if (t.rank() != 4) fail_contract(op, ": expected NCHW tensor, got ", shape_str(t.shape));
}

}  // namespace detail

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.vec()[i] = a.vec()[i] + b.vec()[i];
  Node<T> n;
  n.op = OpKind::Add;
  n.ins = {a.node, b.node};
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.vec()[i] = a.vec()[i] - b.vec()[i];
  Node<T> n;
  n.op = OpKind::Sub;
  n.ins = {a.node, b.node};
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.vec()[i] = a.vec()[i] * b.vec()[i];
  Node<T> n;
  n.op = OpKind::Mul;
  n.ins = {a.node, b.node};
  n.saved = {a, b};
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.vec()[i] = std::tanh(x.vec()[i]);
  Node<T> n;
  n.op = OpKind::Tanh;
  n.ins = {x.node};
  n.saved = {out};
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, double s) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const T sv = static_cast<T>(s);
  for (std::size_t i = 0; i < out.numel(); ++i) out.vec()[i] = x.vec()[i] * sv;
  Node<T> n;
  n.op = OpKind::Scale;
  n.ins = {x.node};
  n.scalar = s;
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> reduce_mean(Tape<T>& tape, const Tensor<T>& x) {
  double acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.vec()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(x.numel())));
  Node<T> n;
  n.op = OpKind::Mean;
  n.ins = {x.node};
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, std::span<const Tensor<T>> parts) {
  if (parts.empty()) fail_contract("concat_channels: no inputs");
  detail::check_nchw("concat_channels", parts[0]);
  const std::size_t N = parts[0].shape[0], H = parts[0].shape[2], W = parts[0].shape[3];
  std::size_t c_total = 0;
  for (const auto& p : parts) {
    detail::check_nchw("concat_channels", p);
    if (p.shape[0] != N || p.shape[2] != H || p.shape[3] != W)
      fail_contract("concat_channels: spatial/batch mismatch ", shape_str(p.shape),
                    " vs ", shape_str(parts[0].shape));
    c_total += p.shape[1];
  }
  Tensor<T> out = Tensor<T>::zeros({N, c_total, H, W});
  const std::size_t plane = H * W;
  Node<T> n;
  n.op = OpKind::ConcatC;
  std::size_t co = 0;
  for (const auto& p : parts) {
    const std::size_t ck = p.shape[1];
    for (std::size_t nn = 0; nn < N; ++nn)
      for (std::size_t c = 0; c < ck; ++c) {
        const T* src = p.ptr() + (nn * ck + c) * plane;
        T* dst = out.ptr() + (nn * c_total + co + c) * plane;
        std::copy(src, src + plane, dst);
      }
    co += ck;
    n.ins.push_back(p.node);
    n.split.push_back(ck);
  }
  return detail::finish(tape, std::move(out), std::move(n));
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, std::initializer_list<Tensor<T>> parts) {
  std::vector<Tensor<T>> v(parts);
  return concat_channels(tape, std::span<const Tensor<T>>(v));
}

// 3x3 / stride 1 / zero padding convolution, weight layout [Co,Ci,3,3].
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>* bias = nullptr) {
  detail::check_nchw("conv2d", x);
  if (w.rank() != 4 || w.shape[2] != 3 || w.shape[3] != 3)
    fail_contract("conv2d: weight must be [Co,Ci,3,3], got ", shape_str(w.shape));
  if (w.shape[1] != x.shape[1])
    fail_contract("conv2d: weight input channels ", w.shape[1],
                  " != tensor channels ", x.shape[1], " (x ", shape_str(x.shape), ", w ",
                  shape_str(w.shape), ")");
  const std::size_t N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t Co = w.shape[0];
  if (bias && (bias->rank() != 1 || bias->shape[0] != Co))
    fail_contract("conv2d: bias must be [", Co, "], got ", shape_str(bias->shape));
  Tensor<T> out = Tensor<T>::zeros({N, Co, H, W});
  kernels::conv2d_forward(x.ptr(), w.ptr(), bias ? bias->ptr() : nullptr, out.ptr(), N,
                          Ci, Co, H, W);
  Node<T> n;
  n.op = OpKind::Conv2d;
  n.ins = {x.node, w.node, bias ? bias->node : -1};
  n.saved = {x, w};
  n.iarg = bias ? 1 : 0;
  return detail::finish(tape, std::move(out), std::move(n));
}

// Bilinear warp: out(x) = img sampled at x + disp(x), border-clamped.
template <class T>
Tensor<T> bilinear_sample(Tape<T>& tape, const Tensor<T>& img, const Tensor<T>& disp) {
  detail::check_nchw("bilinear_sample", img);
  detail::check_nchw("bilinear_sample", disp);
  if (disp.shape[1] != 2 || disp.shape[0] != img.shape[0] ||
      disp.shape[2] != img.shape[2] || disp.shape[3] != img.shape[3])
    fail_contract("bilinear_sample: displacement ", shape_str(disp.shape),
                  " incompatible with image ", shape_str(img.shape));
  Tensor<T> out = Tensor<T>::zeros(img.shape);
  kernels::sample_forward(img.ptr(), disp.ptr(), out.ptr(), img.shape[0], img.shape[1],
                          img.shape[2], img.shape[3]);
  Node<T> n;
  n.op = OpKind::Sample;
  n.ins = {img.node, disp.node};
  n.saved = {img, disp};
  return detail::finish(tape, std::move(out), std::move(n));
}

inline constexpr double kLnccVarianceFloor = 1e-5;

// Signed local normalised cross-correlation, averaged over pixels.
template <class T>
Tensor<T> lncc(Tape<T>& tape, const Tensor<T>& fixed, const Tensor<T>& warped,
               int window = 5, double eps = kLnccVarianceFloor) {
  detail::check_nchw("lncc", fixed);
  detail::check_same_shape("lncc", fixed, warped);
  const std::size_t H = fixed.shape[2], W = fixed.shape[3];
  if (window < 1 || window % 2 == 0)
    fail_contract("lncc: window must be odd and positive, got ", window);
  if (static_cast<std::size_t>(window) > H || static_cast<std::size_t>(window) > W)
    fail_contract("lncc: window ", window, " larger than image ", H, "x", W);
  const double v = kernels::lncc_forward(fixed.ptr(), warped.ptr(),
                                         fixed.shape[0] * fixed.shape[1], H, W, window,
                                         eps);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(v));
  Node<T> n;
  n.op = OpKind::Lncc;
  n.ins = {fixed.node, warped.node};
  n.saved = {fixed, warped};
  n.iarg = window;
  n.scalar = eps;
  return detail::finish(tape, std::move(out), std::move(n));
}

// Mean squared forward-difference gradient of a displacement field.
template <class T>
Tensor<T> diffusion(Tape<T>& tape, const Tensor<T>& u) {
  detail::check_nchw("diffusion", u);
  const double v = kernels::diffusion_forward(u.ptr(), u.shape[0] * u.shape[1],
                                              u.shape[2], u.shape[3]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(v));
  Node<T> n;
  n.op = OpKind::DiffReg;
  n.ins = {u.node};
  n.saved = {u};
  return detail::finish(tape, std::move(out), std::move(n));
}

// Value-equal tensor with no tape history.
template <class T>
Tensor<T> detach(const Tensor<T>& t) {
  return t.detached();
}

}  // namespace eqreg
