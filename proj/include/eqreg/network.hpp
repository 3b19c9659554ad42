#pragma once

#include "eqreg/image_ops.hpp"
#include "eqreg/params.hpp"

namespace eqreg {

// Weight-tied residual update network. Consumes [I_f, I_m o phi, u] (4
// channels) and emits a 2-channel displacement update scaled by alpha. The
// last conv is zero-initialised so step 0 is the identity map.
//
// Inside the network the intensity channels are centred to [-1,1] and the
// field channels scaled by 1/4: tanh only forms the multiplicative
// (difference x gradient) features this task needs through its odd-order
// terms, which are far too weak when the preactivations sit near zero.
template <class T>
struct UpdateNet {
  ParameterSet<T> params;
  double alpha = 1.0;
  std::size_t hidden = 16;

  static UpdateNet make(std::uint64_t seed, double alpha = 1.0, std::size_t hidden = 16,
                        double init_std = 0.35, bool zero_last = true) {
    UpdateNet net;
    net.alpha = alpha;
    net.hidden = hidden;
    Rng rng(seed);
    net.params.add("conv1.w", Tensor<T>::randn({hidden, 4, 3, 3}, rng, init_std));
    net.params.add("conv1.b", Tensor<T>::zeros({hidden}));
    net.params.add("conv2.w", Tensor<T>::randn({hidden, hidden, 3, 3}, rng, init_std));
    net.params.add("conv2.b", Tensor<T>::zeros({hidden}));
    if (zero_last) {
      net.params.add("conv3.w", Tensor<T>::zeros({2, hidden, 3, 3}));
      net.params.add("conv3.b", Tensor<T>::zeros({2}));
    } else {
      net.params.add("conv3.w", Tensor<T>::randn({2, hidden, 3, 3}, rng, init_std));
      net.params.add("conv3.b", Tensor<T>::randn({2}, rng, init_std));
    }
    return net;
  }

  using Bound = std::map<std::string, Tensor<T>>;

  // Residual update f(I_f, I_m, u).
  Tensor<T> residual(Tape<T>& tape, const Bound& b, const Tensor<T>& fixed,
                     const Tensor<T>& moving, const Tensor<T>& u) const {
    Tensor<T> half = Tensor<T>::full(fixed.shape, T(0.5));
    Tensor<T> fc = scale(tape, sub(tape, fixed, half), 2.0);
    Tensor<T> wc = scale(tape, sub(tape, warp(tape, moving, u), half), 2.0);
    Tensor<T> us = scale(tape, u, 0.25);
    Tensor<T> x = concat_channels<T>(tape, {fc, wc, us});
    Tensor<T> h = tanh(tape, conv2d(tape, x, b.at("conv1.w"), &b.at("conv1.b")));
    h = tanh(tape, conv2d(tape, h, b.at("conv2.w"), &b.at("conv2.b")));
    Tensor<T> f = conv2d(tape, h, b.at("conv3.w"), &b.at("conv3.b"));
    return scale(tape, f, alpha);
  }

  // One iteration u_{t+1} = u_t + f(I_f, I_m, u_t).
  Tensor<T> step(Tape<T>& tape, const Bound& b, const Tensor<T>& fixed,
                 const Tensor<T>& moving, const Tensor<T>& u) const {
    return add(tape, u, residual(tape, b, fixed, moving, u));
  }

  // g(u) = u + f(u), the map whose fixed point is the registration solution.
  Tensor<T> equilibrium_map(Tape<T>& tape, const Bound& b, const Tensor<T>& fixed,
                            const Tensor<T>& moving, const Tensor<T>& u) const {
    return step(tape, b, fixed, moving, u);
  }
};

}  // namespace eqreg
