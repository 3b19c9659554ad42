#pragma once

#include <functional>
#include <vector>

#include "eqreg/ops.hpp"
#include "eqreg/rng.hpp"

namespace testsupport {

using eqreg::Rng;
using eqreg::Shape;
using eqreg::Tape;
using eqreg::Tensor;

using LossFn =
    std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

// Central finite differences against reverse-mode gradients. Returns the
// worst elementwise relative error, with a tiny absolute floor so exact-zero
// gradients compare cleanly.
inline double max_grad_error(const LossFn& fn, const std::vector<Tensor<double>>& inputs,
                             double h = 1e-5) {
  Tape<double> tape;
  std::vector<Tensor<double>> watched;
  watched.reserve(inputs.size());
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  Tensor<double> loss = fn(tape, watched);
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  grads.reserve(inputs.size());
  for (const auto& wt : watched) grads.push_back(tape.grad_of(wt));

  const auto eval = [&](const std::vector<Tensor<double>>& plain) {
    Tape<double> t2;
    eqreg::NoGradScope ng(t2);
    return fn(t2, plain).item();
  };

  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor<double>> plus, minus;
      for (const auto& t : inputs) {
        plus.push_back(t.detached());
        minus.push_back(t.detached());
      }
      plus[i].vec()[j] += h;
      minus[i].vec()[j] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2 * h);
      const double analytic = grads[i].vec()[j];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      if (std::abs(analytic - numeric) > 1e-10) worst = std::max(worst, err);
    }
  }
  return worst;
}

// Direct 4-loop convolution, the independent oracle for conv2d.
inline std::vector<double> conv_naive(const std::vector<double>& x,
                                      const std::vector<double>& w,
                                      const std::vector<double>& b, std::size_t N,
                                      std::size_t Ci, std::size_t Co, std::size_t H,
                                      std::size_t W) {
  std::vector<double> y(N * Co * H * W, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t yy = 0; yy < H; ++yy)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double acc = b.empty() ? 0.0 : b[co];
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yy) + ky - 1;
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx) + kx - 1;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix < 0 ||
                    ix >= static_cast<std::ptrdiff_t>(W))
                  continue;
                acc += x[((n * Ci + ci) * H + iy) * W + ix] *
                       w[((co * Ci + ci) * 3 + ky) * 3 + kx];
              }
          y[((n * Co + co) * H + yy) * W + xx] = acc;
        }
  return y;
}

// Displacement field whose sample coordinates stay strictly inside the image
// and away from the integer-lattice kinks of bilinear interpolation, so
// finite differences are valid.
inline Tensor<double> safe_displacement(Rng& rng, std::size_t h, std::size_t w) {
  Tensor<double> u = Tensor<double>::zeros({1, 2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double tx = static_cast<double>(rng.below(w - 1)) + rng.uniform(0.3, 0.7);
      const double ty = static_cast<double>(rng.below(h - 1)) + rng.uniform(0.3, 0.7);
      u.vec()[y * w + x] = tx - static_cast<double>(x);
      u.vec()[h * w + y * w + x] = ty - static_cast<double>(y);
    }
  return u;
}

inline Tensor<double> random_image(Rng& rng, std::size_t h, std::size_t w) {
  Tensor<double> img = Tensor<double>::zeros({1, 1, h, w});
  for (auto& v : img.vec()) v = rng.uniform();
  return img;
}

}  // namespace testsupport
