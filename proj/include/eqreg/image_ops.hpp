#pragma once

#include <cmath>

#include "eqreg/ops.hpp"

namespace eqreg {

// Warp an image by a displacement field: out(x) = img(x + u(x)).
template <class T>
Tensor<T> warp(Tape<T>& tape, const Tensor<T>& img, const Tensor<T>& u) {
  return bilinear_sample(tape, img, u);
}

// Registration objective: -LNCC(I_f, I_m o phi) + lambda * diffusion(u).
template <class T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& fixed, const Tensor<T>& moving,
                     const Tensor<T>& u, double lambda, int window = 5) {
  if (lambda < 0) fail_contract("total_loss: lambda must be >= 0, got ", lambda);
  Tensor<T> warped = warp(tape, moving, u);
  Tensor<T> sim = lncc(tape, fixed, warped, window);
  Tensor<T> reg = diffusion(tape, u);
  return add(tape, scale(tape, sim, -1.0), scale(tape, reg, lambda));
}

struct JacobianStats {
  double folded_fraction = 0;  // share of interior pixels with det <= 0
  double std_log_jdet = 0;     // over pixels with det > 0
  std::vector<double> det_map; // interior determinants, row-major
  std::size_t interior_h = 0;
  std::size_t interior_w = 0;
};

// 2x2 Jacobian of phi = x + u per interior pixel via central differences.
// u layout: [2,H,W] (or [1,2,H,W]), channel 0 = x-displacement.
inline JacobianStats jacobian_stats(const double* u, std::size_t H, std::size_t W) {
  if (H < 3 || W < 3) fail_contract("jacobian_stats: needs H,W >= 3, got ", H, "x", W);
  JacobianStats st;
  st.interior_h = H - 2;
  st.interior_w = W - 2;
  st.det_map.resize(st.interior_h * st.interior_w);
  const double* ux = u;
  const double* uy = u + H * W;
  std::size_t folded = 0;
  double sum_log = 0, sum_log2 = 0;
  std::size_t n_pos = 0;
  for (std::size_t y = 1; y + 1 < H; ++y) {
    for (std::size_t x = 1; x + 1 < W; ++x) {
      const double dux_dx = 0.5 * (ux[y * W + x + 1] - ux[y * W + x - 1]);
      const double dux_dy = 0.5 * (ux[(y + 1) * W + x] - ux[(y - 1) * W + x]);
      const double duy_dx = 0.5 * (uy[y * W + x + 1] - uy[y * W + x - 1]);
      const double duy_dy = 0.5 * (uy[(y + 1) * W + x] - uy[(y - 1) * W + x]);
      const double det = (1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx;
      st.det_map[(y - 1) * st.interior_w + (x - 1)] = det;
      if (det <= 0) {
        ++folded;
      } else {
        const double l = std::log(det);
        sum_log += l;
        sum_log2 += l * l;
        ++n_pos;
      }
    }
  }
  const std::size_t interior = st.interior_h * st.interior_w;
  st.folded_fraction = static_cast<double>(folded) / static_cast<double>(interior);
  if (n_pos > 0) {
    const double mean = sum_log / static_cast<double>(n_pos);
    const double var = std::max(0.0, sum_log2 / static_cast<double>(n_pos) - mean * mean);
    st.std_log_jdet = std::sqrt(var);
  }
  return st;
}

template <class T>
JacobianStats jacobian_stats(const Tensor<T>& u) {
  Shape s = u.shape;
  if (s.size() == 4 && s[0] == 1) s = {s[1], s[2], s[3]};
  if (s.size() != 3 || s[0] != 2)
    fail_contract("jacobian_stats: expected [2,H,W] field, got ", shape_str(u.shape));
  std::vector<double> tmp(u.numel());
  for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<double>(u.vec()[i]);
  return jacobian_stats(tmp.data(), s[1], s[2]);
}

}  // namespace eqreg
