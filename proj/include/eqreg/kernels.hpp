#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "eqreg/common.hpp"

// Raw array math shared by the tape forward/backward rules. All kernels use a
// fixed accumulation order per output element so results are bit-reproducible
// regardless of threading.

namespace eqreg::kernels {

// 3x3 convolution, stride 1, zero padding. x: [N,Ci,H,W], w: [Co,Ci,3,3],
// optional bias [Co], y: [N,Co,H,W].
template <class T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, std::size_t N,
                    std::size_t Ci, std::size_t Co, std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(N); ++n) {
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(Co); ++co) {
      T* yp = y + (n * Co + co) * plane;
      const T init = b ? b[co] : T(0);
      std::fill(yp, yp + plane, init);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* xp = x + (n * Ci + ci) * plane;
        for (int ky = 0; ky < 3; ++ky) {
          const int dy = ky - 1;
          const std::size_t y0 = static_cast<std::size_t>(std::max(0, -dy));
          const std::size_t y1 = static_cast<std::size_t>(
              std::min<std::ptrdiff_t>(H, static_cast<std::ptrdiff_t>(H) - dy));
          for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0, -dx));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(W, static_cast<std::ptrdiff_t>(W) - dx));
            const T wv = w[((co * Ci + ci) * 3 + ky) * 3 + kx];
            if (wv == T(0)) continue;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              T* yrow = yp + yy * W;
              const T* xrow = xp + (yy + dy) * W + dx;
              for (std::size_t xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_x(const T* dy, const T* w, T* dx, std::size_t N, std::size_t Ci,
                       std::size_t Co, std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(N); ++n) {
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(Ci); ++ci) {
      T* dxp = dx + (n * Ci + ci) * plane;
      for (std::size_t co = 0; co < Co; ++co) {
        const T* dyp = dy + (n * Co + co) * plane;
        for (int ky = 0; ky < 3; ++ky) {
          const int dyo = ky - 1;
          const std::size_t y0 = static_cast<std::size_t>(std::max(0, -dyo));
          const std::size_t y1 = static_cast<std::size_t>(
              std::min<std::ptrdiff_t>(H, static_cast<std::ptrdiff_t>(H) - dyo));
          for (int kx = 0; kx < 3; ++kx) {
            const int dxo = kx - 1;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0, -dxo));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(W, static_cast<std::ptrdiff_t>(W) - dxo));
            const T wv = w[((co * Ci + ci) * 3 + ky) * 3 + kx];
            if (wv == T(0)) continue;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              T* dxrow = dxp + (yy + dyo) * W + dxo;
              const T* dyrow = dyp + yy * W;
              for (std::size_t xx = x0; xx < x1; ++xx) dxrow[xx] += wv * dyrow[xx];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_w(const T* dy, const T* x, T* dw, std::size_t N, std::size_t Ci,
                       std::size_t Co, std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(Co); ++co) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      for (int ky = 0; ky < 3; ++ky) {
        const int dyo = ky - 1;
        const std::size_t y0 = static_cast<std::size_t>(std::max(0, -dyo));
        const std::size_t y1 = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(H, static_cast<std::ptrdiff_t>(H) - dyo));
        for (int kx = 0; kx < 3; ++kx) {
          const int dxo = kx - 1;
          const std::size_t x0 = static_cast<std::size_t>(std::max(0, -dxo));
          const std::size_t x1 = static_cast<std::size_t>(
              std::min<std::ptrdiff_t>(W, static_cast<std::ptrdiff_t>(W) - dxo));
          double acc = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const T* dyp = dy + (n * Co + co) * plane;
            const T* xp = x + (n * Ci + ci) * plane;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              const T* dyrow = dyp + yy * W;
              const T* xrow = xp + (yy + dyo) * W + dxo;
              for (std::size_t xx = x0; xx < x1; ++xx)
                acc += static_cast<double>(dyrow[xx]) * static_cast<double>(xrow[xx]);
            }
          }
          dw[((co * Ci + ci) * 3 + ky) * 3 + kx] += static_cast<T>(acc);
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_b(const T* dy, T* db, std::size_t N, std::size_t Co, std::size_t H,
                       std::size_t W) {
  const std::size_t plane = H * W;
  for (std::size_t co = 0; co < Co; ++co) {
    double acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* dyp = dy + (n * Co + co) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(dyp[i]);
    }
    db[co] += static_cast<T>(acc);
  }
}

// Bilinear sampling of img at (x + ux, y + uy), coordinates clamped to the
// border. img: [N,C,H,W], disp: [N,2,H,W] (channel 0 = x, channel 1 = y).
template <class T>
void sample_forward(const T* img, const T* disp, T* out, std::size_t N, std::size_t C,
                    std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
  for (std::size_t n = 0; n < N; ++n) {
    const T* ux = disp + (n * 2 + 0) * plane;
    const T* uy = disp + (n * 2 + 1) * plane;
    for (std::size_t yy = 0; yy < H; ++yy) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t p = yy * W + xx;
        double xs = static_cast<double>(xx) + static_cast<double>(ux[p]);
        double ys = static_cast<double>(yy) + static_cast<double>(uy[p]);
        xs = std::min(std::max(xs, 0.0), static_cast<double>(W - 1));
        ys = std::min(std::max(ys, 0.0), static_cast<double>(H - 1));
        const std::size_t x0 = static_cast<std::size_t>(xs);
        const std::size_t y0 = static_cast<std::size_t>(ys);
        const std::size_t x1 = std::min(x0 + 1, W - 1);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wx = xs - static_cast<double>(x0);
        const double wy = ys - static_cast<double>(y0);
        for (std::size_t c = 0; c < C; ++c) {
          const T* ip = img + (n * C + c) * plane;
          const double v00 = ip[y0 * W + x0];
          const double v01 = ip[y0 * W + x1];
          const double v10 = ip[y1 * W + x0];
          const double v11 = ip[y1 * W + x1];
          out[(n * C + c) * plane + p] = static_cast<T>(
              (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
        }
      }
    }
  }
}

// d_img / d_disp may be null when the corresponding gradient is not needed.
// Clamped coordinates get zero displacement gradient.
template <class T>
void sample_backward(const T* img, const T* disp, const T* dout, T* d_img, T* d_disp,
                     std::size_t N, std::size_t C, std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
  for (std::size_t n = 0; n < N; ++n) {
    const T* ux = disp + (n * 2 + 0) * plane;
    const T* uy = disp + (n * 2 + 1) * plane;
    for (std::size_t yy = 0; yy < H; ++yy) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t p = yy * W + xx;
        const double xs_raw = static_cast<double>(xx) + static_cast<double>(ux[p]);
        const double ys_raw = static_cast<double>(yy) + static_cast<double>(uy[p]);
        const bool cx = xs_raw < 0.0 || xs_raw > static_cast<double>(W - 1);
        const bool cy = ys_raw < 0.0 || ys_raw > static_cast<double>(H - 1);
        const double xs = std::min(std::max(xs_raw, 0.0), static_cast<double>(W - 1));
        const double ys = std::min(std::max(ys_raw, 0.0), static_cast<double>(H - 1));
        const std::size_t x0 = static_cast<std::size_t>(xs);
        const std::size_t y0 = static_cast<std::size_t>(ys);
        const std::size_t x1 = std::min(x0 + 1, W - 1);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wx = xs - static_cast<double>(x0);
        const double wy = ys - static_cast<double>(y0);
        double gx = 0, gy = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const T* ip = img + (n * C + c) * plane;
          const double g = dout[(n * C + c) * plane + p];
          if (d_img) {
            T* dp = d_img + (n * C + c) * plane;
            dp[y0 * W + x0] += static_cast<T>(g * (1 - wy) * (1 - wx));
            dp[y0 * W + x1] += static_cast<T>(g * (1 - wy) * wx);
            dp[y1 * W + x0] += static_cast<T>(g * wy * (1 - wx));
            dp[y1 * W + x1] += static_cast<T>(g * wy * wx);
          }
          if (d_disp) {
            const double v00 = ip[y0 * W + x0];
            const double v01 = ip[y0 * W + x1];
            const double v10 = ip[y1 * W + x0];
            const double v11 = ip[y1 * W + x1];
            gx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
            gy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
          }
        }
        if (d_disp) {
          if (!cx) d_disp[(n * 2 + 0) * plane + p] += static_cast<T>(gx);
          if (!cy) d_disp[(n * 2 + 1) * plane + p] += static_cast<T>(gy);
        }
      }
    }
  }
}

struct LnccWindowStats {
  double mu_f, mu_g, var_f, var_g, cov;
  std::size_t count;
};

template <class T>
LnccWindowStats lncc_window(const T* f, const T* g, std::size_t H, std::size_t W,
                            std::size_t cy, std::size_t cx, int radius) {
  double sf = 0, sg = 0, sff = 0, sgg = 0, sfg = 0;
  std::size_t cnt = 0;
  const std::size_t y0 = cy >= static_cast<std::size_t>(radius) ? cy - radius : 0;
  const std::size_t y1 = std::min(H - 1, cy + radius);
  const std::size_t x0 = cx >= static_cast<std::size_t>(radius) ? cx - radius : 0;
  const std::size_t x1 = std::min(W - 1, cx + radius);
  for (std::size_t y = y0; y <= y1; ++y) {
    for (std::size_t x = x0; x <= x1; ++x) {
      const double a = f[y * W + x];
      const double b = g[y * W + x];
      sf += a;
      sg += b;
      sff += a * a;
      sgg += b * b;
      sfg += a * b;
      ++cnt;
    }
  }
  const double inv = 1.0 / static_cast<double>(cnt);
  LnccWindowStats s;
  s.mu_f = sf * inv;
  s.mu_g = sg * inv;
  s.var_f = std::max(0.0, sff * inv - s.mu_f * s.mu_f);
  s.var_g = std::max(0.0, sgg * inv - s.mu_g * s.mu_g);
  s.cov = sfg * inv - s.mu_f * s.mu_g;
  s.count = cnt;
  return s;
}

// Mean over pixels of the signed local correlation coefficient. Windows are
// truncated at the border (window-local statistics over the valid pixels);
// variances are floored at eps before the normalisation.
template <class T>
double lncc_forward(const T* f, const T* g, std::size_t planes, std::size_t H,
                    std::size_t W, int window, double eps) {
  const int radius = window / 2;
  const std::size_t plane = H * W;
  double total = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* fp = f + pl * plane;
    const T* gp = g + pl * plane;
    for (std::size_t cy = 0; cy < H; ++cy) {
      for (std::size_t cx = 0; cx < W; ++cx) {
        const auto s = lncc_window(fp, gp, H, W, cy, cx, radius);
        const double vf = std::max(s.var_f, eps);
        const double vg = std::max(s.var_g, eps);
        total += s.cov / std::sqrt(vf * vg);
      }
    }
  }
  return total / static_cast<double>(planes * plane);
}

template <class T>
void lncc_backward(const T* f, const T* g, double bar, T* df, T* dg, std::size_t planes,
                   std::size_t H, std::size_t W, int window, double eps) {
  const int radius = window / 2;
  const std::size_t plane = H * W;
  const double scale = bar / static_cast<double>(planes * plane);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* fp = f + pl * plane;
    const T* gp = g + pl * plane;
    T* dfp = df ? df + pl * plane : nullptr;
    T* dgp = dg ? dg + pl * plane : nullptr;
    for (std::size_t cy = 0; cy < H; ++cy) {
      for (std::size_t cx = 0; cx < W; ++cx) {
        const auto s = lncc_window(fp, gp, H, W, cy, cx, radius);
        const double vf = std::max(s.var_f, eps);
        const double vg = std::max(s.var_g, eps);
        const double denom = std::sqrt(vf * vg);
        const double corr = s.cov / denom;
        const double inv_n = 1.0 / static_cast<double>(s.count);
        const bool f_live = s.var_f > eps;
        const bool g_live = s.var_g > eps;
        const std::size_t y0 = cy >= static_cast<std::size_t>(radius) ? cy - radius : 0;
        const std::size_t y1 = std::min(H - 1, cy + radius);
        const std::size_t x0 = cx >= static_cast<std::size_t>(radius) ? cx - radius : 0;
        const std::size_t x1 = std::min(W - 1, cx + radius);
        for (std::size_t y = y0; y <= y1; ++y) {
          for (std::size_t x = x0; x <= x1; ++x) {
            const std::size_t q = y * W + x;
            const double fc = static_cast<double>(fp[q]) - s.mu_f;
            const double gc = static_cast<double>(gp[q]) - s.mu_g;
            if (dfp) {
              double d = gc * inv_n / denom;
              if (f_live) d -= corr * fc * inv_n / vf;
              dfp[q] += static_cast<T>(scale * d);
            }
            if (dgp) {
              double d = fc * inv_n / denom;
              if (g_live) d -= corr * gc * inv_n / vg;
              dgp[q] += static_cast<T>(scale * d);
            }
          }
        }
      }
    }
  }
}

// Mean over all pixels and channels of the squared forward-difference
// gradients. Differences only exist where the forward neighbour does; the
// normaliser is the full pixel-channel count N*C*H*W.
template <class T>
double diffusion_forward(const T* u, std::size_t NC, std::size_t H, std::size_t W) {
  const std::size_t plane = H * W;
  double total = 0;
  for (std::size_t pl = 0; pl < NC; ++pl) {
    const T* up = u + pl * plane;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double v = up[y * W + x];
        if (x + 1 < W) {
          const double d = static_cast<double>(up[y * W + x + 1]) - v;
          total += d * d;
        }
        if (y + 1 < H) {
          const double d = static_cast<double>(up[(y + 1) * W + x]) - v;
          total += d * d;
        }
      }
    }
  }
  return total / static_cast<double>(NC * plane);
}

template <class T>
void diffusion_backward(const T* u, double bar, T* du, std::size_t NC, std::size_t H,
                        std::size_t W) {
  const std::size_t plane = H * W;
  const double scale = 2.0 * bar / static_cast<double>(NC * plane);
  for (std::size_t pl = 0; pl < NC; ++pl) {
    const T* up = u + pl * plane;
    T* dup = du + pl * plane;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double v = up[y * W + x];
        if (x + 1 < W) {
          const double d = static_cast<double>(up[y * W + x + 1]) - v;
          dup[y * W + x + 1] += static_cast<T>(scale * d);
          dup[y * W + x] -= static_cast<T>(scale * d);
        }
        if (y + 1 < H) {
          const double d = static_cast<double>(up[(y + 1) * W + x]) - v;
          dup[(y + 1) * W + x] += static_cast<T>(scale * d);
          dup[y * W + x] -= static_cast<T>(scale * d);
        }
      }
    }
  }
}

}  // namespace eqreg::kernels
