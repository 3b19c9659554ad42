#include "eqreg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "eqreg/image_ops.hpp"

namespace eqreg {

void gaussian_blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));

  std::vector<double> tmp(img.size());
  // horizontal
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0, norm = 0;
      for (int k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + k;
        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
        acc += kernel[k + radius] * img[y * w + xx];
        norm += kernel[k + radius];
      }
      tmp[y * w + x] = acc / norm;
    }
  }
  // vertical
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0, norm = 0;
      for (int k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + k;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        acc += kernel[k + radius] * tmp[yy * w + x];
        norm += kernel[k + radius];
      }
      img[y * w + x] = acc / norm;
    }
  }
}

namespace {

void normalise01(std::vector<double>& v) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = *mn, span = *mx - *mn;
  if (span <= 0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x = (x - lo) / span;
}

double bilinear(const std::vector<double>& img, std::size_t h, std::size_t w, double xs,
                double ys) {
  xs = std::min(std::max(xs, 0.0), static_cast<double>(w - 1));
  ys = std::min(std::max(ys, 0.0), static_cast<double>(h - 1));
  const std::size_t x0 = static_cast<std::size_t>(xs);
  const std::size_t y0 = static_cast<std::size_t>(ys);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const double wx = xs - static_cast<double>(x0);
  const double wy = ys - static_cast<double>(y0);
  return (1 - wy) * ((1 - wx) * img[y0 * w + x0] + wx * img[y0 * w + x1]) +
         wy * ((1 - wx) * img[y1 * w + x0] + wx * img[y1 * w + x1]);
}

bool fold_free(const std::vector<double>& field, std::size_t h, std::size_t w) {
  return jacobian_stats(field.data(), h, w).folded_fraction == 0.0;
}

}  // namespace

SyntheticPair generate_pair(std::uint64_t seed, const GenConfig& cfg) {
  const std::size_t h = cfg.h, w = cfg.w;
  if (h < 32 || w < 32) fail_contract("generate_pair: size must be >= 32, got ", h, "x", w);
  if (cfg.amp < 0) fail_contract("generate_pair: amp must be >= 0");
  if (cfg.n_labels < 1 || cfg.n_labels > 200)
    fail_contract("generate_pair: n_labels out of range: ", cfg.n_labels);

  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x243f6a8885a308d3ull);
  SyntheticPair pair;
  pair.h = h;
  pair.w = w;
  pair.seed = seed;

  // Smooth blob potential: a handful of Gaussian bumps around the centre. The
  // first n_labels bumps also anchor the label regions.
  std::vector<double> pot(h * w, 0.0);
  const int bumps = cfg.n_labels + 2;
  struct Bump {
    double cx, cy, s;
  };
  std::vector<Bump> anchors;
  const double min_sep = 0.18 * std::min(h, w);
  for (int b = 0; b < bumps; ++b) {
    double cx = 0, cy = 0;
    for (int attempt = 0; attempt < 40; ++attempt) {
      cx = rng.uniform(0.20 * w, 0.80 * w);
      cy = rng.uniform(0.20 * h, 0.80 * h);
      bool far_enough = true;
      for (const auto& a2 : anchors) {
        const double d = std::hypot(cx - a2.cx, cy - a2.cy);
        if (d < min_sep) {
          far_enough = false;
          break;
        }
      }
      if (far_enough || b >= cfg.n_labels) break;
    }
    const double s = rng.uniform(0.10, 0.22) * std::min(h, w);
    const double a = rng.uniform(0.5, 1.0);
    if (b < cfg.n_labels) anchors.push_back({cx, cy, s});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = (static_cast<double>(x) - cx) / s;
        const double dy = (static_cast<double>(y) - cy) / s;
        pot[y * w + x] += a * std::exp(-0.5 * (dx * dx + dy * dy));
      }
  }
  normalise01(pot);

  // Fine texture so the local correlation has signal everywhere.
  std::vector<double> texture(h * w);
  for (double& v : texture) v = rng.uniform();
  gaussian_blur(texture, h, w, 2.0);
  normalise01(texture);

  std::vector<double> base(h * w);
  for (std::size_t i = 0; i < base.size(); ++i)
    base[i] = std::clamp(0.7 * pot[i] + 0.3 * texture[i], 0.0, 1.0);

  // Compact label blobs: a small disc around each anchoring bump, ties
  // resolved by radius-normalised distance. Radii are kept small relative to
  // the deformation scale so the unregistered overlap leaves headroom.
  std::vector<std::uint8_t> base_labels(h * w, 0);
  const double r_cap = 0.095 * std::min(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double best = 1.0;
      int label = 0;
      for (int k = 0; k < cfg.n_labels; ++k) {
        const double r = std::clamp(0.45 * anchors[k].s, 3.0, r_cap);
        const double dx = static_cast<double>(x) - anchors[k].cx;
        const double dy = static_cast<double>(y) - anchors[k].cy;
        const double nd = std::sqrt(dx * dx + dy * dy) / r;
        if (nd <= 1.0 && nd < best) {
          best = nd;
          label = k + 1;
        }
      }
      base_labels[y * w + x] = static_cast<std::uint8_t>(label);
    }

  // Ground-truth field: smoothed white noise scaled to max |u| = amp, then
  // shrunk by bisection until no pixel folds.
  std::vector<double> field(2 * h * w, 0.0);
  if (cfg.amp > 0) {
    for (int c = 0; c < 2; ++c) {
      std::vector<double> ch(h * w);
      for (double& v : ch) v = rng.normal();
      gaussian_blur(ch, h, w, cfg.blur);
      std::copy(ch.begin(), ch.end(), field.begin() + c * h * w);
    }
    double maxabs = 0;
    for (double v : field) maxabs = std::max(maxabs, std::abs(v));
    if (maxabs > 0)
      for (double& v : field) v *= cfg.amp / maxabs;

    if (!fold_free(field, h, w)) {
      double lo = 0.0, hi = 1.0;
      std::vector<double> trial(field.size());
      for (int round = 0; round < 20; ++round) {
        const double mid = 0.5 * (lo + hi);
        for (std::size_t i = 0; i < field.size(); ++i) trial[i] = mid * field[i];
        if (fold_free(trial, h, w))
          lo = mid;
        else
          hi = mid;
      }
      if (lo == 0.0)
        fail_numeric("generate_pair: could not reach a fold-free field for seed ", seed);
      for (double& v : field) v *= lo;
    }
  }

  // moving carries the base content; fixed = warp(moving, u) so that
  // moving(x + u(x)) == fixed(x) exactly.
  pair.moving = base;
  pair.labels_moving = base_labels;
  pair.gt_field = field;
  pair.fixed.resize(h * w);
  const double* ux = field.data();
  const double* uy = field.data() + h * w;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      pair.fixed[p] = bilinear(base, h, w, static_cast<double>(x) + ux[p],
                               static_cast<double>(y) + uy[p]);
    }
  pair.labels_fixed = warp_labels(base_labels, field.data(), h, w);

  // Keypoints on the fixed grid; moving correspondences via the exact field.
  const double margin = 3.0;
  pair.kp_fixed.reserve(cfg.n_keypoints);
  pair.kp_moving.reserve(cfg.n_keypoints);
  for (int k = 0; k < cfg.n_keypoints; ++k) {
    Point p{rng.uniform(margin, static_cast<double>(w - 1) - margin),
            rng.uniform(margin, static_cast<double>(h - 1) - margin)};
    const Point d = sample_field(field.data(), h, w, p);
    pair.kp_fixed.push_back(p);
    pair.kp_moving.push_back({p[0] + d[0], p[1] + d[1]});
  }
  return pair;
}

CorpusSplit corpus_seeds(std::uint64_t base_seed, std::size_t n_train, std::size_t n_val,
                         std::size_t n_test) {
  CorpusSplit split;
  std::uint64_t s = base_seed;
  for (std::size_t i = 0; i < n_train; ++i) split.train.push_back(s++);
  for (std::size_t i = 0; i < n_val; ++i) split.val.push_back(s++);
  for (std::size_t i = 0; i < n_test; ++i) split.test.push_back(s++);
  return split;
}

}  // namespace eqreg
