#include "eqreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace eqreg {

DiceResult dice(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::array<std::size_t, 256> count_a{}, count_b{}, count_ab{};
  for (std::size_t i = 0; i < n; ++i) {
    count_a[a[i]]++;
    count_b[b[i]]++;
    if (a[i] == b[i]) count_ab[a[i]]++;
  }
  DiceResult res;
  double sum = 0;
  std::size_t labels = 0;
  for (int l = 1; l < 256; ++l) {
    if (count_a[l] == 0 && count_b[l] == 0) continue;
    const double d = 2.0 * static_cast<double>(count_ab[l]) /
                     static_cast<double>(count_a[l] + count_b[l]);
    res.per_label[l] = d;
    sum += d;
    ++labels;
  }
  res.mean = labels ? sum / static_cast<double>(labels) : 0.0;
  return res;
}

namespace {

std::vector<Point> boundary_points(const std::uint8_t* m, std::size_t h, std::size_t w,
                                   int label) {
  std::vector<Point> pts;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (m[y * w + x] != label) continue;
      const bool edge = y == 0 || y + 1 == h || x == 0 || x + 1 == w ||
                        m[(y - 1) * w + x] != label || m[(y + 1) * w + x] != label ||
                        m[y * w + x - 1] != label || m[y * w + x + 1] != label;
      if (edge) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  }
  return pts;
}

double directed_hausdorff(const std::vector<Point>& from, const std::vector<Point>& to) {
  double worst = 0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p[0] - q[0];
      const double dy = p[1] - q[1];
      best = std::min(best, dx * dx + dy * dy);
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

}  // namespace

double hausdorff(const std::uint8_t* a, const std::uint8_t* b, std::size_t h,
                 std::size_t w, int label) {
  const auto pa = boundary_points(a, h, w, label);
  const auto pb = boundary_points(b, h, w, label);
  if (pa.empty() || pb.empty())
    fail_contract("hausdorff: label ", label, " missing from ",
                  pa.empty() ? "first" : "second", " mask");
  return std::max(directed_hausdorff(pa, pb), directed_hausdorff(pb, pa));
}

Point sample_field(const double* u, std::size_t h, std::size_t w, Point p) {
  const double xs = std::min(std::max(p[0], 0.0), static_cast<double>(w - 1));
  const double ys = std::min(std::max(p[1], 0.0), static_cast<double>(h - 1));
  const std::size_t x0 = static_cast<std::size_t>(xs);
  const std::size_t y0 = static_cast<std::size_t>(ys);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const double wx = xs - static_cast<double>(x0);
  const double wy = ys - static_cast<double>(y0);
  Point out{};
  for (int c = 0; c < 2; ++c) {
    const double* plane = u + c * h * w;
    out[c] = (1 - wy) * ((1 - wx) * plane[y0 * w + x0] + wx * plane[y0 * w + x1]) +
             wy * ((1 - wx) * plane[y1 * w + x0] + wx * plane[y1 * w + x1]);
  }
  return out;
}

TreResult tre(const std::vector<Point>& kp_fixed, const std::vector<Point>& kp_moving,
              const double* u, std::size_t h, std::size_t w) {
  if (kp_fixed.size() != kp_moving.size())
    fail_contract("tre: keypoint count mismatch ", kp_fixed.size(), " vs ",
                  kp_moving.size());
  TreResult res;
  if (kp_fixed.empty()) return res;
  double sum = 0;
  for (std::size_t k = 0; k < kp_fixed.size(); ++k) {
    const Point& p = kp_fixed[k];
    if (p[0] < 0 || p[0] > static_cast<double>(w - 1) || p[1] < 0 ||
        p[1] > static_cast<double>(h - 1))
      res.clamped = true;
    const Point d = sample_field(u, h, w, p);
    const double ex = p[0] + d[0] - kp_moving[k][0];
    const double ey = p[1] + d[1] - kp_moving[k][1];
    sum += std::sqrt(ex * ex + ey * ey);
  }
  res.mean = sum / static_cast<double>(kp_fixed.size());
  return res;
}

std::vector<std::uint8_t> warp_labels(const std::vector<std::uint8_t>& labels,
                                      const double* u, std::size_t h, std::size_t w) {
  if (labels.size() != h * w) fail_contract("warp_labels: bad grid size");
  std::vector<std::uint8_t> out(h * w);
  const double* ux = u;
  const double* uy = u + h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      double xs = static_cast<double>(x) + ux[p];
      double ys = static_cast<double>(y) + uy[p];
      xs = std::min(std::max(xs, 0.0), static_cast<double>(w - 1));
      ys = std::min(std::max(ys, 0.0), static_cast<double>(h - 1));
      const std::size_t xi = static_cast<std::size_t>(std::lround(xs));
      const std::size_t yi = static_cast<std::size_t>(std::lround(ys));
      out[p] = labels[std::min(yi, h - 1) * w + std::min(xi, w - 1)];
    }
  }
  return out;
}

}  // namespace eqreg
