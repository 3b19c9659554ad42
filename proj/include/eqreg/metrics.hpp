#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "eqreg/common.hpp"
#include "eqreg/image_ops.hpp"

namespace eqreg {

struct DiceResult {
  double mean = 0;                     // over labels present in either mask
  std::map<int, double> per_label;
};

// Label 0 is background and never scored.
DiceResult dice(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);

inline DiceResult dice(const std::vector<std::uint8_t>& a,
                       const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size())
    fail_contract("dice: size mismatch ", a.size(), " vs ", b.size());
  return dice(a.data(), b.data(), a.size());
}

// Symmetric max Hausdorff distance between the 4-connectivity boundaries of
// one label. Throws if the label is missing from either mask.
double hausdorff(const std::uint8_t* a, const std::uint8_t* b, std::size_t h,
                 std::size_t w, int label);

inline double hausdorff(const std::vector<std::uint8_t>& a,
                        const std::vector<std::uint8_t>& b, std::size_t h,
                        std::size_t w, int label) {
  if (a.size() != h * w || b.size() != h * w) fail_contract("hausdorff: bad grid size");
  return hausdorff(a.data(), b.data(), h, w, label);
}

using Point = std::array<double, 2>;  // (x, y)

struct TreResult {
  double mean = 0;
  bool clamped = false;  // a keypoint fell outside the image
};

// Mean ||p_fixed + u(p_fixed) - p_moving||ency with u bilinearly interpolated
// at the fixed keypoints.
TreResult tre(const std::vector<Point>& kp_fixed, const std::vector<Point>& kp_moving,
              const double* u, std::size_t h, std::size_t w);

// Nearest-neighbour label resampling through a displacement field.
std::vector<std::uint8_t> warp_labels(const std::vector<std::uint8_t>& labels,
                                      const double* u, std::size_t h, std::size_t w);

// Bilinear interpolation of one channel of a [2,H,W] field at a sub-pixel
// point, border-clamped. Returns (ux, uy).
Point sample_field(const double* u, std::size_t h, std::size_t w, Point p);

}  // namespace eqreg
