#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "eqreg/common.hpp"
#include "eqreg/metrics.hpp"
#include "eqreg/rng.hpp"

namespace eqreg {

// One synthetic registration pair with ground truth. The generated field u
// maps fixed coordinates to moving ones, the direction consumed by
// warp(moving, u): moving(x + u(x)) == fixed(x) holds by construction, so the
// ground-truth field registers the pair exactly.
struct SyntheticPair {
  std::size_t h = 0, w = 0;
  std::vector<double> fixed, moving;                 // [H*W], intensities in [0,1]
  std::vector<std::uint8_t> labels_fixed, labels_moving;
  std::vector<Point> kp_fixed, kp_moving;
  std::vector<double> gt_field;                      // [2,H,W]
  std::uint64_t seed = 0;
};

struct GenConfig {
  std::size_t h = 64, w = 64;
  double amp = 4.0;       // target max |u| in pixels (reduced if it would fold)
  double blur = 7.0;      // Gaussian smoothing of the field noise
  int n_labels = 4;
  int n_keypoints = 16;
};

SyntheticPair generate_pair(std::uint64_t seed, const GenConfig& cfg);

// Deterministic disjoint split: train seeds [base, base+n_train), then val,
// then test.
struct CorpusSplit {
  std::vector<std::uint64_t> train, val, test;
};
CorpusSplit corpus_seeds(std::uint64_t base_seed, std::size_t n_train, std::size_t n_val,
                         std::size_t n_test);

// Separable Gaussian blur with border-renormalised truncated kernel.
void gaussian_blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma);

}  // namespace eqreg
