#include "doctest.h"
#include "eqreg/image_ops.hpp"
#include "support.hpp"

using namespace eqreg;
using testsupport::random_image;

TEST_CASE("warp with zero field is the identity, exactly") {
  Rng rng(21);
  Tensor<double> img = random_image(rng, 9, 7);
  Tape<double> tape;
  Tensor<double> out = warp(tape, img, Tensor<double>::zeros({1, 2, 9, 7}));
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(out.vec()[i] == img.vec()[i]);
}

TEST_CASE("warp of a constant image stays constant under any finite field") {
  Rng rng(22);
  Tensor<double> img = Tensor<double>::full({1, 1, 8, 8}, 0.37);
  Tensor<double> u = Tensor<double>::randn({1, 2, 8, 8}, rng, 5.0);
  Tape<double> tape;
  Tensor<double> out = warp(tape, img, u);
  for (double v : out.vec()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("warp of a ramp under uniform shift matches the manual bilinear oracle") {
  // 4x4 ramp image I(y,x) = x, uniform shift u = (1, 0): samples at x+1 with
  // border clamping, so out(y,x) = min(x+1, 3).
  Tensor<double> img = Tensor<double>::zeros({1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) img.vec()[y * 4 + x] = static_cast<double>(x);
  Tensor<double> u = Tensor<double>::zeros({1, 2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) u.vec()[i] = 1.0;
  Tape<double> tape;
  Tensor<double> out = warp(tape, img, u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      CHECK(out.vec()[y * 4 + x] ==
            doctest::Approx(std::min<double>(x + 1.0, 3.0)).epsilon(1e-15));
}

TEST_CASE("lncc of an image with itself is 1") {
  Rng rng(23);
  Tape<double> tape;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> img = random_image(rng, 10, 10);
    CHECK(lncc(tape, img, img, 5).item() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("lncc is invariant to positive affine intensity rescaling") {
  Rng rng(24);
  Tape<double> tape;
  Tensor<double> img = random_image(rng, 12, 9);
  Tensor<double> rescaled = img.detached();
  for (auto& v : rescaled.vec()) v = 1.8 * v + 0.4;
  CHECK(lncc(tape, img, rescaled, 5).item() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("lncc centre window matches a direct Pearson-correlation oracle") {
  Rng rng(25);
  Tensor<double> a = random_image(rng, 5, 5);
  Tensor<double> b = random_image(rng, 5, 5);
  // direct two-pass Pearson over the full 5x5 support (the centre pixel's
  // window)
  double mu_a = 0, mu_b = 0;
  for (std::size_t i = 0; i < 25; ++i) {
    mu_a += a.vec()[i];
    mu_b += b.vec()[i];
  }
  mu_a /= 25;
  mu_b /= 25;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < 25; ++i) {
    cov += (a.vec()[i] - mu_a) * (b.vec()[i] - mu_b);
    va += (a.vec()[i] - mu_a) * (a.vec()[i] - mu_a);
    vb += (b.vec()[i] - mu_b) * (b.vec()[i] - mu_b);
  }
  const double pearson = (cov / 25) / std::sqrt((va / 25) * (vb / 25));
  const double centre =
      kernels::lncc_window(a.ptr(), b.ptr(), 5, 5, 2, 2, 2).cov /
      std::sqrt(std::max(kernels::lncc_window(a.ptr(), b.ptr(), 5, 5, 2, 2, 2).var_f,
                         kLnccVarianceFloor) *
                std::max(kernels::lncc_window(a.ptr(), b.ptr(), 5, 5, 2, 2, 2).var_g,
                         kLnccVarianceFloor));
  CHECK(centre == doctest::Approx(pearson).epsilon(1e-12));
}

TEST_CASE("lncc stays within [-1, 1]") {
  Rng rng(26);
  Tape<double> tape;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> a = random_image(rng, 8, 8);
    Tensor<double> b = random_image(rng, 8, 8);
    const double v = lncc(tape, a, b, 5).item();
    CHECK(v <= 1.0 + 1e-12);
    CHECK(v >= -1.0 - 1e-12);
  }
}

TEST_CASE("lncc rejects windows larger than the image") {
  Tape<double> tape;
  Tensor<double> img = Tensor<double>::zeros({1, 1, 4, 4});
  CHECK_THROWS_AS(lncc(tape, img, img, 5), ContractViolation);
}

TEST_CASE("diffusion regulariser basics") {
  Tape<double> tape;
  SUBCASE("zero field gives zero") {
    CHECK(diffusion(tape, Tensor<double>::zeros({1, 2, 6, 6})).item() == 0.0);
  }
  SUBCASE("constant field gives zero") {
    CHECK(diffusion(tape, Tensor<double>::full({1, 2, 6, 6}, 3.2)).item() == 0.0);
  }
  SUBCASE("non-constant field is strictly positive") {
    Rng rng(27);
    Tensor<double> u = Tensor<double>::randn({1, 2, 6, 6}, rng);
    CHECK(diffusion(tape, u).item() > 0.0);
  }
  SUBCASE("linear ramp matches the closed form of the stencil") {
    // u_x(y,x) = a*x, u_y = 0. Forward x-differences equal a at H*(W-1)
    // sites; normaliser is C*H*W with C = 2.
    const double a = 0.75;
    const std::size_t H = 7, W = 9;
    Tensor<double> u = Tensor<double>::zeros({1, 2, H, W});
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) u.vec()[y * W + x] = a * static_cast<double>(x);
    const double expected =
        a * a * static_cast<double>(H * (W - 1)) / static_cast<double>(2 * H * W);
    CHECK(diffusion(tape, u).item() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("total loss composition") {
  Rng rng(28);
  Tape<double> tape;
  SUBCASE("identical images at zero field give -1 for any lambda") {
    Tensor<double> img = random_image(rng, 8, 8);
    Tensor<double> u = Tensor<double>::zeros({1, 2, 8, 8});
    for (double lambda : {0.0, 0.1, 2.0})
      CHECK(total_loss(tape, img, img, u, lambda).item() ==
            doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("lambda = 0 reduces to the pure similarity term") {
    Tensor<double> f = random_image(rng, 8, 8);
    Tensor<double> m = random_image(rng, 8, 8);
    Tensor<double> u = testsupport::safe_displacement(rng, 8, 8);
    const double sim = lncc(tape, f, warp(tape, m, u), 5).item();
    CHECK(total_loss(tape, f, m, u, 0.0).item() == doctest::Approx(-sim).epsilon(1e-12));
  }
  SUBCASE("total equals the sum of independently computed parts") {
    Tensor<double> f = random_image(rng, 8, 8);
    Tensor<double> m = random_image(rng, 8, 8);
    Tensor<double> u = testsupport::safe_displacement(rng, 8, 8);
    const double lambda = 0.37;
    const double sim = lncc(tape, f, warp(tape, m, u), 5).item();
    const double reg = diffusion(tape, u).item();
    CHECK(total_loss(tape, f, m, u, lambda).item() ==
          doctest::Approx(-sim + lambda * reg).epsilon(1e-12));
  }
  SUBCASE("negative lambda is rejected") {
    Tensor<double> img = random_image(rng, 8, 8);
    CHECK_THROWS_AS(total_loss(tape, img, img, Tensor<double>::zeros({1, 2, 8, 8}), -0.1),
                    ContractViolation);
  }
}

TEST_CASE("jacobian stats") {
  SUBCASE("identity field: det 1, no folding, zero spread") {
    const auto st = jacobian_stats(Tensor<double>::zeros({1, 2, 8, 8}));
    CHECK(st.folded_fraction == 0.0);
    CHECK(st.std_log_jdet == 0.0);
    for (double d : st.det_map) CHECK(d == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("uniform translation matches identity stats") {
    Tensor<double> u = Tensor<double>::zeros({1, 2, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) u.vec()[i] = 2.5;
    for (std::size_t i = 64; i < 128; ++i) u.vec()[i] = -1.5;
    const auto st = jacobian_stats(u);
    CHECK(st.folded_fraction == 0.0);
    CHECK(st.std_log_jdet == 0.0);
  }
  SUBCASE("translation invariance of the determinant map") {
    Rng rng(29);
    Tensor<double> u = Tensor<double>::randn({1, 2, 10, 10}, rng, 0.4);
    Tensor<double> shifted = u.detached();
    for (std::size_t i = 0; i < 100; ++i) shifted.vec()[i] += 4.0;
    for (std::size_t i = 100; i < 200; ++i) shifted.vec()[i] -= 2.0;
    const auto a = jacobian_stats(u);
    const auto b = jacobian_stats(shifted);
    REQUIRE(a.det_map.size() == b.det_map.size());
    for (std::size_t i = 0; i < a.det_map.size(); ++i)
      CHECK(a.det_map[i] == doctest::Approx(b.det_map[i]).epsilon(1e-12));
  }
  SUBCASE("a constructed fold is detected and matches per-pixel enumeration") {
    // u_x = -2x on a vertical strip folds the map there.
    const std::size_t H = 8, W = 8;
    Tensor<double> u = Tensor<double>::zeros({1, 2, H, W});
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 3; x <= 5; ++x)
        u.vec()[y * W + x] = -2.0 * static_cast<double>(x);
    const auto st = jacobian_stats(u);
    CHECK(st.folded_fraction > 0.0);
    // independent enumeration
    std::size_t folded = 0, total = 0;
    const auto ux = [&](std::size_t y, std::size_t x) { return u.vec()[y * W + x]; };
    for (std::size_t y = 1; y + 1 < H; ++y)
      for (std::size_t x = 1; x + 1 < W; ++x) {
        const double dxx = 0.5 * (ux(y, x + 1) - ux(y, x - 1));
        const double det = (1.0 + dxx) * 1.0;
        ++total;
        if (det <= 0) ++folded;
      }
    CHECK(st.folded_fraction ==
          doctest::Approx(static_cast<double>(folded) / total).epsilon(1e-15));
  }
}
