#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "eqreg/checkpoint.hpp"
#include "eqreg/eval.hpp"
#include "eqreg/io.hpp"
#include "eqreg/synth.hpp"
#include "support.hpp"

using namespace eqreg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eqreg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ---------------- dice ----------------

TEST_CASE("dice: identical, disjoint, half-overlapping") {
  std::vector<std::uint8_t> a(16 * 16, 0), b(16 * 16, 0);
  SUBCASE("identical masks give 1") {
    for (std::size_t i = 0; i < 64; ++i) a[i] = b[i] = 1;
    CHECK(dice(a, b).mean == 1.0);
  }
  SUBCASE("disjoint masks give 0") {
    a[0] = 1;
    b[200] = 1;
    CHECK(dice(a, b).mean == 0.0);
  }
  SUBCASE("8x8 square against a half-shifted copy gives exactly 0.5") {
    // overlap is 8x4 = 32, each square 64: 2*32/(64+64) = 0.5
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        a[y * 16 + x] = 1;
        b[y * 16 + x + 4] = 1;
      }
    CHECK(dice(a, b).mean == 0.5);
  }
  SUBCASE("symmetry") {
    testsupport::Rng rng(31);
    for (auto& v : a) v = static_cast<std::uint8_t>(rng.below(3));
    for (auto& v : b) v = static_cast<std::uint8_t>(rng.below(3));
    CHECK(dice(a, b).mean == dice(b, a).mean);
  }
  SUBCASE("label absent from both masks is excluded from the mean") {
    for (std::size_t i = 0; i < 32; ++i) a[i] = b[i] = 3;
    const auto r = dice(a, b);
    CHECK(r.per_label.size() == 1);
    CHECK(r.per_label.count(3) == 1);
  }
}

// ---------------- hausdorff ----------------

TEST_CASE("hausdorff distances") {
  const std::size_t H = 16, W = 16;
  std::vector<std::uint8_t> a(H * W, 0), b(H * W, 0);
  SUBCASE("identical masks give 0") {
    for (std::size_t y = 4; y < 8; ++y)
      for (std::size_t x = 4; x < 8; ++x) a[y * W + x] = b[y * W + x] = 1;
    CHECK(hausdorff(a, b, H, W, 1) == 0.0);
  }
  SUBCASE("two single pixels 3 apart give exactly 3") {
    a[5 * W + 5] = 1;
    b[5 * W + 8] = 1;
    CHECK(hausdorff(a, b, H, W, 1) == 3.0);
  }
  SUBCASE("concentric squares match the brute-force point-pair oracle") {
    // half-widths 2 and 4 around (8,8)
    for (std::size_t y = 6; y <= 10; ++y)
      for (std::size_t x = 6; x <= 10; ++x) a[y * W + x] = 1;
    for (std::size_t y = 4; y <= 12; ++y)
      for (std::size_t x = 4; x <= 12; ++x) b[y * W + x] = 1;
    // oracle: exhaustive over boundary pixels of each set
    const auto boundary = [&](const std::vector<std::uint8_t>& m) {
      std::vector<Point> pts;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (m[y * W + x] != 1) continue;
          bool edge = false;
          if (y == 0 || m[(y - 1) * W + x] != 1) edge = true;
          if (y + 1 == H || m[(y + 1) * W + x] != 1) edge = true;
          if (x == 0 || m[y * W + x - 1] != 1) edge = true;
          if (x + 1 == W || m[y * W + x + 1] != 1) edge = true;
          if (edge) pts.push_back({double(x), double(y)});
        }
      return pts;
    };
    const auto pa = boundary(a);
    const auto pb = boundary(b);
    double worst = 0;
    for (const auto& p : pa) {
      double best = 1e300;
      for (const auto& q : pb)
        best = std::min(best, std::hypot(p[0] - q[0], p[1] - q[1]));
      worst = std::max(worst, best);
    }
    for (const auto& p : pb) {
      double best = 1e300;
      for (const auto& q : pa)
        best = std::min(best, std::hypot(p[0] - q[0], p[1] - q[1]));
      worst = std::max(worst, best);
    }
    CHECK(hausdorff(a, b, H, W, 1) == doctest::Approx(worst).epsilon(1e-12));
    CHECK(hausdorff(a, b, H, W, 1) == hausdorff(b, a, H, W, 1));
  }
  SUBCASE("missing label names the label") {
    a[0] = 1;
    try {
      hausdorff(a, b, H, W, 1);
      FAIL("expected error");
    } catch (const ContractViolation& e) {
      CHECK(std::string(e.what()).find("label 1") != std::string::npos);
    }
  }
}

// ---------------- tre ----------------

TEST_CASE("tre") {
  const std::size_t H = 16, W = 16;
  std::vector<double> u(2 * H * W, 0.0);
  SUBCASE("zero field, coincident points -> 0") {
    std::vector<Point> kp{{3.5, 4.25}, {10.0, 2.0}};
    CHECK(tre(kp, kp, u.data(), H, W).mean == 0.0);
  }
  SUBCASE("zero field -> mean of raw distances") {
    std::vector<Point> kf{{2.0, 2.0}, {5.0, 5.0}};
    std::vector<Point> km{{2.0, 5.0}, {9.0, 8.0}};
    CHECK(tre(kf, km, u.data(), H, W).mean ==
          doctest::Approx((3.0 + 5.0) / 2.0).epsilon(1e-14));
  }
  SUBCASE("out-of-image point is clamped and flagged") {
    std::vector<Point> kf{{-2.0, 4.0}};
    std::vector<Point> km{{-2.0, 4.0}};
    const auto r = tre(kf, km, u.data(), H, W);
    CHECK(r.clamped);
  }
  SUBCASE("count mismatch is rejected") {
    std::vector<Point> kf{{1, 1}};
    std::vector<Point> km;
    CHECK_THROWS_AS(tre(kf, km, u.data(), H, W), ContractViolation);
  }
}

// ---------------- synthetic generator ----------------

TEST_CASE("generator: amp=0 gives identical images and zero TRE") {
  GenConfig gc;
  gc.h = gc.w = 32;
  gc.amp = 0;
  const auto pair = generate_pair(101, gc);
  CHECK(std::memcmp(pair.fixed.data(), pair.moving.data(),
                    pair.fixed.size() * sizeof(double)) == 0);
  CHECK(tre(pair.kp_fixed, pair.kp_moving, pair.gt_field.data(), 32, 32).mean == 0.0);
}

TEST_CASE("generator: same seed twice is bit-identical") {
  GenConfig gc;
  gc.h = gc.w = 48;
  const auto a = generate_pair(202, gc);
  const auto b = generate_pair(202, gc);
  CHECK(std::memcmp(a.fixed.data(), b.fixed.data(), a.fixed.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.gt_field.data(), b.gt_field.data(),
                    a.gt_field.size() * sizeof(double)) == 0);
  CHECK(a.labels_fixed == b.labels_fixed);
  REQUIRE(a.kp_fixed.size() == b.kp_fixed.size());
  for (std::size_t i = 0; i < a.kp_fixed.size(); ++i) {
    CHECK(a.kp_fixed[i] == b.kp_fixed[i]);
    CHECK(a.kp_moving[i] == b.kp_moving[i]);
  }
}

TEST_CASE("generator: fields are fold-free across 100 seeds") {
  GenConfig gc;
  gc.h = gc.w = 32;
  gc.amp = 4.0;  // aggressive enough that bisection sometimes has to act
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    const auto pair = generate_pair(seed, gc);
    CHECK(jacobian_stats(pair.gt_field.data(), 32, 32).folded_fraction == 0.0);
  }
}

TEST_CASE("generator: ground-truth field registers its own pair") {
  GenConfig gc;  // default 64x64
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto pair = generate_pair(seed, gc);
    const auto warped = warp_labels(pair.labels_moving, pair.gt_field.data(), pair.h,
                                    pair.w);
    CHECK(dice(pair.labels_fixed, warped).mean > 0.98);
    CHECK(tre(pair.kp_fixed, pair.kp_moving, pair.gt_field.data(), pair.h, pair.w).mean <
          0.5);
    // labels cover a reasonable area and all labels are present
    const auto d = dice(pair.labels_fixed, pair.labels_fixed);
    CHECK(d.per_label.size() == static_cast<std::size_t>(gc.n_labels));
  }
}

TEST_CASE("generator: unregistered overlap leaves room for improvement") {
  GenConfig gc;
  const auto pair = generate_pair(4, gc);
  const double d0 = dice(pair.labels_fixed, pair.labels_moving).mean;
  CHECK(d0 < 0.92);
  CHECK(d0 > 0.2);
}

TEST_CASE("corpus split is disjoint and deterministic") {
  const auto a = corpus_seeds(100, 10, 2, 4);
  const auto b = corpus_seeds(100, 10, 2, 4);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  std::set<std::uint64_t> all;
  for (auto s : a.train) all.insert(s);
  for (auto s : a.val) all.insert(s);
  for (auto s : a.test) all.insert(s);
  CHECK(all.size() == 16);
}

// ---------------- dten i/o ----------------

TEST_CASE("dten: f32 round trip is bitwise exact") {
  const auto dir = temp_dir("dten_f32");
  testsupport::Rng rng(41);
  std::vector<float> v(2 * 16 * 16);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  write_dten(dir / "t.dten", make_dten({2, 16, 16}, v));
  const auto back = read_dten(dir / "t.dten");
  CHECK(back.dtype == Dtype::F32);
  REQUIRE(back.dims == std::vector<std::size_t>{2, 16, 16});
  const auto& bv = back.as<float>();
  CHECK(std::memcmp(bv.data(), v.data(), v.size() * sizeof(float)) == 0);
}

TEST_CASE("dten: u8 label grid round trip preserves the histogram") {
  const auto dir = temp_dir("dten_u8");
  testsupport::Rng rng(43);
  std::vector<std::uint8_t> v(64 * 64);
  std::array<std::size_t, 256> hist{};
  for (auto& x : v) {
    x = static_cast<std::uint8_t>(rng.below(5));
    hist[x]++;
  }
  write_dten(dir / "labels.dten", make_dten({64, 64}, v));
  const auto back = read_dten(dir / "labels.dten").as<std::uint8_t>();
  std::array<std::size_t, 256> hist2{};
  for (auto x : back) hist2[x]++;
  CHECK(hist == hist2);
}

TEST_CASE("dten: corrupt files raise distinct error codes") {
  const auto dir = temp_dir("dten_bad");
  std::vector<float> v(4, 1.0f);
  write_dten(dir / "ok.dten", make_dten({4}, v));
  auto bytes = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  auto rewrite = [&](const fs::path& p, std::string s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  const std::string good = bytes(dir / "ok.dten");

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  rewrite(dir / "bad_magic.dten", bad_magic);
  std::string bad_version = good;
  bad_version[4] = 9;
  rewrite(dir / "bad_version.dten", bad_version);
  std::string bad_dtype = good;
  bad_dtype[5] = 77;
  rewrite(dir / "bad_dtype.dten", bad_dtype);
  std::string truncated = good.substr(0, good.size() - 3);
  rewrite(dir / "trunc.dten", truncated);

  const auto status_of = [&](const fs::path& p) {
    try {
      read_dten(p);
    } catch (const IoError& e) {
      return e.status;
    }
    return IoStatus::BadFormat;
  };
  CHECK(status_of(dir / "bad_magic.dten") == IoStatus::BadMagic);
  CHECK(status_of(dir / "bad_version.dten") == IoStatus::BadVersion);
  CHECK(status_of(dir / "bad_dtype.dten") == IoStatus::BadDtype);
  CHECK(status_of(dir / "trunc.dten") == IoStatus::Truncated);
  CHECK(status_of(dir / "missing.dten") == IoStatus::FileMissing);
}

// ---------------- keypoint csv ----------------

TEST_CASE("keypoints csv") {
  const auto dir = temp_dir("kp");
  SUBCASE("empty file gives an empty list") {
    std::ofstream(dir / "empty.csv").close();
    CHECK(read_keypoints_csv(dir / "empty.csv").empty());
  }
  SUBCASE("simple pair parses exactly") {
    std::ofstream out(dir / "one.csv");
    out << "1.5,2.25\n";
    out.close();
    const auto pts = read_keypoints_csv(dir / "one.csv");
    REQUIRE(pts.size() == 1);
    CHECK(pts[0][0] == 1.5);
    CHECK(pts[0][1] == 2.25);
  }
  SUBCASE("100 random points survive a round trip within 1e-6") {
    testsupport::Rng rng(47);
    std::vector<Point> pts;
    for (int i = 0; i < 100; ++i)
      pts.push_back({rng.uniform(0, 512), rng.uniform(0, 512)});
    write_keypoints_csv(dir / "many.csv", pts);
    const auto back = read_keypoints_csv(dir / "many.csv");
    REQUIRE(back.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(back[i][0] - pts[i][0]) < 1e-6);
      CHECK(std::abs(back[i][1] - pts[i][1]) < 1e-6);
    }
  }
  SUBCASE("malformed line reports its line number") {
    std::ofstream out(dir / "bad.csv");
    out << "1.0,2.0\nnope\n";
    out.close();
    try {
      read_keypoints_csv(dir / "bad.csv");
      FAIL("expected error");
    } catch (const IoError& e) {
      CHECK(e.status == IoStatus::BadFormat);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
}

// ---------------- pair/corpus/checkpoint round trips ----------------

TEST_CASE("pair and manifest round trip") {
  const auto dir = temp_dir("corpus");
  GenConfig gc;
  gc.h = gc.w = 32;
  const auto pair = generate_pair(71, gc);
  write_pair(dir / "pairs" / "p0", pair);
  const auto back = read_pair(dir / "pairs" / "p0");
  CHECK(back.h == pair.h);
  CHECK(std::memcmp(back.fixed.data(), pair.fixed.data(),
                    pair.fixed.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(back.gt_field.data(), pair.gt_field.data(),
                    pair.gt_field.size() * sizeof(double)) == 0);
  CHECK(back.labels_moving == pair.labels_moving);
  CHECK(back.seed == pair.seed);

  write_manifest(dir / "manifest.txt", {{"train", "pairs/p0"}});
  const auto pairs = load_split(dir, "train");
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].h == pair.h);
  CHECK(load_split(dir, "test").empty());
}

TEST_CASE("checkpoint round trip preserves parameters and meta") {
  const auto dir = temp_dir("ckpt");
  auto net = UpdateNet<double>::make(81, 0.07, 8, 0.15, false);
  CheckpointMeta meta;
  meta.mode = "deq";
  meta.alpha = 0.07;
  meta.hidden = 8;
  meta.trained_steps = 48;
  meta.dtype = "f64";
  save_checkpoint(dir, net, meta);
  const auto meta2 = load_checkpoint_meta(dir);
  CHECK(meta2.mode == "deq");
  CHECK(meta2.alpha == 0.07);
  CHECK(meta2.hidden == 8);
  CHECK(meta2.trained_steps == 48);
  auto net2 = load_checkpoint<double>(dir, meta2);
  CHECK(net2.params.count() == net.params.count());
  for (const auto& [name, p] : net.params.all()) {
    const auto& q = net2.params.at(name);
    REQUIRE(q.shape == p.shape);
    CHECK(std::memcmp(q.ptr(), p.ptr(), p.numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("config parser") {
  const auto dir = temp_dir("cfg");
  std::ofstream out(dir / "c.txt");
  out << "# comment\n"
      << "lambda = 0.125\n"
      << "epochs=12\n"
      << "mode =  deq \n";
  out.close();
  const auto kv = parse_kv_file(dir / "c.txt");
  CHECK(kv_double(kv, "lambda", 0) == 0.125);
  CHECK(kv_long(kv, "epochs", 0) == 12);
  CHECK(kv_string(kv, "mode", "") == "deq");
  CHECK(kv_double(kv, "absent", 7.5) == 7.5);
  std::ofstream bad(dir / "bad.txt");
  bad << "no_equals_here\n";
  bad.close();
  CHECK_THROWS_AS(parse_kv_file(dir / "bad.txt"), IoError);
}

// ---------------- evaluation harness ----------------

TEST_CASE("evaluate_pair: ground-truth field mode reproduces the generator") {
  GenConfig gc;
  const auto pair = generate_pair(5, gc);
  EvalContext<double> ctx;
  ctx.mode = RegMode::GroundTruth;
  const auto rec = evaluate_pair(ctx, pair, 1);
  CHECK(rec.dice > 0.98);
  CHECK(rec.tre < 0.5);
  CHECK(rec.folded_fraction == 0.0);
}

TEST_CASE("evaluate_pair: zero mode equals the unregistered metrics") {
  GenConfig gc;
  const auto pair = generate_pair(6, gc);
  EvalContext<double> ctx;
  ctx.mode = RegMode::Zero;
  const auto rec = evaluate_pair(ctx, pair, 1);
  CHECK(rec.dice ==
        doctest::Approx(dice(pair.labels_fixed, pair.labels_moving).mean).epsilon(1e-14));
  CHECK(rec.tre ==
        doctest::Approx(
            tre(pair.kp_fixed, pair.kp_moving,
                std::vector<double>(2 * pair.h * pair.w, 0.0).data(), pair.h, pair.w)
                .mean)
            .epsilon(1e-12));
  CHECK(rec.folded_fraction == 0.0);
}

TEST_CASE("evaluate_pair: record fields equal independently invoked metrics") {
  GenConfig gc;
  gc.h = gc.w = 32;
  const auto pair = generate_pair(7, gc);
  auto net = UpdateNet<double>::make(7, 0.05, 8, 0.08, false);
  EvalContext<double> ctx;
  ctx.mode = RegMode::Unroll;
  ctx.net = &net;
  const auto rec = evaluate_pair(ctx, pair, 4);

  Tensor<double> fixed(Shape{1, 1, 32, 32}, pair.fixed);
  Tensor<double> moving(Shape{1, 1, 32, 32}, pair.moving);
  Tape<double> tape;
  NoGradScope ng(tape);
  auto traj = unroll_forward(tape, net, fixed, moving, 4);
  REQUIRE(traj.size() == 5);  // steps honored exactly
  std::vector<double> field(traj.back().vec().begin(), traj.back().vec().end());
  const auto warped = warp_labels(pair.labels_moving, field.data(), 32, 32);
  CHECK(rec.dice == doctest::Approx(dice(pair.labels_fixed, warped).mean).epsilon(1e-14));
  CHECK(rec.tre ==
        doctest::Approx(tre(pair.kp_fixed, pair.kp_moving, field.data(), 32, 32).mean)
            .epsilon(1e-12));
  const auto jac = jacobian_stats(field.data(), 32, 32);
  CHECK(rec.folded_fraction == doctest::Approx(jac.folded_fraction).epsilon(1e-14));
  CHECK(rec.std_log_jdet == doctest::Approx(jac.std_log_jdet).epsilon(1e-12));
}

TEST_CASE("sweep: singleton step list reproduces evaluate_pair") {
  GenConfig gc;
  gc.h = gc.w = 32;
  std::vector<SyntheticPair> pairs;
  for (std::uint64_t s = 30; s < 33; ++s) pairs.push_back(generate_pair(s, gc));
  auto net = UpdateNet<double>::make(13, 0.05, 8, 0.08, false);
  EvalContext<double> ctx;
  ctx.mode = RegMode::Unroll;
  ctx.net = &net;
  const auto sweep = convergence_sweep(ctx, pairs, {4}, 4);
  REQUIRE(sweep.per_step.size() == 1);
  double dice_sum = 0;
  for (const auto& p : pairs) dice_sum += evaluate_pair(ctx, p, 4).dice;
  CHECK(sweep.per_step[0].dice_mean ==
        doctest::Approx(dice_sum / pairs.size()).epsilon(1e-14));
  CHECK(sweep.best_dice_steps == 4);
  CHECK(sweep.trained_steps == 4);
}

TEST_CASE("sweep: rejects non-increasing step lists") {
  EvalContext<double> ctx;
  ctx.mode = RegMode::Zero;
  GenConfig gc;
  gc.h = gc.w = 32;
  std::vector<SyntheticPair> pairs{generate_pair(1, gc)};
  CHECK_THROWS_AS(convergence_sweep(ctx, pairs, {4, 4}, 4), ContractViolation);
  CHECK_THROWS_AS(convergence_sweep(ctx, pairs, {}, 4), ContractViolation);
}
