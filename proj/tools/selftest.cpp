#include "selftest.hpp"

#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>

#include "eqreg/deq.hpp"
#include "eqreg/eval.hpp"
#include "eqreg/io.hpp"
#include "eqreg/synth.hpp"
#include "eqreg/train.hpp"

namespace {

using namespace eqreg;

bool approx(double a, double b, double tol) { return std::abs(a - b) <= tol; }

double fd_error_scalar(const std::function<double(double)>& f, double x, double analytic,
                       double h = 1e-5) {
  const double numeric = (f(x + h) - f(x - h)) / (2 * h);
  return std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic),
                                                  1e-8});
}

bool check_autodiff() {
  // conv2d against the direct loop and a finite-difference probe
  Rng rng(1);
  Tensor<double> x = Tensor<double>::randn({1, 2, 5, 5}, rng);
  Tensor<double> w = Tensor<double>::randn({2, 2, 3, 3}, rng, 0.4);
  Tape<double> tape;
  Tensor<double> y = conv2d(tape, x, w);
  // identity-kernel probe
  Tensor<double> eye = Tensor<double>::zeros({1, 1, 3, 3});
  eye.vec()[4] = 1.0;
  Tensor<double> img = Tensor<double>::randn({1, 1, 4, 4}, rng);
  Tensor<double> same = conv2d(tape, img, eye);
  for (std::size_t i = 0; i < img.numel(); ++i)
    if (same.vec()[i] != img.vec()[i]) return false;

  // gradient of mean(conv(x, w)) wrt one weight via finite differences
  Tape<double> t2;
  Tensor<double> ww = t2.watch(w);
  t2.backward(reduce_mean(t2, conv2d(t2, x, ww)));
  const double analytic = t2.grad_of(ww).vec()[7];
  const auto f = [&](double v) {
    Tensor<double> wp = w.detached();
    wp.vec()[7] = v;
    Tape<double> t3;
    NoGradScope ng(t3);
    return reduce_mean(t3, conv2d(t3, x, wp)).item();
  };
  if (fd_error_scalar(f, w.vec()[7], analytic) > 1e-6) return false;
  (void)y;
  return true;
}

bool check_registration_ops() {
  Rng rng(2);
  Tensor<double> img = Tensor<double>::zeros({1, 1, 8, 8});
  for (auto& v : img.vec()) v = rng.uniform();
  Tape<double> tape;
  Tensor<double> zero = Tensor<double>::zeros({1, 2, 8, 8});
  Tensor<double> warped = warp(tape, img, zero);
  for (std::size_t i = 0; i < img.numel(); ++i)
    if (warped.vec()[i] != img.vec()[i]) return false;
  if (!approx(lncc(tape, img, img, 5).item(), 1.0, 1e-12)) return false;
  Tensor<double> rescaled = img.detached();
  for (auto& v : rescaled.vec()) v = 2.0 * v + 0.1;
  if (!approx(lncc(tape, img, rescaled, 5).item(), 1.0, 1e-10)) return false;
  if (diffusion(tape, Tensor<double>::full({1, 2, 8, 8}, 1.3)).item() != 0.0) return false;
  // linear ramp closed form
  const std::size_t H = 7, W = 9;
  Tensor<double> u = Tensor<double>::zeros({1, 2, H, W});
  for (std::size_t yy = 0; yy < H; ++yy)
    for (std::size_t xx = 0; xx < W; ++xx) u.vec()[yy * W + xx] = 0.5 * xx;
  const double expect = 0.25 * H * (W - 1) / static_cast<double>(2 * H * W);
  if (!approx(diffusion(tape, u).item(), expect, 1e-12)) return false;
  const auto st = jacobian_stats(Tensor<double>::zeros({1, 2, 8, 8}));
  return st.folded_fraction == 0.0 && st.std_log_jdet == 0.0;
}

bool check_metrics() {
  std::vector<std::uint8_t> a(256, 0), b(256, 0);
  for (std::size_t yy = 0; yy < 8; ++yy)
    for (std::size_t xx = 0; xx < 8; ++xx) {
      a[yy * 16 + xx] = 1;
      b[yy * 16 + xx + 4] = 1;
    }
  if (dice(a, b).mean != 0.5) return false;
  std::vector<std::uint8_t> c(256, 0), d(256, 0);
  c[5 * 16 + 5] = 1;
  d[5 * 16 + 8] = 1;
  if (hausdorff(c, d, 16, 16, 1) != 3.0) return false;
  std::vector<double> zero_field(2 * 256, 0.0);
  std::vector<Point> kf{{2, 2}}, km{{2, 5}};
  return approx(tre(kf, km, zero_field.data(), 16, 16).mean, 3.0, 1e-12);
}

bool check_io() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "eqreg_selftest";
  fs::create_directories(dir);
  Rng rng(3);
  std::vector<float> v(2 * 8 * 8);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  write_dten(dir / "t.dten", make_dten({2, 8, 8}, v));
  const auto back = read_dten(dir / "t.dten").as<float>();
  if (std::memcmp(back.data(), v.data(), v.size() * sizeof(float)) != 0) return false;
  bool caught = false;
  try {
    read_dten(dir / "does_not_exist.dten");
  } catch (const IoError& e) {
    caught = e.status == IoStatus::FileMissing;
  }
  if (!caught) return false;
  std::vector<Point> pts{{1.5, 2.25}, {3.125, 4.0}};
  write_keypoints_csv(dir / "kp.csv", pts);
  const auto pts2 = read_keypoints_csv(dir / "kp.csv");
  return pts2.size() == 2 && std::abs(pts2[0][0] - 1.5) < 1e-9;
}

bool check_solver() {
  const auto g = [](const std::vector<double>& x) {
    return std::vector<double>{x[0] / 2.0 + 1.0};
  };
  std::vector<double> x{0.0};
  SolverConfig cfg;
  cfg.method = SolveMethod::Plain;
  cfg.rel_tol = 1e-10;
  cfg.max_steps = 80;
  const auto rep = fixed_point_solve<double>(g, x, cfg);
  if (!rep.converged || !approx(x[0], 2.0, 1e-8)) return false;

  const double c = 0.8 * std::cos(0.5), s = 0.8 * std::sin(0.5);
  const auto g2 = [&](const std::vector<double>& v) {
    return std::vector<double>{c * v[0] - s * v[1] + 1.0, s * v[0] + c * v[1] - 0.5};
  };
  SolverConfig plain = cfg;
  plain.max_steps = 300;
  std::vector<double> xp{0, 0};
  const auto rp = fixed_point_solve<double>(g2, xp, plain);
  SolverConfig anders = plain;
  anders.method = SolveMethod::Anderson;
  std::vector<double> xa{0, 0};
  const auto ra = fixed_point_solve<double>(g2, xa, anders);
  return rp.converged && ra.converged && ra.steps_used < rp.steps_used;
}

struct ScalarToy {
  ParameterSet<double> params;
  explicit ScalarToy(double theta) { params.add("theta", Tensor<double>::scalar(theta)); }
  Tensor<double> operator()(Tape<double>& t, const std::map<std::string, Tensor<double>>& b,
                            const Tensor<double>& x) const {
    return add(t, mul(t, b.at("theta"), x), Tensor<double>::scalar(1.0));
  }
};

bool check_equilibrium_gradients() {
  ScalarToy toy(0.5);
  const Tensor<double> u_star = Tensor<double>::scalar(2.0);
  auto grads = ift_gradient_exact_map(toy.params, toy, u_star, Tensor<double>::scalar(1.0));
  if (!approx(grads.at("theta").item(), 4.0, 1e-10)) return false;

  Tape<double> t1;
  auto r1 = phantom_sequence_map(t1, toy.params, toy, u_star, PhantomConfig{1.0, 1});
  toy.params.zero_grad();
  phantom_gradient(t1, toy.params, r1.final_state);
  if (!approx(toy.params.grad("theta")[0], 2.0, 1e-12)) return false;

  Tape<double> t2;
  auto r2 = phantom_sequence_map(t2, toy.params, toy, u_star, PhantomConfig{0.5, 50});
  toy.params.zero_grad();
  phantom_gradient(t2, toy.params, r2.final_state);
  return std::abs(toy.params.grad("theta")[0] - 4.0) / 4.0 < 1e-3;
}

bool check_memory_contrast() {
  GenConfig gc;
  gc.h = gc.w = 32;
  const auto pair = generate_pair(99, gc);
  Tensor<double> fixed(Shape{1, 1, 32, 32}, pair.fixed);
  Tensor<double> moving(Shape{1, 1, 32, 32}, pair.moving);
  auto net = UpdateNet<double>::make(99, 0.05, 8, 0.08, false);

  std::vector<std::size_t> counts;
  for (int T : {2, 4, 8}) {
    Tape<double> tape;
    bptt_loss(tape, net, fixed, moving, UnrollConfig{T, WeightScheme::FinalOnly}, 0.1);
    counts.push_back(tape.stored_state_count());
  }
  if (counts[1] - counts[0] != (counts[2] - counts[1]) / 2) return false;

  std::vector<std::size_t> deq_counts;
  for (int T : {12, 48, 96}) {
    Tape<double> tape;
    SolverConfig scfg;
    scfg.max_steps = T;
    scfg.rel_tol = 1e-9;
    deq_loss(tape, net, fixed, moving, scfg, PhantomConfig{0.5, 5}, 3, 0.5, 0.1);
    deq_counts.push_back(tape.stored_state_count());
  }
  return deq_counts[0] == deq_counts[1] && deq_counts[1] == deq_counts[2];
}

bool check_generator() {
  GenConfig gc;
  gc.h = gc.w = 32;
  for (std::uint64_t seed = 7000; seed < 7010; ++seed) {
    const auto pair = generate_pair(seed, gc);
    if (jacobian_stats(pair.gt_field.data(), 32, 32).folded_fraction != 0.0) return false;
    const auto warped = warp_labels(pair.labels_moving, pair.gt_field.data(), 32, 32);
    if (dice(pair.labels_fixed, warped).mean <= 0.98) return false;
    if (tre(pair.kp_fixed, pair.kp_moving, pair.gt_field.data(), 32, 32).mean >= 0.5)
      return false;
  }
  const auto a = generate_pair(7042, gc);
  const auto b = generate_pair(7042, gc);
  return std::memcmp(a.fixed.data(), b.fixed.data(), a.fixed.size() * sizeof(double)) == 0;
}

bool check_determinism(bool quick) {
  GenConfig gc;
  gc.h = gc.w = 32;
  std::vector<SyntheticPair> pairs;
  for (std::uint64_t s = 0; s < 2; ++s) pairs.push_back(generate_pair(s, gc));
  TrainConfig cfg;
  cfg.mode = "unroll";
  cfg.epochs = quick ? 1 : 2;
  cfg.t_train = 2;
  cfg.lr = 1e-3;
  const auto r1 = train_model<double>(pairs, cfg);
  const auto r2 = train_model<double>(pairs, cfg);
  for (std::size_t e = 0; e < r1.log.size(); ++e)
    if (std::memcmp(&r1.log[e].loss, &r2.log[e].loss, sizeof(double)) != 0) return false;
  for (const auto& [name, p] : r1.net.params.all())
    if (std::memcmp(p.ptr(), r2.net.params.at(name).ptr(), p.numel() * sizeof(double)) !=
        0)
      return false;
  return true;
}

}  // namespace

int run_selftest(bool quick) {
  const std::vector<std::pair<const char*, std::function<bool()>>> checks = {
      {"autodiff primitives and gradients", check_autodiff},
      {"registration operators", check_registration_ops},
      {"overlap and distance metrics", check_metrics},
      {"dten and keypoint io round trips", check_io},
      {"fixed-point solver and anderson acceleration", check_solver},
      {"implicit and phantom gradients", check_equilibrium_gradients},
      {"memory contrast (bptt affine, deq constant)", check_memory_contrast},
      {"synthetic generator invariants", check_generator},
      {"training determinism", [quick] { return check_determinism(quick); }},
  };
  int failures = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    std::string err;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
    if (ok) {
      std::cout << "[PASS] " << name << "\n";
    } else {
      ++failures;
      std::cout << "[FAIL] " << name;
      if (!err.empty()) std::cout << " (" << err << ")";
      std::cout << "\n";
    }
  }
  std::cout << (failures == 0 ? "selftest: all checks passed"
                              : "selftest: FAILURES detected")
            << "\n";
  return failures == 0 ? 0 : 1;
}
