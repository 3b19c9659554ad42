#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "eqreg/checkpoint.hpp"
#include "eqreg/classical.hpp"
#include "eqreg/deq.hpp"
#include "eqreg/eval.hpp"
#include "eqreg/io.hpp"
#include "eqreg/synth.hpp"

namespace py = pybind11;
using namespace eqreg;

namespace {

Tensor<double> tensor_from_array(const py::array_t<double, py::array::c_style |
                                                               py::array::forcecast>& a,
                                 std::size_t want_rank, const char* name) {
  if (want_rank && static_cast<std::size_t>(a.ndim()) != want_rank)
    fail_contract(name, ": expected a ", want_rank, "-d array, got ", a.ndim(), "-d");
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor<double>(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const Shape& shape, const std::vector<double>& v) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<double> out(dims);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Tensor<double> image_tensor(const py::array_t<double, py::array::c_style |
                                                          py::array::forcecast>& a,
                            const char* name) {
  Tensor<double> t = tensor_from_array(a, 2, name);
  return Tensor<double>(Shape{1, 1, t.shape[0], t.shape[1]}, std::move(t.vec()));
}

Tensor<double> field_tensor(const py::array_t<double, py::array::c_style |
                                                          py::array::forcecast>& a,
                            const char* name) {
  Tensor<double> t = tensor_from_array(a, 3, name);
  if (t.shape[0] != 2) fail_contract(name, ": field must be [2,H,W]");
  return Tensor<double>(Shape{1, 2, t.shape[1], t.shape[2]}, std::move(t.vec()));
}

py::array_t<double> field_array(const Tensor<double>& t) {
  return array_from({2, t.shape[2], t.shape[3]}, t.vec());
}

std::vector<Point> points_from(const py::array_t<double, py::array::c_style |
                                                             py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 2)
    fail_contract("keypoints: expected an [N,2] array of (x, y)");
  std::vector<Point> pts(a.shape(0));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    pts[i] = {a.data()[2 * i], a.data()[2 * i + 1]};
  return pts;
}

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<std::uint8_t> labels_from(const U8Array& a) {
  return std::vector<std::uint8_t>(a.data(), a.data() + a.size());
}

py::dict pair_to_dict(const SyntheticPair& pair) {
  py::dict d;
  d["fixed"] = array_from({pair.h, pair.w}, pair.fixed);
  d["moving"] = array_from({pair.h, pair.w}, pair.moving);
  d["gt_field"] = array_from({2, pair.h, pair.w}, pair.gt_field);
  std::vector<py::ssize_t> ldims{static_cast<py::ssize_t>(pair.h),
                                 static_cast<py::ssize_t>(pair.w)};
  py::array_t<std::uint8_t> lf(ldims), lm(ldims);
  std::copy(pair.labels_fixed.begin(), pair.labels_fixed.end(), lf.mutable_data());
  std::copy(pair.labels_moving.begin(), pair.labels_moving.end(), lm.mutable_data());
  d["labels_fixed"] = lf;
  d["labels_moving"] = lm;
  py::array_t<double> kf({static_cast<py::ssize_t>(pair.kp_fixed.size()),
                          static_cast<py::ssize_t>(2)});
  py::array_t<double> km({static_cast<py::ssize_t>(pair.kp_moving.size()),
                          static_cast<py::ssize_t>(2)});
  for (std::size_t i = 0; i < pair.kp_fixed.size(); ++i) {
    kf.mutable_data()[2 * i] = pair.kp_fixed[i][0];
    kf.mutable_data()[2 * i + 1] = pair.kp_fixed[i][1];
    km.mutable_data()[2 * i] = pair.kp_moving[i][0];
    km.mutable_data()[2 * i + 1] = pair.kp_moving[i][1];
  }
  d["keypoints_fixed"] = kf;
  d["keypoints_moving"] = km;
  d["seed"] = pair.seed;
  return d;
}

}  // namespace

PYBIND11_MODULE(eqreg, m) {
  m.doc() = "Deformable registration lab: classical, unrolled and equilibrium solvers";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def(
      "warp",
      [](const DArray& img, const DArray& field) {
        Tape<double> tape;
        NoGradScope ng(tape);
        Tensor<double> out =
            warp(tape, image_tensor(img, "warp"), field_tensor(field, "warp"));
        return array_from({out.shape[2], out.shape[3]}, out.vec());
      },
      py::arg("image"), py::arg("field"),
      "Bilinear warp of a [H,W] image by a [2,H,W] displacement field");

  m.def(
      "lncc",
      [](const DArray& a, const DArray& b, int window) {
        Tape<double> tape;
        NoGradScope ng(tape);
        return lncc(tape, image_tensor(a, "lncc"), image_tensor(b, "lncc"), window)
            .item();
      },
      py::arg("fixed"), py::arg("warped"), py::arg("window") = 5);

  m.def(
      "diffusion",
      [](const DArray& field) {
        Tape<double> tape;
        NoGradScope ng(tape);
        return diffusion(tape, field_tensor(field, "diffusion")).item();
      },
      py::arg("field"));

  m.def(
      "total_loss",
      [](const DArray& fixed, const DArray& moving, const DArray& field, double lam,
         int window) {
        Tape<double> tape;
        NoGradScope ng(tape);
        return total_loss(tape, image_tensor(fixed, "total_loss"),
                          image_tensor(moving, "total_loss"),
                          field_tensor(field, "total_loss"), lam, window)
            .item();
      },
      py::arg("fixed"), py::arg("moving"), py::arg("field"), py::arg("lam") = 0.1,
      py::arg("window") = 5);

  m.def(
      "jacobian_stats",
      [](const DArray& field) {
        const auto st = jacobian_stats(field_tensor(field, "jacobian_stats"));
        py::dict d;
        d["folded_fraction"] = st.folded_fraction;
        d["std_log_jdet"] = st.std_log_jdet;
        d["det_map"] = array_from({st.interior_h, st.interior_w}, st.det_map);
        return d;
      },
      py::arg("field"));

  m.def(
      "dice",
      [](const U8Array& a, const U8Array& b) {
        const auto r = dice(labels_from(a), labels_from(b));
        py::dict per;
        for (const auto& [l, v] : r.per_label) per[py::int_(l)] = v;
        return py::make_tuple(r.mean, per);
      },
      py::arg("labels_a"), py::arg("labels_b"),
      "Returns (mean dice, per-label dict); label 0 is background");

  m.def(
      "hausdorff",
      [](const U8Array& a, const U8Array& b, int label) {
        if (a.ndim() != 2) fail_contract("hausdorff: expected 2-d label grids");
        return hausdorff(labels_from(a), labels_from(b),
                         static_cast<std::size_t>(a.shape(0)),
                         static_cast<std::size_t>(a.shape(1)), label);
      },
      py::arg("labels_a"), py::arg("labels_b"), py::arg("label"));

  m.def(
      "tre",
      [](const DArray& kf, const DArray& km, const DArray& field) {
        Tensor<double> f = field_tensor(field, "tre");
        const auto r = tre(points_from(kf), points_from(km), f.ptr(), f.shape[2],
                           f.shape[3]);
        return py::make_tuple(r.mean, r.clamped);
      },
      py::arg("keypoints_fixed"), py::arg("keypoints_moving"), py::arg("field"));

  m.def(
      "generate_pair",
      [](std::uint64_t seed, std::size_t h, std::size_t w, double amp, double blur,
         int n_labels, int n_keypoints) {
        GenConfig gc{h, w, amp, blur, n_labels, n_keypoints};
        return pair_to_dict(generate_pair(seed, gc));
      },
      py::arg("seed"), py::arg("h") = 64, py::arg("w") = 64, py::arg("amp") = 3.0,
      py::arg("blur") = 6.0, py::arg("n_labels") = 4, py::arg("n_keypoints") = 16);

  m.def(
      "classical_register",
      [](const DArray& fixed, const DArray& moving, double lam, double eta0,
         int max_iters, double tol) {
        ClassicalConfig cfg;
        cfg.lambda = lam;
        cfg.eta0 = eta0;
        cfg.max_iters = max_iters;
        cfg.tol = tol;
        auto res = classical_register(image_tensor(fixed, "classical_register"),
                                      image_tensor(moving, "classical_register"), cfg);
        return py::make_tuple(field_array(res.field), res.loss_trace, res.iters_used);
      },
      py::arg("fixed"), py::arg("moving"), py::arg("lam") = 0.1, py::arg("eta0") = 1.0,
      py::arg("max_iters") = 200, py::arg("tol") = 1e-5,
      "Returns (field, loss trace, iterations used)");

  m.def(
      "register_with_model",
      [](const std::string& checkpoint_dir, const DArray& fixed, const DArray& moving,
         int steps, double tol) {
        const auto meta = load_checkpoint_meta(checkpoint_dir);
        const auto net = load_checkpoint<double>(checkpoint_dir, meta);
        Tensor<double> f = image_tensor(fixed, "register_with_model");
        Tensor<double> mv = image_tensor(moving, "register_with_model");
        Tape<double> tape;
        NoGradScope ng(tape);
        py::dict info;
        info["mode"] = meta.mode;
        if (meta.mode == "deq") {
          SolverConfig cfg;
          cfg.max_steps = steps > 0 ? steps : meta.trained_steps;
          cfg.rel_tol = tol > 0 ? tol : meta.rel_tol;
          auto eq = solve_equilibrium(tape, net, f, mv, cfg);
          info["steps_used"] = eq.report.steps_used;
          info["converged"] = eq.report.converged;
          info["residual_trace"] = eq.report.residual_trace;
          return py::make_tuple(field_array(eq.state), info);
        }
        const int t = steps > 0 ? steps : meta.trained_steps;
        auto traj = unroll_forward(tape, net, f, mv, t);
        info["steps_used"] = t;
        info["converged"] =
            traj.size() >= 2 && relative_residual(traj.back().vec(),
                                                  traj[traj.size() - 2].vec()) <
                                    (tol > 0 ? tol : meta.rel_tol);
        return py::make_tuple(field_array(traj.back()), info);
      },
      py::arg("checkpoint_dir"), py::arg("fixed"), py::arg("moving"),
      py::arg("steps") = 0, py::arg("tol") = 0.0,
      "Loads a checkpoint and registers one pair; returns (field, info dict)");

  m.def(
      "read_dten",
      [](const std::string& path) -> py::object {
        const DtenData d = read_dten(path);
        std::vector<py::ssize_t> dims(d.dims.begin(), d.dims.end());
        return std::visit(
            [&](const auto& v) -> py::object {
              using V = typename std::decay_t<decltype(v)>::value_type;
              py::array_t<V> out(dims);
              std::copy(v.begin(), v.end(), out.mutable_data());
              return out;
            },
            d.payload);
      },
      py::arg("path"));

  m.def(
      "write_dten",
      [](const std::string& path, const py::array& arr) {
        std::vector<std::size_t> dims(arr.ndim());
        for (py::ssize_t i = 0; i < arr.ndim(); ++i)
          dims[i] = static_cast<std::size_t>(arr.shape(i));
        const auto dt = arr.dtype();
        if (dt.is(py::dtype::of<float>())) {
          auto a = arr.cast<py::array_t<float, py::array::c_style>>();
          write_dten(path, make_dten(dims, std::vector<float>(a.data(), a.data() + a.size())));
        } else if (dt.is(py::dtype::of<double>())) {
          auto a = arr.cast<py::array_t<double, py::array::c_style>>();
          write_dten(path, make_dten(dims, std::vector<double>(a.data(), a.data() + a.size())));
        } else if (dt.is(py::dtype::of<std::uint8_t>())) {
          auto a = arr.cast<py::array_t<std::uint8_t, py::array::c_style>>();
          write_dten(path, make_dten(dims, std::vector<std::uint8_t>(a.data(),
                                                                     a.data() + a.size())));
        } else if (dt.is(py::dtype::of<std::int32_t>())) {
          auto a = arr.cast<py::array_t<std::int32_t, py::array::c_style>>();
          write_dten(path, make_dten(dims, std::vector<std::int32_t>(a.data(),
                                                                     a.data() + a.size())));
        } else {
          fail_contract("write_dten: unsupported dtype (use f32, f64, u8 or i32)");
        }
      },
      py::arg("path"), py::arg("array"));

  m.def("stored_state_probe", [](int steps) {
    // tiny probe used by the smoke tests to observe O(T) taping
    Rng rng(0);
    Tensor<double> img = Tensor<double>::randn({1, 1, 8, 8}, rng);
    Tensor<double> w = Tensor<double>::randn({2, 4, 3, 3}, rng, 0.2);
    Tape<double> tape;
    Tensor<double> ww = tape.watch(w);
    Tensor<double> u = Tensor<double>::zeros({1, 2, 8, 8});
    for (int t = 0; t < steps; ++t) {
      Tensor<double> x = concat_channels<double>(tape, {img, warp(tape, img, u), u});
      u = add(tape, u, scale(tape, conv2d(tape, x, ww), 0.1));
    }
    return tape.stored_state_count();
  });
}
