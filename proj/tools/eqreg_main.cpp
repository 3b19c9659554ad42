#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "eqreg/checkpoint.hpp"
#include "eqreg/eval.hpp"
#include "eqreg/io.hpp"
#include "eqreg/train.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace eqreg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;   // contract/numeric/selftest failure
constexpr int kExitUsage = 2;     // unknown flag / bad arguments
constexpr int kExitMissing = 3;   // missing input file
constexpr int kExitCorrupt = 4;   // unreadable dten/checkpoint/config

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    const std::string item = s.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
    if (pos > s.size()) break;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoStatus::FileMissing, cat("cannot write ", path.string()));
  out << content;
}

// ---- gen ----

struct GenArgs {
  std::string out;
  int pairs = 40;
  std::uint64_t seed = 0;
  std::vector<std::size_t> size{64, 64};
  double amp = 4.0;
  double blur = 7.0;
  int labels = 4;
  int keypoints = 16;
};

int cmd_gen(const GenArgs& a) {
  GenConfig gc;
  gc.h = a.size.at(0);
  gc.w = a.size.at(1);
  gc.amp = a.amp;
  gc.blur = a.blur;
  gc.n_labels = a.labels;
  gc.n_keypoints = a.keypoints;
  const std::size_t n_train = a.pairs;
  const std::size_t n_val = std::max<std::size_t>(1, a.pairs / 10);
  const std::size_t n_test = std::max<std::size_t>(1, a.pairs / 5);
  const auto split = corpus_seeds(a.seed, n_train, n_val, n_test);
  const fs::path root(a.out);
  std::vector<ManifestEntry> manifest;
  const auto emit = [&](const std::vector<std::uint64_t>& seeds, const std::string& name) {
    std::size_t i = 0;
    for (auto s : seeds) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "pairs/%s_%04zu", name.c_str(), i++);
      write_pair(root / buf, generate_pair(s, gc));
      manifest.push_back({name, buf});
    }
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
  write_manifest(root / "manifest.txt", manifest);
  std::cout << "wrote " << manifest.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string mode;
  std::string data;
  std::string out;
  std::string config;
  std::string init;  // optional warm-start checkpoint
};

TrainConfig read_train_config(const std::string& mode, const std::string& path) {
  TrainConfig cfg;
  cfg.mode = mode;
  if (mode == "deq") {
    cfg.solver.max_steps = 48;
  }
  if (path.empty()) return cfg;
  const auto kv = parse_kv_file(path);
  static const std::set<std::string> known{
      "lambda", "window", "epochs",  "lr",    "weight_decay", "seed",
      "alpha",  "hidden", "init_std", "T",    "weight_scheme", "rel_tol",
      "solver", "anderson_memory",   "tau",   "K",            "S",
      "gamma",  "dtype",  "batch",   "lr_decay"};
  for (const auto& [k, v] : kv)
    if (!known.count(k))
      throw IoError(IoStatus::BadFormat, cat(path, ": unknown config key '", k, "'"));
  cfg.lambda = kv_double(kv, "lambda", cfg.lambda);
  cfg.window = static_cast<int>(kv_long(kv, "window", cfg.window));
  cfg.epochs = static_cast<int>(kv_long(kv, "epochs", cfg.epochs));
  cfg.lr = kv_double(kv, "lr", cfg.lr);
  cfg.weight_decay = kv_double(kv, "weight_decay", cfg.weight_decay);
  cfg.seed = static_cast<std::uint64_t>(kv_long(kv, "seed", 0));
  cfg.alpha = kv_double(kv, "alpha", cfg.alpha);
  cfg.hidden = static_cast<std::size_t>(kv_long(kv, "hidden", cfg.hidden));
  cfg.init_std = kv_double(kv, "init_std", cfg.init_std);
  const int T = static_cast<int>(
      kv_long(kv, "T", mode == "deq" ? cfg.solver.max_steps : cfg.t_train));
  if (mode == "deq")
    cfg.solver.max_steps = T;
  else
    cfg.t_train = T;
  const std::string scheme = kv_string(kv, "weight_scheme", "final_only");
  if (scheme == "final_only")
    cfg.scheme = WeightScheme::FinalOnly;
  else if (scheme == "exponential")
    cfg.scheme = WeightScheme::Exponential;
  else
    throw IoError(IoStatus::BadFormat, cat(path, ": unknown weight_scheme '", scheme, "'"));
  cfg.solver.rel_tol = kv_double(kv, "rel_tol", cfg.solver.rel_tol);
  const std::string solver = kv_string(kv, "solver", "anderson");
  if (solver == "anderson")
    cfg.solver.method = SolveMethod::Anderson;
  else if (solver == "plain")
    cfg.solver.method = SolveMethod::Plain;
  else
    throw IoError(IoStatus::BadFormat, cat(path, ": unknown solver '", solver, "'"));
  cfg.solver.anderson_memory =
      static_cast<int>(kv_long(kv, "anderson_memory", cfg.solver.anderson_memory));
  cfg.phantom.tau = kv_double(kv, "tau", cfg.phantom.tau);
  cfg.phantom.steps = static_cast<int>(kv_long(kv, "K", cfg.phantom.steps));
  cfg.sampled_states = static_cast<int>(kv_long(kv, "S", cfg.sampled_states));
  cfg.gamma = kv_double(kv, "gamma", cfg.gamma);
  cfg.batch = static_cast<int>(kv_long(kv, "batch", cfg.batch));
  cfg.lr_decay = kv_long(kv, "lr_decay", cfg.lr_decay ? 1 : 0) != 0;
  return cfg;
}

template <class T>
int run_training(const TrainArgs& a, const TrainConfig& cfg, const std::string& dtype) {
  const auto pairs = load_split(a.data, "train");
  if (pairs.empty())
    throw IoError(IoStatus::FileMissing, cat(a.data, ": no training pairs found"));
  std::cout << "training mode=" << cfg.mode << " pairs=" << pairs.size()
            << " epochs=" << cfg.epochs << " dtype=" << dtype << "\n";
  UpdateNet<T> warm;
  const UpdateNet<T>* warm_ptr = nullptr;
  if (!a.init.empty()) {
    warm = load_checkpoint<T>(a.init, load_checkpoint_meta(a.init));
    warm_ptr = &warm;
    std::cout << "warm start from " << a.init << "\n";
  }
  const auto result = train_model<T>(pairs, cfg, [](const EpochLog& log) {
    std::cout << "epoch " << log.epoch << " loss " << log.loss;
    if (log.mean_solver_steps > 0)
      std::cout << " solver_steps " << log.mean_solver_steps << " residual "
                << log.mean_residual;
    std::cout << std::endl;
  }, warm_ptr);

  CheckpointMeta meta;
  meta.mode = cfg.mode;
  meta.alpha = cfg.alpha;
  meta.hidden = cfg.hidden;
  meta.lambda = cfg.lambda;
  meta.window = cfg.window;
  meta.trained_steps = cfg.mode == "deq" ? cfg.solver.max_steps : cfg.t_train;
  meta.weight_scheme =
      cfg.scheme == WeightScheme::FinalOnly ? "final_only" : "exponential";
  meta.rel_tol = cfg.solver.rel_tol;
  meta.tau = cfg.phantom.tau;
  meta.phantom_steps = cfg.phantom.steps;
  meta.dtype = dtype;
  save_checkpoint(fs::path(a.out), result.net, meta);

  std::string csv;
  append_csv_line(csv, {"epoch", "loss", "mean_solver_steps", "mean_residual"});
  for (const auto& log : result.log)
    append_csv_line(csv, {std::to_string(log.epoch), format_double(log.loss),
                          format_double(log.mean_solver_steps),
                          format_double(log.mean_residual)});
  write_text(fs::path(a.out) / "train_log.csv", csv);
  std::cout << "checkpoint written to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = read_train_config(a.mode, a.config);
  std::string dtype = "f32";
  if (!a.config.empty())
    dtype = kv_string(parse_kv_file(a.config), "dtype", "f32");
  if (dtype == "f64") return run_training<double>(a, cfg, dtype);
  if (dtype == "f32") return run_training<float>(a, cfg, dtype);
  throw IoError(IoStatus::BadFormat, cat("unknown dtype '", dtype, "'"));
}

// ---- model loading shared by register/eval/sweep ----

struct LoadedModel {
  CheckpointMeta meta;
  UpdateNet<double> net;
};

LoadedModel load_model(const std::string& dir) {
  LoadedModel m;
  m.meta = load_checkpoint_meta(dir);
  m.net = load_checkpoint<double>(dir, m.meta);
  return m;
}

EvalContext<double> make_context(RegMode mode, const LoadedModel* model, int steps,
                                 double tol, double lambda) {
  EvalContext<double> ctx;
  ctx.mode = mode;
  (void)steps;
  if (model) {
    ctx.net = &model->net;
    ctx.solver.rel_tol = model->meta.rel_tol;
  }
  if (tol > 0) ctx.solver.rel_tol = tol;
  ctx.classical.lambda = lambda;
  return ctx;
}

// ---- register ----

struct RegisterArgs {
  std::string mode;
  std::string model;
  std::string pair;
  int steps = 0;
  double tol = 0;
  double lambda = 0.1;
  std::string out;
  std::string report;
};

int cmd_register(const RegisterArgs& a) {
  const auto pair = read_pair(a.pair);
  const RegMode mode = parse_mode(a.mode);
  LoadedModel model;
  const bool needs_model = mode == RegMode::Unroll || mode == RegMode::Deq;
  if (needs_model) {
    if (a.model.empty()) fail_contract("register: --model required for mode ", a.mode);
    model = load_model(a.model);
  }
  int steps = a.steps;
  if (steps <= 0) steps = needs_model ? std::max(1, model.meta.trained_steps) : 200;
  EvalContext<double> ctx =
      make_context(mode, needs_model ? &model : nullptr, steps, a.tol, a.lambda);

  std::string report_csv;
  InferredField<double> inf;
  if (mode == RegMode::Classical) {
    Tensor<double> fixed(Shape{1, 1, pair.h, pair.w}, pair.fixed);
    Tensor<double> moving(Shape{1, 1, pair.h, pair.w}, pair.moving);
    ClassicalConfig cc = ctx.classical;
    cc.max_iters = steps;
    auto res = classical_register(fixed, moving, cc);
    append_csv_line(report_csv, {"step", "loss"});
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i)
      append_csv_line(report_csv, {std::to_string(i), format_double(res.loss_trace[i])});
    inf.field = std::move(res.field);
    inf.steps_used = res.iters_used;
    inf.converged = res.converged;
  } else if (mode == RegMode::Deq) {
    Tensor<double> fixed(Shape{1, 1, pair.h, pair.w}, pair.fixed);
    Tensor<double> moving(Shape{1, 1, pair.h, pair.w}, pair.moving);
    Tape<double> tape;
    SolverConfig cfg = ctx.solver;
    cfg.max_steps = steps;
    auto eq = solve_equilibrium(tape, model.net, fixed, moving, cfg);
    append_csv_line(report_csv, {"step", "residual", "converged", "steps_used"});
    for (std::size_t i = 0; i < eq.report.residual_trace.size(); ++i)
      append_csv_line(report_csv,
                      {std::to_string(i + 1), format_double(eq.report.residual_trace[i]),
                       eq.report.converged ? "1" : "0",
                       std::to_string(eq.report.steps_used)});
    inf.field = std::move(eq.state);
    inf.steps_used = eq.report.steps_used;
    inf.converged = eq.report.converged;
  } else {
    inf = infer_field(ctx, pair, steps);
    append_csv_line(report_csv, {"step", "residual"});
    append_csv_line(report_csv, {std::to_string(inf.steps_used),
                                 format_double(inf.residual)});
  }

  std::vector<double> field(inf.field.vec().begin(), inf.field.vec().end());
  if (fs::path(a.out).has_parent_path())
    fs::create_directories(fs::path(a.out).parent_path());
  write_dten(a.out, make_dten({2, pair.h, pair.w}, field));
  const std::string report_path =
      a.report.empty() ? a.out + ".report.csv" : a.report;
  write_text(report_path, report_csv);
  std::cout << "field written to " << a.out << " (steps_used=" << inf.steps_used
            << ", converged=" << (inf.converged ? "yes" : "no") << ")\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string model;
  std::string mode = "auto";
  std::string data;
  std::string split = "test";
  int steps = 0;
  double lambda = 0.1;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const auto pairs = load_split(a.data, a.split);
  if (pairs.empty())
    throw IoError(IoStatus::FileMissing, cat(a.data, ": no '", a.split, "' pairs"));
  LoadedModel model;
  RegMode mode;
  bool have_model = false;
  if (a.mode == "auto" || a.mode == "unroll" || a.mode == "deq") {
    if (a.model.empty()) fail_contract("eval: --model required unless --mode is model-free");
    model = load_model(a.model);
    mode = parse_mode(a.mode == "auto" ? model.meta.mode : a.mode);
    have_model = true;
  } else {
    mode = parse_mode(a.mode);
  }
  int steps = a.steps;
  if (steps <= 0) steps = have_model ? std::max(1, model.meta.trained_steps) : 200;
  EvalContext<double> ctx =
      make_context(mode, have_model ? &model : nullptr, steps, 0, a.lambda);

  std::string csv;
  append_csv_line(csv, {"pair", "steps", "steps_used", "dice", "hd", "tre",
                        "folded_fraction", "std_log_jdet", "residual", "converged"});
  std::size_t idx = 0;
  double dice_sum = 0;
  for (const auto& p : pairs) {
    const auto rec = evaluate_pair(ctx, p, steps);
    dice_sum += rec.dice;
    append_csv_line(csv, {std::to_string(idx++), std::to_string(rec.steps),
                          std::to_string(rec.steps_used), format_double(rec.dice),
                          format_double(rec.hd), format_double(rec.tre),
                          format_double(rec.folded_fraction),
                          format_double(rec.std_log_jdet), format_double(rec.residual),
                          rec.converged ? "1" : "0"});
  }
  write_text(a.out, csv);
  std::cout << "mean dice " << dice_sum / pairs.size() << " over " << pairs.size()
            << " pairs -> " << a.out << "\n";
  return kExitOk;
}

// ---- sweep ----

struct SweepArgs {
  std::string model;
  std::string mode = "auto";
  std::string data;
  std::string split = "test";
  std::string steps = "3,6,12,24,48,96";
  int trained_steps = 0;
  double lambda = 0.1;
  std::string out;
  std::string out_pairs;
};

int cmd_sweep(const SweepArgs& a) {
  const auto pairs = load_split(a.data, a.split);
  if (pairs.empty())
    throw IoError(IoStatus::FileMissing, cat(a.data, ": no '", a.split, "' pairs"));
  LoadedModel model;
  RegMode mode;
  bool have_model = false;
  if (a.mode == "auto" || a.mode == "unroll" || a.mode == "deq") {
    if (a.model.empty()) fail_contract("sweep: --model required unless --mode is model-free");
    model = load_model(a.model);
    mode = parse_mode(a.mode == "auto" ? model.meta.mode : a.mode);
    have_model = true;
  } else {
    mode = parse_mode(a.mode);
  }
  const auto step_list = parse_int_list(a.steps);
  const int trained =
      a.trained_steps > 0 ? a.trained_steps
                          : (have_model ? model.meta.trained_steps : step_list.front());
  EvalContext<double> ctx =
      make_context(mode, have_model ? &model : nullptr, 0, 0, a.lambda);
  const auto sweep = convergence_sweep(ctx, pairs, step_list, trained);

  std::string agg;
  append_csv_line(agg, {"steps", "dice_mean", "dice_std", "hd_mean", "tre_mean",
                        "folded_mean", "folded_std", "std_log_jdet_mean",
                        "residual_mean", "converged_fraction", "is_trained", "is_best"});
  for (const auto& s : sweep.per_step)
    append_csv_line(
        agg, {std::to_string(s.steps), format_double(s.dice_mean),
              format_double(s.dice_std), format_double(s.hd_mean),
              format_double(s.tre_mean), format_double(s.folded_mean),
              format_double(s.folded_std), format_double(s.std_log_jdet_mean),
              format_double(s.residual_mean), format_double(s.converged_fraction),
              s.steps == sweep.trained_steps ? "1" : "0",
              s.steps == sweep.best_dice_steps ? "1" : "0"});
  write_text(a.out, agg);

  std::string per;
  append_csv_line(per, {"pair", "steps", "steps_used", "dice", "hd", "tre",
                        "folded_fraction", "std_log_jdet", "residual", "converged"});
  for (std::size_t si = 0; si < sweep.records.size(); ++si)
    for (std::size_t pi = 0; pi < sweep.records[si].size(); ++pi) {
      const auto& r = sweep.records[si][pi];
      append_csv_line(per, {std::to_string(pi), std::to_string(r.steps),
                            std::to_string(r.steps_used), format_double(r.dice),
                            format_double(r.hd), format_double(r.tre),
                            format_double(r.folded_fraction),
                            format_double(r.std_log_jdet), format_double(r.residual),
                            r.converged ? "1" : "0"});
    }
  const std::string per_path =
      a.out_pairs.empty()
          ? (fs::path(a.out).parent_path() /
             (fs::path(a.out).stem().string() + "_pairs.csv"))
                .string()
          : a.out_pairs;
  write_text(per_path, per);
  std::cout << "sweep written to " << a.out << " and " << per_path
            << " (best steps: " << sweep.best_dice_steps << ")\n";
  return kExitOk;
}

// ---- memreport ----

struct MemArgs {
  std::string mode;
  std::string steps_list = "2,4,8,16";
  std::string out;
  std::size_t size = 32;
  int phantom_steps = 5;
  int sampled_states = 3;
};

int cmd_memreport(const MemArgs& a) {
  GenConfig gc;
  gc.h = gc.w = a.size;
  const auto pair = generate_pair(0, gc);
  Tensor<double> fixed(Shape{1, 1, gc.h, gc.w}, pair.fixed);
  Tensor<double> moving(Shape{1, 1, gc.h, gc.w}, pair.moving);
  auto net = UpdateNet<double>::make(0, 0.05, 8, 0.08, false);

  std::string csv;
  append_csv_line(csv, {"mode", "steps", "stored_state_count"});
  for (int T : parse_int_list(a.steps_list)) {
    Tape<double> tape;
    if (a.mode == "unroll") {
      bptt_loss(tape, net, fixed, moving, UnrollConfig{T, WeightScheme::FinalOnly}, 0.1);
    } else if (a.mode == "deq") {
      SolverConfig scfg;
      scfg.max_steps = T;
      scfg.rel_tol = 1e-9;  // random net: runs the full budget
      net.params.zero_grad();
      deq_loss(tape, net, fixed, moving, scfg, PhantomConfig{0.5, a.phantom_steps},
               a.sampled_states, 0.5, 0.1);
    } else {
      fail_contract("memreport: unknown mode ", a.mode);
    }
    append_csv_line(csv, {a.mode, std::to_string(T),
                          std::to_string(tape.stored_state_count())});
  }
  write_text(a.out, csv);
  std::cout << "memory report written to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale deformable registration lab: classical, unrolled and "
               "equilibrium-seeking registration on synthetic 2D data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* sc_gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  sc_gen->add_option("--out", gen.out, "Corpus directory")->required();
  sc_gen->add_option("--pairs", gen.pairs, "Training pairs (val=N/10, test=N/5)");
  sc_gen->add_option("--seed", gen.seed, "Base seed");
  sc_gen->add_option("--size", gen.size, "Image size H W")->expected(2);
  sc_gen->add_option("--amp", gen.amp, "Max displacement magnitude (px)");
  sc_gen->add_option("--blur", gen.blur, "Field smoothing sigma (px)");
  sc_gen->add_option("--labels", gen.labels, "Number of label regions");
  sc_gen->add_option("--keypoints", gen.keypoints, "Keypoints per pair");

  TrainArgs train;
  auto* sc_train = app.add_subcommand("train", "Train a registration model");
  sc_train->add_option("--mode", train.mode, "unroll|deq")
      ->required()
      ->check(CLI::IsMember({"unroll", "deq"}));
  sc_train->add_option("--data", train.data, "Corpus directory")->required();
  sc_train->add_option("--out", train.out, "Checkpoint directory")->required();
  sc_train->add_option("--config", train.config, "key = value hyperparameter file");
  sc_train->add_option("--init", train.init, "Warm-start checkpoint directory");

  RegisterArgs reg;
  auto* sc_reg = app.add_subcommand("register", "Register one pair");
  sc_reg->add_option("--mode", reg.mode, "classical|unroll|deq")
      ->required()
      ->check(CLI::IsMember({"classical", "unroll", "deq"}));
  sc_reg->add_option("--model", reg.model, "Checkpoint directory (learned modes)");
  sc_reg->add_option("--pair", reg.pair, "Pair directory")->required();
  sc_reg->add_option("--steps", reg.steps, "Iteration budget");
  sc_reg->add_option("--tol", reg.tol, "Relative residual tolerance (deq)");
  sc_reg->add_option("--lambda", reg.lambda, "Regularisation weight (classical)");
  sc_reg->add_option("--out", reg.out, "Output displacement field .dten")->required();
  sc_reg->add_option("--report", reg.report, "Report CSV path");

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "Evaluate a model over a corpus split");
  sc_eval->add_option("--model", ev.model, "Checkpoint directory");
  sc_eval->add_option("--mode", ev.mode, "auto|unroll|deq|classical|zero|gt");
  sc_eval->add_option("--data", ev.data, "Corpus directory")->required();
  sc_eval->add_option("--split", ev.split, "train|val|test");
  sc_eval->add_option("--steps", ev.steps, "Inference steps");
  sc_eval->add_option("--lambda", ev.lambda, "Regularisation weight (classical)");
  sc_eval->add_option("--out", ev.out, "Per-pair CSV")->required();

  SweepArgs sw;
  auto* sc_sweep = app.add_subcommand("sweep", "Convergence sweep over step counts");
  sc_sweep->add_option("--model", sw.model, "Checkpoint directory");
  sc_sweep->add_option("--mode", sw.mode, "auto|unroll|deq|classical|zero");
  sc_sweep->add_option("--data", sw.data, "Corpus directory")->required();
  sc_sweep->add_option("--split", sw.split, "train|val|test");
  sc_sweep->add_option("--steps", sw.steps, "Comma-separated step counts");
  sc_sweep->add_option("--trained-steps", sw.trained_steps, "Trained step count marker");
  sc_sweep->add_option("--lambda", sw.lambda, "Regularisation weight (classical)");
  sc_sweep->add_option("--out", sw.out, "Aggregated CSV")->required();
  sc_sweep->add_option("--out-pairs", sw.out_pairs, "Per-(pair,steps) CSV");

  MemArgs mem;
  auto* sc_mem = app.add_subcommand("memreport", "Stored-state counts per configuration");
  sc_mem->add_option("--mode", mem.mode, "unroll|deq")
      ->required()
      ->check(CLI::IsMember({"unroll", "deq"}));
  sc_mem->add_option("--steps-list", mem.steps_list, "Comma-separated step counts");
  sc_mem->add_option("--out", mem.out, "Output CSV")->required();
  sc_mem->add_option("--size", mem.size, "Image size");
  sc_mem->add_option("--phantom-steps", mem.phantom_steps, "K (deq)");
  sc_mem->add_option("--sampled-states", mem.sampled_states, "S (deq)");

  bool quick = false;
  auto* sc_self = app.add_subcommand("selftest", "Run the built-in oracle suite");
  sc_self->add_flag("--quick", quick, "Shorter determinism check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sc_gen->parsed()) return cmd_gen(gen);
    if (sc_train->parsed()) return cmd_train(train);
    if (sc_reg->parsed()) return cmd_register(reg);
    if (sc_eval->parsed()) return cmd_eval(ev);
    if (sc_sweep->parsed()) return cmd_sweep(sw);
    if (sc_mem->parsed()) return cmd_memreport(mem);
    if (sc_self->parsed()) return run_selftest(quick);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status == IoStatus::FileMissing ? kExitMissing : kExitCorrupt;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
