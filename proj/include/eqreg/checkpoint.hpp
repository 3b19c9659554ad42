#pragma once

#include "eqreg/io.hpp"
#include "eqreg/network.hpp"

namespace eqreg {

// Model checkpoint: one DTEN file per parameter plus a key=value meta file.
struct CheckpointMeta {
  std::string mode = "unroll";  // unroll | deq
  double alpha = 1.0;
  std::size_t hidden = 16;
  double lambda = 0.1;
  int window = 5;
  int trained_steps = 3;
  std::string weight_scheme = "final_only";
  double rel_tol = 1e-3;
  double tau = 0.5;
  int phantom_steps = 5;
  std::string dtype = "f32";
};

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const UpdateNet<T>& net,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> kv;
  kv["mode"] = meta.mode;
  kv["alpha"] = format_double(meta.alpha);
  kv["hidden"] = std::to_string(meta.hidden);
  kv["lambda"] = format_double(meta.lambda);
  kv["window"] = std::to_string(meta.window);
  kv["trained_steps"] = std::to_string(meta.trained_steps);
  kv["weight_scheme"] = meta.weight_scheme;
  kv["rel_tol"] = format_double(meta.rel_tol);
  kv["tau"] = format_double(meta.tau);
  kv["phantom_steps"] = std::to_string(meta.phantom_steps);
  kv["dtype"] = meta.dtype;
  std::string names;
  for (const auto& [name, p] : net.params.all()) {
    if (!names.empty()) names += ',';
    names += name;
    if constexpr (std::is_same_v<T, double>)
      write_dten(dir / (name + ".dten"), make_dten(p.shape, p.vec()));
    else
      write_dten(dir / (name + ".dten"),
                 make_dten(p.shape, std::vector<float>(p.vec().begin(), p.vec().end())));
  }
  kv["params"] = names;
  write_kv_file(dir / "meta.txt", kv);
}

inline CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir) {
  const auto kv = parse_kv_file(dir / "meta.txt");
  CheckpointMeta meta;
  meta.mode = kv_string(kv, "mode", meta.mode);
  meta.alpha = kv_double(kv, "alpha", meta.alpha);
  meta.hidden = static_cast<std::size_t>(kv_long(kv, "hidden", meta.hidden));
  meta.lambda = kv_double(kv, "lambda", meta.lambda);
  meta.window = static_cast<int>(kv_long(kv, "window", meta.window));
  meta.trained_steps = static_cast<int>(kv_long(kv, "trained_steps", meta.trained_steps));
  meta.weight_scheme = kv_string(kv, "weight_scheme", meta.weight_scheme);
  meta.rel_tol = kv_double(kv, "rel_tol", meta.rel_tol);
  meta.tau = kv_double(kv, "tau", meta.tau);
  meta.phantom_steps = static_cast<int>(kv_long(kv, "phantom_steps", meta.phantom_steps));
  meta.dtype = kv_string(kv, "dtype", meta.dtype);
  return meta;
}

template <class T>
UpdateNet<T> load_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta) {
  const auto kv = parse_kv_file(dir / "meta.txt");
  const std::string names = kv_string(kv, "params", "");
  if (names.empty())
    throw IoError(IoStatus::BadFormat, cat(dir.string(), ": checkpoint lists no params"));
  UpdateNet<T> net;
  net.alpha = meta.alpha;
  net.hidden = meta.hidden;
  std::size_t pos = 0;
  while (pos <= names.size()) {
    std::size_t end = names.find(',', pos);
    if (end == std::string::npos) end = names.size();
    const std::string name = names.substr(pos, end - pos);
    pos = end + 1;
    if (name.empty()) continue;
    const DtenData d = read_dten(dir / (name + ".dten"));
    std::vector<T> v(d.numel());
    std::visit(
        [&](const auto& payload) {
          using P = typename std::decay_t<decltype(payload)>::value_type;
          if constexpr (std::is_same_v<P, float> || std::is_same_v<P, double>) {
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(payload[i]);
          } else {
            throw IoError(IoStatus::BadFormat,
                          cat(dir.string(), ": parameter ", name,
                              " has a non-float dtype"));
          }
        },
        d.payload);
    net.params.add(name, Tensor<T>(Shape(d.dims.begin(), d.dims.end()), std::move(v)));
  }
  return net;
}

}  // namespace eqreg
