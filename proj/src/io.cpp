#include "eqreg/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace eqreg {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'E', 'N'};
constexpr std::uint8_t kVersion = 1;

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::U8: return 1;
    case Dtype::I32: return 4;
  }
  return 0;
}

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
void append_le(std::string& out, const std::vector<T>& v) {
  static_assert(sizeof(T) <= 8);
  // x86-style little-endian byte order, written explicitly
  for (const T& x : v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &x, sizeof(T));
    for (std::size_t b = 0; b < sizeof(T); ++b)
      out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

template <class T>
std::vector<T> parse_le(const unsigned char* p, std::size_t count) {
  std::vector<T> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      bits |= static_cast<std::uint64_t>(p[i * sizeof(T) + b]) << (8 * b);
    std::memcpy(&v[i], &bits, sizeof(T));
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoStatus::FileMissing, cat("cannot open ", path.string()));
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoStatus::FileMissing, cat("cannot write ", path.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(IoStatus::FileMissing, cat("write failed: ", path.string()));
}

}  // namespace

DtenData make_dten(std::vector<std::size_t> dims, std::vector<float> v) {
  return DtenData{Dtype::F32, std::move(dims), std::move(v)};
}
DtenData make_dten(std::vector<std::size_t> dims, std::vector<double> v) {
  return DtenData{Dtype::F64, std::move(dims), std::move(v)};
}
DtenData make_dten(std::vector<std::size_t> dims, std::vector<std::uint8_t> v) {
  return DtenData{Dtype::U8, std::move(dims), std::move(v)};
}
DtenData make_dten(std::vector<std::size_t> dims, std::vector<std::int32_t> v) {
  return DtenData{Dtype::I32, std::move(dims), std::move(v)};
}

void write_dten(const std::filesystem::path& path, const DtenData& data) {
  const std::size_t n = data.numel();
  const std::size_t actual = std::visit([](const auto& v) { return v.size(); },
                                        data.payload);
  if (n != actual)
    fail_contract("write_dten: payload size ", actual, " != dims product ", n);
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(data.dtype));
  out.push_back(static_cast<char>(data.dims.size()));
  for (std::size_t d : data.dims) put_u32le(out, static_cast<std::uint32_t>(d));
  std::visit([&](const auto& v) { append_le(out, v); }, data.payload);
  write_file(path, out);
}

DtenData read_dten(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(content.data());
  const std::size_t size = content.size();
  if (size < 7 || std::memcmp(p, kMagic, 4) != 0)
    throw IoError(IoStatus::BadMagic, cat(path.string(), ": not a DTEN file"));
  if (p[4] != kVersion)
    throw IoError(IoStatus::BadVersion,
                  cat(path.string(), ": unsupported version ", int(p[4])));
  const std::uint8_t dt = p[5];
  if (dt < 1 || dt > 4)
    throw IoError(IoStatus::BadDtype, cat(path.string(), ": unknown dtype ", int(dt)));
  const std::size_t ndim = p[6];
  std::size_t off = 7;
  if (size < off + 4 * ndim)
    throw IoError(IoStatus::Truncated, cat(path.string(), ": truncated header"));
  DtenData data;
  data.dtype = static_cast<Dtype>(dt);
  data.dims.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    data.dims[i] = get_u32le(p + off);
    off += 4;
  }
  const std::size_t n = data.numel();
  const std::size_t need = n * dtype_size(data.dtype);
  if (size < off + need)
    throw IoError(IoStatus::Truncated,
                  cat(path.string(), ": payload truncated (have ", size - off,
                      " bytes, need ", need, ")"));
  switch (data.dtype) {
    case Dtype::F32: data.payload = parse_le<float>(p + off, n); break;
    case Dtype::F64: data.payload = parse_le<double>(p + off, n); break;
    case Dtype::U8: data.payload = parse_le<std::uint8_t>(p + off, n); break;
    case Dtype::I32: data.payload = parse_le<std::int32_t>(p + off, n); break;
  }
  return data;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_keypoints_csv(const std::filesystem::path& path,
                         const std::vector<Point>& pts) {
  std::string out;
  for (const auto& p : pts) {
    out += format_double(p[0]);
    out += ',';
    out += format_double(p[1]);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Point> read_keypoints_csv(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::vector<Point> pts;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    const std::string line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError(IoStatus::BadFormat,
                    cat(path.string(), " line ", line_no, ": expected 'x,y'"));
    char* endp = nullptr;
    const std::string xs = line.substr(0, comma);
    const std::string ys = line.substr(comma + 1);
    const double x = std::strtod(xs.c_str(), &endp);
    if (endp == xs.c_str() || *endp != '\0')
      throw IoError(IoStatus::BadFormat,
                    cat(path.string(), " line ", line_no, ": bad x value '", xs, "'"));
    const double y = std::strtod(ys.c_str(), &endp);
    if (endp == ys.c_str() || *endp != '\0')
      throw IoError(IoStatus::BadFormat,
                    cat(path.string(), " line ", line_no, ": bad y value '", ys, "'"));
    pts.push_back({x, y});
  }
  return pts;
}

void write_pair(const std::filesystem::path& dir, const SyntheticPair& pair) {
  std::filesystem::create_directories(dir);
  const std::vector<std::size_t> img_dims{pair.h, pair.w};
  write_dten(dir / "fixed.dten", make_dten(img_dims, pair.fixed));
  write_dten(dir / "moving.dten", make_dten(img_dims, pair.moving));
  write_dten(dir / "labels_fixed.dten", make_dten(img_dims, pair.labels_fixed));
  write_dten(dir / "labels_moving.dten", make_dten(img_dims, pair.labels_moving));
  write_dten(dir / "gt_field.dten", make_dten({2, pair.h, pair.w}, pair.gt_field));
  write_keypoints_csv(dir / "keypoints_fixed.csv", pair.kp_fixed);
  write_keypoints_csv(dir / "keypoints_moving.csv", pair.kp_moving);
  write_kv_file(dir / "meta.txt", {{"seed", std::to_string(pair.seed)},
                                   {"h", std::to_string(pair.h)},
                                   {"w", std::to_string(pair.w)}});
}

SyntheticPair read_pair(const std::filesystem::path& dir) {
  SyntheticPair pair;
  const auto meta = parse_kv_file(dir / "meta.txt");
  pair.seed = static_cast<std::uint64_t>(kv_long(meta, "seed", 0));
  const DtenData fixed = read_dten(dir / "fixed.dten");
  if (fixed.dims.size() != 2)
    throw IoError(IoStatus::BadFormat, cat(dir.string(), ": fixed.dten must be 2-d"));
  pair.h = fixed.dims[0];
  pair.w = fixed.dims[1];
  pair.fixed = fixed.as<double>();
  pair.moving = read_dten(dir / "moving.dten").as<double>();
  pair.labels_fixed = read_dten(dir / "labels_fixed.dten").as<std::uint8_t>();
  pair.labels_moving = read_dten(dir / "labels_moving.dten").as<std::uint8_t>();
  pair.gt_field = read_dten(dir / "gt_field.dten").as<double>();
  pair.kp_fixed = read_keypoints_csv(dir / "keypoints_fixed.csv");
  pair.kp_moving = read_keypoints_csv(dir / "keypoints_moving.csv");
  if (pair.moving.size() != pair.h * pair.w ||
      pair.labels_fixed.size() != pair.h * pair.w ||
      pair.gt_field.size() != 2 * pair.h * pair.w)
    throw IoError(IoStatus::BadFormat, cat(dir.string(), ": inconsistent pair sizes"));
  return pair;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.split;
    out += ' ';
    out += e.rel_dir;
    out += '\n';
  }
  write_file(path, out);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::vector<ManifestEntry> entries;
  std::size_t pos = 0, line_no = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    const std::string line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos)
      throw IoError(IoStatus::BadFormat,
                    cat(path.string(), " line ", line_no, ": expected '<split> <dir>'"));
    entries.push_back({line.substr(0, space), line.substr(space + 1)});
  }
  return entries;
}

std::vector<SyntheticPair> load_split(const std::filesystem::path& corpus_dir,
                                      const std::string& split) {
  const auto entries = read_manifest(corpus_dir / "manifest.txt");
  std::vector<SyntheticPair> pairs;
  for (const auto& e : entries)
    if (e.split == split) pairs.push_back(read_pair(corpus_dir / e.rel_dir));
  return pairs;
}

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::map<std::string, std::string> kv;
  std::size_t pos = 0, line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    const std::string line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw IoError(IoStatus::BadFormat,
                    cat(path.string(), " line ", line_no, ": expected 'key = value'"));
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

void write_kv_file(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  write_file(path, out);
}

double kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  char* endp = nullptr;
  const double v = std::strtod(it->second.c_str(), &endp);
  if (endp == it->second.c_str() || *endp != '\0')
    throw IoError(IoStatus::BadFormat, cat("bad numeric value for '", key, "': ",
                                           it->second));
  return v;
}

long kv_long(const std::map<std::string, std::string>& kv, const std::string& key,
             long fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  char* endp = nullptr;
  const long v = std::strtol(it->second.c_str(), &endp, 10);
  if (endp == it->second.c_str() || *endp != '\0')
    throw IoError(IoStatus::BadFormat, cat("bad integer value for '", key, "': ",
                                           it->second));
  return v;
}

std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

void append_csv_line(std::string& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  out += '\n';
}

}  // namespace eqreg
