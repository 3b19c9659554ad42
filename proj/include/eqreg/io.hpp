#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "eqreg/common.hpp"
#include "eqreg/metrics.hpp"
#include "eqreg/synth.hpp"

namespace eqreg {

enum class Dtype : std::uint8_t { F32 = 1, F64 = 2, U8 = 3, I32 = 4 };

enum class IoStatus {
  BadMagic = 1,
  BadVersion = 2,
  BadDtype = 3,
  Truncated = 4,
  FileMissing = 5,
  BadFormat = 6,
};

class IoError : public std::runtime_error {
public:
  IoError(IoStatus s, const std::string& msg) : std::runtime_error(msg), status(s) {}
  IoStatus status;
};

// DTEN container: magic "DTEN", version u8=1, dtype u8, ndim u8,
// dims ndim x u32 little-endian, then the row-major little-endian payload.
struct DtenData {
  Dtype dtype;
  std::vector<std::size_t> dims;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>,
               std::vector<std::int32_t>>
      payload;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  template <class T>
  const std::vector<T>& as() const {
    return std::get<std::vector<T>>(payload);
  }
};

DtenData read_dten(const std::filesystem::path& path);
void write_dten(const std::filesystem::path& path, const DtenData& data);

DtenData make_dten(std::vector<std::size_t> dims, std::vector<float> v);
DtenData make_dten(std::vector<std::size_t> dims, std::vector<double> v);
DtenData make_dten(std::vector<std::size_t> dims, std::vector<std::uint8_t> v);
DtenData make_dten(std::vector<std::size_t> dims, std::vector<std::int32_t> v);

// Keypoint CSV: one "x,y" pair per line, '.' decimal separator, LF endings.
std::vector<Point> read_keypoints_csv(const std::filesystem::path& path);
void write_keypoints_csv(const std::filesystem::path& path, const std::vector<Point>& pts);

// Corpus layout: one directory per pair plus a manifest listing
// "<split> <relative-dir>" lines.
struct ManifestEntry {
  std::string split;  // train | val | test
  std::string rel_dir;
};

void write_pair(const std::filesystem::path& dir, const SyntheticPair& pair);
SyntheticPair read_pair(const std::filesystem::path& dir);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

std::vector<SyntheticPair> load_split(const std::filesystem::path& corpus_dir,
                                      const std::string& split);

// Plain-text "key = value" config files; '#' starts a comment line.
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);
void write_kv_file(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& kv);

// Typed lookup helpers (throw IoError(BadFormat) on malformed values).
double kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double fallback);
long kv_long(const std::map<std::string, std::string>& kv, const std::string& key,
             long fallback);
std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback);

void append_csv_line(std::string& out, const std::vector<std::string>& fields);
std::string format_double(double v);

}  // namespace eqreg
