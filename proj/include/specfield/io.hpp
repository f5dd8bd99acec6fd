#pragma once

// File formats: raw little-endian float64 arrays with a JSON sidecar, CSV
// with 17 significant digits, SHA-256 content hashes and run manifests.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "specfield/errors.hpp"
#include "specfield/grid.hpp"

namespace specfield::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Domain { position, harmonic };

inline std::string to_string(Domain d) { return d == Domain::position ? "position" : "harmonic"; }

/// Array stored on a grid (or as a plain vector when `grid` is empty).
struct StoredArray {
  std::vector<long> shape;
  std::vector<double> lengths;
  Domain domain = Domain::position;
  Eigen::VectorXd values;
  json attributes = json::object();

  RegularGrid grid() const {
    if (lengths.size() != shape.size()) throw IoError("array has no grid lengths");
    std::vector<Axis> axes;
    for (std::size_t a = 0; a < shape.size(); ++a) axes.push_back({shape[a], lengths[a]});
    return make_grid(axes);
  }
};

inline fs::path sidecar_path(const fs::path& bin) {
  fs::path p = bin;
  p.replace_extension(".json");
  return p;
}

inline std::string sha256_bytes(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const fs::path& p) {
  const std::string s = read_file(p);
  return sha256_bytes(s.data(), s.size());
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

inline std::string encode_le(const Eigen::VectorXd& v) {
  std::string buf(static_cast<std::size_t>(v.size()) * 8, '\0');
  for (long i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) buf[static_cast<std::size_t>(8 * i + b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return buf;
}

inline Eigen::VectorXd decode_le(const std::string& buf) {
  if (buf.size() % 8 != 0) throw IoError("binary payload is not a whole number of float64 values");
  Eigen::VectorXd v(static_cast<long>(buf.size() / 8));
  for (long i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[static_cast<std::size_t>(8 * i + b)])) << (8 * b);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

/// Write `<path>` (raw float64 LE) and its `.json` sidecar.
inline void write_array(const fs::path& path, const StoredArray& a) {
  long count = 1;
  for (long s : a.shape) count *= s;
  if (count != a.values.size()) throw IoError("array shape does not match its value count");
  write_file(path, encode_le(a.values));
  json meta = {{"shape", a.shape},
               {"dtype", "float64"},
               {"endianness", "little"},
               {"order", "row-major"},
               {"domain", to_string(a.domain)},
               {"file", path.filename().string()}};
  if (!a.lengths.empty()) meta["lengths"] = a.lengths;
  if (!a.attributes.empty()) meta["attributes"] = a.attributes;
  write_file(sidecar_path(path), meta.dump(2) + "\n");
}

inline void write_field(const fs::path& path, const RegularGrid& grid, const Eigen::VectorXd& values,
                        Domain domain = Domain::position, json attributes = json::object()) {
  if (values.size() != grid.size()) throw GridError("write_field: value count does not match grid");
  StoredArray a;
  for (int d = 0; d < grid.ndim(); ++d) {
    a.shape.push_back(grid.n_points(d));
    a.lengths.push_back(grid.length(d));
  }
  a.domain = domain;
  a.values = values;
  a.attributes = std::move(attributes);
  write_array(path, a);
}

inline void write_vector(const fs::path& path, const Eigen::VectorXd& values,
                         json attributes = json::object()) {
  StoredArray a;
  a.shape = {values.size()};
  a.values = values;
  a.attributes = std::move(attributes);
  write_array(path, a);
}

inline StoredArray read_array(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  if (!fs::exists(side)) throw IoError("missing sidecar " + side.string());
  json meta;
  try {
    meta = json::parse(read_file(side));
  } catch (const json::exception& e) {
    throw IoError("bad sidecar " + side.string() + ": " + e.what());
  }
  if (meta.value("dtype", "") != "float64" || meta.value("endianness", "") != "little")
    throw IoError("unsupported array encoding in " + side.string());
  StoredArray a;
  a.shape = meta.at("shape").get<std::vector<long>>();
  if (meta.contains("lengths")) a.lengths = meta.at("lengths").get<std::vector<double>>();
  a.domain = meta.value("domain", "position") == "harmonic" ? Domain::harmonic : Domain::position;
  if (meta.contains("attributes")) a.attributes = meta["attributes"];
  a.values = decode_le(read_file(path));
  long count = 1;
  for (long s : a.shape) count *= s;
  if (count != a.values.size()) throw IoError("value count does not match shape in " + path.string());
  return a;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with one index column per axis followed by the value.
inline void write_csv(const fs::path& path, const StoredArray& a) {
  std::ostringstream os;
  for (std::size_t d = 0; d < a.shape.size(); ++d) os << 'i' << d << ',';
  os << "value\n";
  std::vector<long> idx(a.shape.size(), 0);
  for (long i = 0; i < a.values.size(); ++i) {
    for (long j : idx) os << j << ',';
    os << format_double(a.values[i]) << '\n';
    for (long d = static_cast<long>(idx.size()) - 1; d >= 0; --d) {
      if (++idx[d] < a.shape[d]) break;
      idx[d] = 0;
    }
  }
  write_file(path, os.str());
}

/// Reads a CSV written by write_csv back into row-major values.
inline Eigen::VectorXd read_csv_values(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty csv " + path.string());
  std::vector<double> vals;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto pos = line.rfind(',');
    vals.push_back(std::strtod(line.c_str() + (pos == std::string::npos ? 0 : pos + 1), nullptr));
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<long>(vals.size()));
}

/// Collects output files and their hashes for a run manifest.
class Manifest {
 public:
  explicit Manifest(std::string command) { doc_["command"] = std::move(command); }

  json& doc() { return doc_; }
  const json& doc() const { return doc_; }

  void add_file(const fs::path& dir, const std::string& name) {
    const fs::path p = dir / name;
    doc_["files"][name] = {{"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}};
  }
  void add_timing(const std::string& stage, double seconds) { doc_["timings"][stage] = seconds; }

  void write(const fs::path& dir) const { write_file(dir / "manifest.json", doc_.dump(2) + "\n"); }

  static json read(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) throw IoError("missing manifest in " + dir.string());
    return json::parse(read_file(p));
  }

 private:
  json doc_ = json::object();
};

}  // namespace specfield::io
