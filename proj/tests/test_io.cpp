#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "specfield/io.hpp"

using namespace specfield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("specfield_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("little-endian encoding is bit exact", "[io]") {
  Eigen::VectorXd v(7);
  v << 1.0, -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
      std::numeric_limits<double>::infinity(), 0.1, -3.25e-200;
  const std::string buf = io::encode_le(v);
  REQUIRE(buf.size() == 56);
  // 1.0 = 0x3FF0000000000000, lowest byte first.
  CHECK(static_cast<unsigned char>(buf[6]) == 0xF0);
  CHECK(static_cast<unsigned char>(buf[7]) == 0x3F);
  const Eigen::VectorXd back = io::decode_le(buf);
  for (long i = 0; i < v.size(); ++i)
    CHECK(std::bit_cast<std::uint64_t>(back[i]) == std::bit_cast<std::uint64_t>(v[i]));
  CHECK_THROWS_AS(io::decode_le(std::string(9, '\0')), IoError);
}

TEST_CASE("arrays round trip with their sidecar", "[io]") {
  const auto dir = scratch("roundtrip");
  auto g = make_grid({{8, 2.0}, {6, 3.0}});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  Eigen::VectorXd v(g.size());
  for (auto& x : v) x = n01(rng);
  io::write_field(dir / "f.bin", g, v, io::Domain::harmonic, {{"note", "x"}});
  REQUIRE(fs::exists(dir / "f.json"));
  CHECK(fs::file_size(dir / "f.bin") == static_cast<std::uintmax_t>(8 * g.size()));

  auto meta = nlohmann::json::parse(io::read_file(dir / "f.json"));
  CHECK(meta["shape"] == nlohmann::json({8, 6}));
  CHECK(meta["dtype"] == "float64");
  CHECK(meta["endianness"] == "little");
  CHECK(meta["order"] == "row-major");
  CHECK(meta["domain"] == "harmonic");

  auto a = io::read_array(dir / "f.bin");
  CHECK(a.values == v);
  CHECK(a.domain == io::Domain::harmonic);
  CHECK(a.grid() == g);
  CHECK(a.attributes["note"] == "x");

  io::write_vector(dir / "t.bin", v.head(5));
  auto t = io::read_array(dir / "t.bin");
  CHECK(t.values == v.head(5));
  CHECK_THROWS_AS(t.grid(), IoError);

  CHECK_THROWS_AS(io::write_field(dir / "bad.bin", g, v.head(3)), GridError);
  fs::remove(dir / "t.json");
  CHECK_THROWS_AS(io::read_array(dir / "t.bin"), IoError);
  io::write_file(dir / "f.bin", std::string(16, '\0'));
  CHECK_THROWS_AS(io::read_array(dir / "f.bin"), IoError);
}

TEST_CASE("csv keeps every bit of the values", "[io]") {
  const auto dir = scratch("csv");
  io::StoredArray a;
  a.shape = {3, 4};
  a.values.resize(12);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e5, 1e5);
  for (auto& x : a.values) x = u(rng) / 3.0;
  a.values[0] = 1.0 / 3.0;
  a.values[1] = 5e-324;
  io::write_csv(dir / "a.csv", a);
  const std::string text = io::read_file(dir / "a.csv");
  CHECK(text.rfind("i0,i1,value\n0,0,0.33333333333333331\n0,1,", 0) == 0);
  CHECK(io::read_csv_values(dir / "a.csv") == a.values);
  CHECK(io::format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("sha256 and manifests", "[io]") {
  CHECK(io::sha256_bytes("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(io::sha256_bytes("", 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");

  const auto dir = scratch("manifest");
  io::write_file(dir / "x.txt", "abc");
  io::Manifest m("unit");
  m.add_file(dir, "x.txt");
  m.add_timing("total", 0.5);
  m.write(dir);
  auto doc = io::Manifest::read(dir);
  CHECK(doc["command"] == "unit");
  CHECK(doc["files"]["x.txt"]["bytes"] == 3);
  CHECK(doc["files"]["x.txt"]["sha256"] == io::sha256_file(dir / "x.txt"));
  CHECK(doc["timings"]["total"] == 0.5);
  CHECK_THROWS_AS(io::Manifest::read(dir / "nowhere"), IoError);
  CHECK_THROWS_AS(io::read_file(dir / "nowhere.bin"), IoError);
}
