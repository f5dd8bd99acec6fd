#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "specfield/grid.hpp"

using namespace specfield;
using Catch::Approx;

namespace {

Eigen::VectorXd random_values(long n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (long i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// O(N^2) transform dV * sum_x f(x) exp(-i k.x) with x and k from storage indices.
Eigen::VectorXcd brute_dft(const RegularGrid& g, const Eigen::VectorXd& f) {
  Eigen::VectorXcd out(g.size());
  for (long k = 0; k < g.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (long x = 0; x < g.size(); ++x) {
      double phase = 0.0;
      for (int a = 0; a < g.ndim(); ++a)
        phase += 2.0 * std::numbers::pi * static_cast<double>(g.index(k, a) * g.index(x, a)) /
                 static_cast<double>(g.n_points(a));
      acc += f[x] * std::polar(1.0, -phase);
    }
    out[k] = acc * g.cell_volume();
  }
  return out;
}

}  // namespace

TEST_CASE("make_grid validates axes", "[grid]") {
  auto g = make_grid({{1024, 1.0}});
  CHECK(g.cell_volume() == Approx(1.0 / 1024));
  auto g2 = make_grid({{128, 1.0}, {128, 1.0}});
  CHECK(g2.size() == 16384);
  CHECK_THROWS_AS(make_grid({{5, 1.0}}), GridError);
  CHECK_THROWS_AS(make_grid({{2, 1.0}}), GridError);
  CHECK_THROWS_AS(make_grid({{8, 0.0}}), GridError);
  CHECK_THROWS_AS(make_grid({{8, -1.0}}), GridError);
  CHECK_THROWS_AS(make_grid({}), GridError);
}

TEST_CASE("k coordinates follow the FFT index convention", "[grid]") {
  auto g = make_grid({{8, 1.0}});
  KCoords kc(g);
  const double tp = 2.0 * std::numbers::pi;
  const double expect[] = {0, 1, 2, 3, -4, -3, -2, -1};
  for (int j = 0; j < 8; ++j) CHECK(kc.axis(0)[j] == Approx(tp * expect[j]));
  for (double len : {0.5, 2.0, 10.0}) {
    auto h = make_grid({{16, len}, {8, 1.0}});
    KCoords kh(h);
    CHECK(kh.spacing(0) == Approx(tp / len));
    CHECK(kh.coord(0, 0) == 0.0);
    CHECK(kh.coord(0, 1) == 0.0);
  }
}

TEST_CASE("forward transform matches a brute-force DFT", "[grid]") {
  for (auto dims : {std::vector<Axis>{{16, 2.0}}, std::vector<Axis>{{8, 1.0}, {6, 3.0}},
                    std::vector<Axis>{{4, 1.0}, {6, 1.0}, {4, 2.0}}}) {
    auto g = make_grid(dims);
    Field f(g, random_values(g.size(), 3));
    auto h = fft_forward(f);
    auto ref = brute_dft(g, f.values);
    CHECK((h.values - ref).norm() / ref.norm() < 1e-10);
    CHECK(hermitian_violation(h) < 1e-12);
  }
}

TEST_CASE("transform special cases", "[grid]") {
  auto g = make_grid({{8, 1.0}, {8, 2.0}});
  auto h = fft_forward(Field::constant(g, 3.0));
  CHECK(std::abs(h.values[0] - std::complex<double>(3.0 * g.total_volume())) < 1e-12);
  CHECK(h.values.tail(g.size() - 1).cwiseAbs().maxCoeff() < 1e-12);

  Field delta = Field::zeros(g);
  delta.values[0] = 1.0;
  auto hd = fft_forward(delta);
  for (long i = 0; i < g.size(); ++i) CHECK(std::abs(hd.values[i]) == Approx(g.cell_volume()));

  auto z = fft_inverse(HarmonicField(g, Eigen::VectorXcd::Zero(g.size()), true));
  CHECK(z.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-mode excitation inverts to a sampled cosine", "[grid]") {
  auto g = make_grid({{32, 2.0}});
  const long m = 3;
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(g.size());
  v[m] = v[g.size() - m] = 0.5 * g.total_volume();
  auto f = fft_inverse(HarmonicField(g, v, true));
  for (long j = 0; j < g.size(); ++j) {
    const double x = g.length(0) * static_cast<double>(j) / static_cast<double>(g.size());
    CHECK(f.values[j] == Approx(std::cos(2.0 * std::numbers::pi * m * x / g.length(0))).margin(1e-12));
  }
}

TEST_CASE("round trip, linearity and Parseval", "[grid]") {
  auto g = make_grid({{16, 1.0}, {8, 0.7}});
  Field a(g, random_values(g.size(), 11)), b(g, random_values(g.size(), 12));
  auto back = fft_inverse(fft_forward(a));
  CHECK((back.values - a.values).norm() / a.values.norm() < 1e-12);

  const double alpha = 1.7, beta = -0.3;
  Field lin(g, alpha * a.values + beta * b.values);
  auto lhs = fft_forward(lin).values;
  auto rhs = alpha * fft_forward(a).values + beta * fft_forward(b).values;
  CHECK((lhs - rhs).norm() / rhs.norm() < 1e-12);

  const double real_ip = inner_product(a, b);
  HarmonicField ha(g, brute_dft(g, a.values), true), hb(g, brute_dft(g, b.values), true);
  CHECK(inner_product(ha, hb) == Approx(real_ip).epsilon(1e-10));
}

TEST_CASE("inner product basics", "[grid]") {
  auto g = make_grid({{16, 1.0}});
  CHECK(inner_product(Field::constant(g, 1.0), Field::constant(g, 1.0)) == Approx(1.0));
  Field c1 = Field::zeros(g), c2 = Field::zeros(g);
  for (long j = 0; j < 16; ++j) {
    c1.values[j] = std::cos(2.0 * std::numbers::pi * 2 * j / 16.0);
    c2.values[j] = std::cos(2.0 * std::numbers::pi * 5 * j / 16.0);
  }
  CHECK(std::abs(inner_product(c1, c2)) < 1e-12);
  CHECK_THROWS_AS(inner_product(Field::zeros(g), Field::zeros(make_grid({{8, 1.0}}))), GridError);
}

TEST_CASE("non-Hermitian input is rejected by the real inverse", "[grid]") {
  auto g = make_grid({{8, 1.0}});
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(8);
  v[1] = 1.0;
  CHECK_THROWS_AS(fft_inverse(HarmonicField(g, v, false)), NonRealResult);
}

TEST_CASE("field validation", "[grid]") {
  auto g = make_grid({{8, 1.0}});
  CHECK_THROWS_AS(Field(g, Eigen::VectorXd::Zero(7)), GridError);
  CHECK(g.mirror(1) == 7);
  CHECK(g.mirror(4) == 4);
  CHECK(g.mirror(0) == 0);
}
