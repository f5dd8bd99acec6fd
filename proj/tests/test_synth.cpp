#include <catch_amalgamated.hpp>

#include <cmath>

#include "specfield/config.hpp"
#include "specfield/synth.hpp"

using namespace specfield;
using Catch::Approx;

TEST_CASE("generation is deterministic in the seeds", "[synth]") {
  auto c = preset("oscillator1d", 256);
  auto a = generate(c);
  auto b = generate(c);
  CHECK(a.phi.values == b.phi.values);
  CHECK(a.data == b.data);
  CHECK(a.mask == b.mask);

  c.seeds.field += 1;
  auto d = generate(c);
  CHECK(d.phi.values != a.phi.values);
  // Noise and mask streams are independent of the field seed.
  const Vector na = a.data - a.response->apply(a.phi.values);
  const Vector nd = d.data - d.response->apply(d.phi.values);
  CHECK((na - nd).cwiseAbs().maxCoeff() < 1e-12 * na.cwiseAbs().maxCoeff());
}

TEST_CASE("box masks follow index fractions", "[synth]") {
  auto g = make_grid({{20, 1.0}, {10, 1.0}});
  MaskSpec spec;
  spec.boxes.push_back({{{0.5, 0.75}}});            // rows 10..14, all columns
  spec.boxes.push_back({{{0.0, 0.1}, {0.2, 0.4}}});  // rows 0..1, columns 2..3
  auto m = make_mask(g, spec, 1);
  long masked = 0;
  for (long i = 0; i < g.size(); ++i) {
    const long r = g.index(i, 0), c = g.index(i, 1);
    const bool expect = (r >= 10 && r < 15) || (r < 2 && c >= 2 && c < 4);
    CHECK((m[i] == 0) == expect);
    masked += m[i] == 0;
  }
  CHECK(masked == 50 + 4);
}

TEST_CASE("fraction masks hide exactly floor(f N) cells", "[synth]") {
  auto g = make_grid({{30, 1.0}, {14, 2.0}});
  for (double f : {0.0, 0.1, 0.37, 0.5, 0.99}) {
    MaskSpec spec;
    spec.fraction = f;
    auto m = make_mask(g, spec, 7);
    const long hidden = std::count(m.begin(), m.end(), std::uint8_t{0});
    CHECK(hidden == static_cast<long>(std::floor(f * g.size())));
    CHECK(make_mask(g, spec, 7) == m);
  }
  MaskSpec bad;
  bad.fraction = 1.0;
  CHECK_THROWS_AS(make_mask(g, bad, 1), InvalidArgument);
  MaskSpec all;
  all.boxes.push_back({{{0.0, 1.0}}});
  CHECK_THROWS_AS(make_mask(g, all, 1), InvalidArgument);
}

TEST_CASE("white noise has the requested variance", "[synth]") {
  const long n = 40000;
  const double sigma = 3.0;
  Vector e = add_noise(Vector::Zero(n), sigma, 5);
  const double mean = e.mean();
  const double var = (e.array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean) < 5.0 * sigma / std::sqrt(double(n)));
  CHECK(std::abs(var / (sigma * sigma) - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(add_noise(Vector::Ones(4), 0.0, 5) == Vector::Ones(4));
  CHECK_THROWS_AS(add_noise(Vector::Ones(4), -1.0, 5), InvalidArgument);
}

TEST_CASE("sampled fields have the target spectrum on average", "[synth]") {
  auto g = make_grid({{64, 4.0}});
  KCoords kc(g);
  Vector p(g.size());
  for (long i = 0; i < g.size(); ++i) p[i] = 2.0 / (1.0 + std::pow(kc.coord(i, 0), 2));

  const int draws = 400;
  Vector mean_pg = Vector::Zero(g.size());
  double var_sum = 0.0;
  for (int s = 0; s < draws; ++s) {
    Field f = sample_field(g, p, 100 + s);
    CHECK(f.values.allFinite());
    mean_pg += periodogram(f) / draws;
    var_sum += f.values.squaredNorm() / g.size();
  }
  const Vector ratio = mean_pg.cwiseQuotient(p);
  // Each mode averages 400 (or 800 for paired modes) exponential draws.
  CHECK(std::abs(ratio.mean() - 1.0) < 0.02);
  CHECK((ratio.array() - 1.0).abs().maxCoeff() < 5.0 / std::sqrt(double(draws)) + 0.05);
  // Cell variance is sum_k p_k / V exactly, and sum_k P_k / V on average;
  // each draw of sum_k p_k has variance 2 sum_k P_k^2.
  CHECK(var_sum / draws == Approx(mean_pg.sum() / g.total_volume()).epsilon(1e-12));
  const double sd = std::sqrt(2.0 * p.squaredNorm() / draws) / g.total_volume();
  CHECK(std::abs(var_sum / draws - p.sum() / g.total_volume()) < 5.0 * sd);

  Vector neg = p;
  neg[3] = 0.0;
  CHECK_THROWS_AS(sample_field(g, neg, 1), InvalidArgument);
}

TEST_CASE("preset truth spectra are reflection symmetric", "[synth]") {
  for (const auto& name : preset_names()) {
    auto c = preset(name, name == "oscillator1d" ? 128 : 16);
    auto g = make_grid(c.axes);
    Vector p = truth_spectrum(c, g);
    CHECK((p.array() > 0.0).all());
    CHECK(reflection_asymmetry(g, p) == 0.0);
    CHECK_NOTHROW(generate(c));
  }
  CHECK_THROWS_AS(preset("nope"), InvalidArgument);
}

TEST_CASE("configs parse, validate and echo", "[config]") {
  const std::string text = R"(
case: oscillator1d
grid: {points: [128], lengths: [10.0]}
noise_sigma: 4
seeds: {field: 5, noise: 6, mask: 7}
mask: {boxes: [[[0.1, 0.2]]], fraction: 0.1}
hyper: {sigma: 3, mu: 1.5, eta: 0.2, backend: fourier}
fit: {max_iterations: 50, dense_cap: 100, probes: 4}
)";
  auto c = parse_config(text);
  CHECK(c.case_name == "oscillator1d");
  CHECK(c.axes.size() == 1);
  CHECK(c.axes[0].n_points == 128);
  CHECK(c.noise_sigma == 4.0);
  CHECK(c.seeds.mask == 7);
  CHECK(c.mask.boxes.size() == 1);
  CHECK(*c.mask.fraction == 0.1);
  CHECK(c.hyper.sigma == 3.0);
  CHECK(c.hyper.backend == DerivativeBackend::fourier);
  CHECK(c.fit.optimizer.max_iterations == 50);
  CHECK(c.fit.probes == 4);

  auto echo = parse_config(config_to_yaml(c));
  CHECK(config_to_json(echo) == config_to_json(c));

  CHECK_THROWS_AS(parse_config("case: oscillator1d\nbogus: 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("case: oscillator1d\nhyper: {sigma: 2, colour: red}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("case: oscillator1d\nnoise_sigma: loud\n"), ConfigError);
  CHECK_THROWS(parse_config("case: oscillator1d\nnoise_sigma: -1\n"));
  CHECK_THROWS(parse_config("case: oscillator1d\ngrid: {points: [7]}\n"));
  CHECK_THROWS(parse_config("case: unknown_case\n"));
}
