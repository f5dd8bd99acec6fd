#pragma once

// Mock-data generation: Gaussian random fields drawn from a target spectrum,
// masked responses and white measurement noise, plus the experiment presets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "specfield/errors.hpp"
#include "specfield/grid.hpp"
#include "specfield/model.hpp"
#include "specfield/operators.hpp"
#include "specfield/optimizer.hpp"
#include "specfield/priors.hpp"
#include "specfield/rng.hpp"

namespace specfield {

/// Axis-aligned masked box. Bounds are fractions of each axis length in
/// [0, 1]; a cell is masked when its index fraction j / n lies in [lo, hi)
/// on every axis. Axes beyond `ranges` are masked over their full extent.
struct MaskBox {
  std::vector<std::pair<double, double>> ranges;
};

struct MaskSpec {
  std::vector<MaskBox> boxes;
  /// Random masking of exactly floor(fraction * N) cells; used when set.
  std::optional<double> fraction;

  bool empty() const { return boxes.empty() && !fraction; }
};

struct SeedSet {
  std::uint64_t field = 1;
  std::uint64_t noise = 2;
  std::uint64_t mask = 3;
};

enum class SpectrumKind { sde, structured };

struct FitSettings {
  OptimizerConfig optimizer;
  long dense_cap = convention::default_dense_cap;
  long probes = 0;
};

struct ExperimentConfig {
  std::string case_name = "custom";
  std::vector<Axis> axes;
  SpectrumKind spectrum = SpectrumKind::sde;
  SdeSpec sde;
  StructuredSpectrumParams structured;
  double noise_sigma = 0.0;
  MaskSpec mask;
  SeedSet seeds;
  SmoothnessHyper hyper;
  double nu = std::numbers::pi / 2;
  double epsilon = 1e-3;
  FitSettings fit;

  void validate() const {
    if (axes.empty()) throw InvalidArgument("config: grid needs at least one axis");
    make_grid(axes);
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw InvalidArgument("config: noise_sigma must be finite and >= 0");
    if (mask.fraction && !(*mask.fraction >= 0.0 && *mask.fraction < 1.0))
      throw InvalidArgument("config: masked fraction must lie in [0, 1)");
    for (const auto& b : mask.boxes) {
      if (b.ranges.size() > axes.size()) throw InvalidArgument("config: mask box has too many axes");
      for (auto [lo, hi] : b.ranges)
        if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi))
          throw InvalidArgument("config: mask bounds must satisfy 0 <= lo <= hi <= 1");
    }
    hyper.validate();
    if (!(nu > 0.0)) throw InvalidArgument("config: nu must be positive");
    if (!(epsilon > 0.0 && epsilon < std::numbers::pi / 2))
      throw InvalidArgument("config: epsilon must lie in (0, pi/2)");
    if (spectrum == SpectrumKind::sde) sde.validate(static_cast<int>(axes.size()));
    if (spectrum == SpectrumKind::structured && axes.size() != 2)
      throw InvalidArgument("config: structured spectrum needs two axes");
    if (fit.dense_cap < 1) throw InvalidArgument("config: dense_cap must be positive");
    if (fit.probes < 0) throw InvalidArgument("config: probes must be >= 0");
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"oscillator1d", "wave2d", "structured2d"};
  return names;
}

namespace detail {

// Final 20% of times fully masked plus two interior rectangles.
inline MaskSpec late_time_mask() {
  MaskSpec m;
  m.boxes.push_back({{{0.8, 1.0}}});
  m.boxes.push_back({{{0.25, 0.4}, {0.1, 0.35}}});
  m.boxes.push_back({{{0.5, 0.62}, {0.55, 0.85}}});
  return m;
}

}  // namespace detail

/// Preset experiments. `n` overrides the points per axis (0 keeps the default).
inline ExperimentConfig preset(const std::string& name, long n = 0) {
  ExperimentConfig c;
  c.case_name = name;
  if (name == "oscillator1d") {
    c.axes = {{n > 0 ? n : 1024, 10.0}};
    c.sde = SdeSpec::oscillator(0.0003, 0.001, 0.5);
    c.noise_sigma = 16.0;
    c.mask.boxes = {{{{0.10, 0.16}}}, {{{0.40, 0.50}}}, {{{0.70, 0.89}}}};
    c.hyper = {2.0, 2.0, 0.1, DerivativeBackend::finite_difference};
  } else if (name == "wave2d") {
    const long m = n > 0 ? n : 128;
    c.axes = {{m, 1.0}, {m, 1.0}};
    c.sde = SdeSpec::wave2d(0.00007, 0.0002, 0.0014, 0.0012, 0.1);
    c.noise_sigma = 7.0;
    c.mask = detail::late_time_mask();
    c.hyper = {2.5, 2.5, 0.1, DerivativeBackend::finite_difference};
    c.fit.probes = 16;
  } else if (name == "structured2d") {
    const long m = n > 0 ? n : 128;
    c.axes = {{m, 1.0}, {m, 1.0}};
    c.spectrum = SpectrumKind::structured;
    c.noise_sigma = 1.0;
    c.mask = detail::late_time_mask();
    c.hyper = {4.0, 4.0, 0.1, DerivativeBackend::finite_difference};
    c.fit.probes = 16;
  } else {
    throw InvalidArgument("unknown case '" + name + "'");
  }
  return c;
}

/// Truth spectrum of an experiment on its grid. Averaged over k -> -k pairs:
/// on Nyquist lines the lattice identifies k_a = -n/2 with +n/2, so spectra
/// with cross terms are otherwise not reflection symmetric there.
inline Vector truth_spectrum(const ExperimentConfig& c, const RegularGrid& grid) {
  KCoords kc(grid);
  return symmetrize(grid, c.spectrum == SpectrumKind::structured ? structured_spectrum(kc, c.structured)
                                                                 : sde_to_spectrum(c.sde, kc));
}

/// Draw a real Gaussian field with spectrum P: white cell noise filtered by
/// sqrt(P / dV) in harmonic space.
inline Field sample_field(const RegularGrid& grid, const Vector& power, std::uint64_t seed) {
  if (power.size() != grid.size()) throw GridError("sample_field: spectrum size mismatch");
  if (!((power.array() > 0.0).all() && power.allFinite()))
    throw InvalidArgument("sample_field: spectrum must be strictly positive and finite");
  auto rng = make_rng(seed, "field");
  std::normal_distribution<double> n01;
  Vector w(grid.size());
  for (auto& x : w) x = n01(rng);
  HarmonicField h = fft_forward(Field(grid, w));
  const Vector amp = (power / grid.cell_volume()).cwiseSqrt();
  for (long i = 0; i < grid.size(); ++i) h.values[i] *= amp[i];
  return fft_inverse(h);
}

inline std::vector<std::uint8_t> make_mask(const RegularGrid& grid, const MaskSpec& spec,
                                           std::uint64_t seed) {
  const long n = grid.size();
  std::vector<std::uint8_t> obs(static_cast<std::size_t>(n), 1);
  for (const auto& box : spec.boxes) {
    if (static_cast<int>(box.ranges.size()) > grid.ndim())
      throw InvalidArgument("mask box has more axes than the grid");
    for (long i = 0; i < n; ++i) {
      bool inside = true;
      for (std::size_t a = 0; a < box.ranges.size() && inside; ++a) {
        const double f = static_cast<double>(grid.index(i, static_cast<int>(a))) /
                         static_cast<double>(grid.n_points(static_cast<int>(a)));
        inside = f >= box.ranges[a].first && f < box.ranges[a].second;
      }
      if (inside) obs[i] = 0;
    }
  }
  if (spec.fraction) {
    const double f = *spec.fraction;
    if (!(f >= 0.0 && f < 1.0)) throw InvalidArgument("masked fraction must lie in [0, 1)");
    std::vector<long> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0L);
    auto rng = make_rng(seed, "mask");
    std::shuffle(idx.begin(), idx.end(), rng);
    const long k = static_cast<long>(std::floor(f * static_cast<double>(n)));
    for (long i = 0; i < k; ++i) obs[idx[i]] = 0;
  }
  if (std::none_of(obs.begin(), obs.end(), [](std::uint8_t o) { return o != 0; }))
    throw InvalidArgument("mask leaves no observed cells");
  return obs;
}

inline Vector add_noise(const Vector& clean, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  if (sigma == 0.0) return clean;
  auto rng = make_rng(seed, "noise");
  std::normal_distribution<double> n01;
  Vector out = clean;
  for (auto& x : out) x += sigma * n01(rng);
  return out;
}

struct ExperimentBundle {
  RegularGrid grid;
  Field phi;
  std::vector<std::uint8_t> mask;
  std::shared_ptr<const MaskResponseOp> response;
  Vector data;
  Vector truth;
  double noise_sigma = 0.0;
};

inline ExperimentBundle generate(const ExperimentConfig& c) {
  c.validate();
  RegularGrid grid = make_grid(c.axes);
  Vector truth = truth_spectrum(c, grid);
  Field phi = sample_field(grid, truth, c.seeds.field);
  auto mask = make_mask(grid, c.mask, c.seeds.mask);
  auto response = std::make_shared<const MaskResponseOp>(grid, mask);
  Vector d = add_noise(response->apply(phi.values), c.noise_sigma, c.seeds.noise);
  return {grid, std::move(phi), std::move(mask), std::move(response), std::move(d),
          std::move(truth), c.noise_sigma};
}

}  // namespace specfield
