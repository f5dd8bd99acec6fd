#pragma once

// YAML experiment configuration. A config names a preset case and may
// override any of its fields; case "custom" builds everything from scratch.
//
//   case: oscillator1d
//   grid: {points: [1024], lengths: [10.0]}
//   noise_sigma: 16
//   seeds: {field: 1, noise: 2, mask: 3}
//   mask: {boxes: [[[0.1, 0.16]]], fraction: 0.3}
//   spectrum: {kind: sde, noise_power: 1, terms: [{orders: [2], coeff: 3e-4}]}
//   hyper: {sigma: 2, mu: 2, eta: 0.1, nu: 1.5707963, epsilon: 1e-3, backend: fd}
//   fit: {max_iterations: 2000, gradient_tolerance: 0, memory: 12,
//         dense_cap: 4096, probes: 0}

#include <filesystem>
#include <set>
#include <string>

#include <yaml-cpp/yaml.h>

#include <json.hpp>

#include "specfield/errors.hpp"
#include "specfield/io.hpp"
#include "specfield/synth.hpp"

namespace specfield {

namespace detail {

inline void check_keys(const YAML::Node& n, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!n.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const YAML::Node& n, const std::string& where) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + ": value has the wrong type");
  }
}

template <class T>
void maybe(const YAML::Node& parent, const char* key, T& out, const std::string& where) {
  if (auto v = parent[key]) out = get<T>(v, where + "." + key);
}

inline void parse_grid(const YAML::Node& g, ExperimentConfig& c) {
  check_keys(g, {"points", "lengths"}, "grid");
  std::vector<long> pts;
  std::vector<double> lens;
  for (const auto& a : c.axes) {
    pts.push_back(a.n_points);
    lens.push_back(a.length);
  }
  if (auto p = g["points"]) pts = p.IsSequence() ? get<std::vector<long>>(p, "grid.points")
                                                 : std::vector<long>(std::max<std::size_t>(pts.size(), 1),
                                                                     get<long>(p, "grid.points"));
  if (auto l = g["lengths"]) lens = l.IsSequence() ? get<std::vector<double>>(l, "grid.lengths")
                                                   : std::vector<double>(pts.size(), get<double>(l, "grid.lengths"));
  if (lens.empty()) lens.assign(pts.size(), 1.0);
  if (pts.size() != lens.size()) throw ConfigError("grid: points and lengths differ in length");
  c.axes.clear();
  for (std::size_t a = 0; a < pts.size(); ++a) c.axes.push_back({pts[a], lens[a]});
}

inline void parse_mask(const YAML::Node& m, ExperimentConfig& c) {
  check_keys(m, {"boxes", "fraction"}, "mask");
  if (auto b = m["boxes"]) {
    c.mask.boxes.clear();
    if (!b.IsSequence()) throw ConfigError("mask.boxes: expected a list");
    for (const auto& box : b) {
      MaskBox mb;
      for (const auto& r : box) {
        auto v = get<std::vector<double>>(r, "mask.boxes");
        if (v.size() != 2) throw ConfigError("mask.boxes: each range needs [lo, hi]");
        mb.ranges.emplace_back(v[0], v[1]);
      }
      c.mask.boxes.push_back(std::move(mb));
    }
  }
  if (auto f = m["fraction"]) {
    if (f.IsNull())
      c.mask.fraction.reset();
    else
      c.mask.fraction = get<double>(f, "mask.fraction");
  }
}

inline void parse_spectrum(const YAML::Node& s, ExperimentConfig& c) {
  check_keys(s, {"kind", "noise_power", "terms", "structured"}, "spectrum");
  if (auto k = s["kind"]) {
    const auto kind = get<std::string>(k, "spectrum.kind");
    if (kind == "sde")
      c.spectrum = SpectrumKind::sde;
    else if (kind == "structured")
      c.spectrum = SpectrumKind::structured;
    else
      throw ConfigError("spectrum.kind: expected 'sde' or 'structured'");
  }
  maybe(s, "noise_power", c.sde.noise_power, "spectrum");
  if (auto t = s["terms"]) {
    c.sde.terms.clear();
    for (const auto& term : t) {
      check_keys(term, {"orders", "coeff"}, "spectrum.terms");
      c.sde.terms.push_back({get<std::vector<int>>(term["orders"], "spectrum.terms.orders"),
                             get<double>(term["coeff"], "spectrum.terms.coeff")});
    }
  }
  if (auto st = s["structured"]) {
    check_keys(st, {"m2", "alpha", "beta", "gamma", "rho"}, "spectrum.structured");
    maybe(st, "m2", c.structured.m2, "spectrum.structured");
    maybe(st, "alpha", c.structured.alpha, "spectrum.structured");
    maybe(st, "beta", c.structured.beta, "spectrum.structured");
    maybe(st, "gamma", c.structured.gamma, "spectrum.structured");
    maybe(st, "rho", c.structured.rho, "spectrum.structured");
  }
}

inline void parse_hyper(const YAML::Node& h, ExperimentConfig& c) {
  check_keys(h, {"sigma", "mu", "eta", "nu", "epsilon", "backend"}, "hyper");
  maybe(h, "sigma", c.hyper.sigma, "hyper");
  maybe(h, "mu", c.hyper.mu, "hyper");
  maybe(h, "eta", c.hyper.eta, "hyper");
  maybe(h, "nu", c.nu, "hyper");
  maybe(h, "epsilon", c.epsilon, "hyper");
  if (auto b = h["backend"]) {
    try {
      c.hyper.backend = parse_backend(get<std::string>(b, "hyper.backend"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("hyper.backend: ") + e.what());
    }
  }
}

inline void parse_fit(const YAML::Node& f, ExperimentConfig& c) {
  check_keys(f, {"max_iterations", "gradient_tolerance", "memory", "max_restarts", "dense_cap", "probes"},
             "fit");
  maybe(f, "max_iterations", c.fit.optimizer.max_iterations, "fit");
  maybe(f, "gradient_tolerance", c.fit.optimizer.gradient_tolerance, "fit");
  maybe(f, "memory", c.fit.optimizer.memory, "fit");
  maybe(f, "max_restarts", c.fit.optimizer.max_restarts, "fit");
  maybe(f, "dense_cap", c.fit.dense_cap, "fit");
  maybe(f, "probes", c.fit.probes, "fit");
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping");
  detail::check_keys(root, {"case", "grid", "noise_sigma", "seeds", "mask", "spectrum", "hyper", "fit"},
                     "config");
  if (!root["case"]) throw ConfigError("config: missing 'case'");
  const auto name = detail::get<std::string>(root["case"], "case");
  ExperimentConfig c;
  if (name == "custom") {
    if (!root["grid"] || !root["spectrum"]) throw ConfigError("custom case needs 'grid' and 'spectrum'");
  } else {
    try {
      c = preset(name);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  c.case_name = name;
  if (auto g = root["grid"]) detail::parse_grid(g, c);
  detail::maybe(root, "noise_sigma", c.noise_sigma, "config");
  if (auto s = root["seeds"]) {
    detail::check_keys(s, {"field", "noise", "mask"}, "seeds");
    detail::maybe(s, "field", c.seeds.field, "seeds");
    detail::maybe(s, "noise", c.seeds.noise, "seeds");
    detail::maybe(s, "mask", c.seeds.mask, "seeds");
  }
  if (auto m = root["mask"]) detail::parse_mask(m, c);
  if (auto s = root["spectrum"]) detail::parse_spectrum(s, c);
  if (auto h = root["hyper"]) detail::parse_hyper(h, c);
  if (auto f = root["fit"]) detail::parse_fit(f, c);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  } catch (const GridError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_file(path));
}

/// Effective configuration as JSON (manifest echo).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["case"] = c.case_name;
  std::vector<long> pts;
  std::vector<double> lens;
  for (const auto& a : c.axes) {
    pts.push_back(a.n_points);
    lens.push_back(a.length);
  }
  j["grid"] = {{"points", pts}, {"lengths", lens}};
  j["noise_sigma"] = c.noise_sigma;
  j["seeds"] = {{"field", c.seeds.field}, {"noise", c.seeds.noise}, {"mask", c.seeds.mask}};
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : c.mask.boxes) {
    nlohmann::json rs = nlohmann::json::array();
    for (auto [lo, hi] : b.ranges) rs.push_back({lo, hi});
    boxes.push_back(rs);
  }
  j["mask"] = {{"boxes", boxes}};
  if (c.mask.fraction) j["mask"]["fraction"] = *c.mask.fraction;
  if (c.spectrum == SpectrumKind::sde) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : c.sde.terms) terms.push_back({{"orders", t.orders}, {"coeff", t.coeff}});
    j["spectrum"] = {{"kind", "sde"}, {"noise_power", c.sde.noise_power}, {"terms", terms}};
  } else {
    const auto& s = c.structured;
    j["spectrum"] = {{"kind", "structured"},
                     {"structured",
                      {{"m2", s.m2}, {"alpha", s.alpha}, {"beta", s.beta}, {"gamma", s.gamma}, {"rho", s.rho}}}};
  }
  j["hyper"] = {{"sigma", c.hyper.sigma}, {"mu", c.hyper.mu},     {"eta", c.hyper.eta},
                {"nu", c.nu},             {"epsilon", c.epsilon}, {"backend", to_string(c.hyper.backend)}};
  j["fit"] = {{"max_iterations", c.fit.optimizer.max_iterations},
              {"gradient_tolerance", c.fit.optimizer.gradient_tolerance},
              {"memory", c.fit.optimizer.memory},
              {"max_restarts", c.fit.optimizer.max_restarts},
              {"dense_cap", c.fit.dense_cap},
              {"probes", c.fit.probes}};
  return j;
}

/// Effective configuration as YAML text; parse_config reads it back unchanged.
inline std::string config_to_yaml(const ExperimentConfig& c) {
  // JSON is a YAML subset; reuse the JSON form with full double precision.
  return config_to_json(c).dump(2) + "\n";
}

}  // namespace specfield
