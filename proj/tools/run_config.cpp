#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "metasurf/error.hpp"

namespace metasurf::cli {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) bad(where + " must be an object");
  for (auto& [key, val] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) bad("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(where + "." + key + ": " + e.what());
  }
}

SolverConfig preset(const std::string& name) {
  if (name == "default") return SolverConfig{};
  if (name == "desk") return SolverConfig::desk();
  if (name == "plg_band") return SolverConfig::plg_band();
  bad("solver.preset must be default, desk or plg_band, got '" + name + "'");
}

std::map<std::string, std::string> class_paths(const json& j, const std::string& where, bool allow_large) {
  std::map<std::string, std::string> out;
  if (!j.is_object()) bad(where + " must be an object");
  for (auto& [key, val] : j.items()) {
    if (key != "PLG" && key != "PTN" && key != "RDN" && !(allow_large && key == "RDN_large"))
      bad("unknown key '" + key + "' in " + where);
    if (!val.is_string()) bad(where + "." + key + " must be a path");
    out[key] = val.get<std::string>();
  }
  return out;
}

}  // namespace

RunConfig run_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(j, "config", {"seed", "solver", "dataset", "model", "train", "inverse", "analytics"});
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed", "config", 0);

  if (j.contains("solver")) {
    json s = j["solver"];
    if (!s.is_object()) bad("solver must be an object");
    c.solver_preset = get<std::string>(s, "preset", "solver", "default");
    s.erase("preset");
    // Explicit keys override the preset.
    json merged = json::parse(metasurf::to_json(preset(c.solver_preset)));
    for (auto& [key, val] : s.items()) {
      if (!merged.contains(key)) bad("unknown key '" + key + "' in solver");
      merged[key] = val;
    }
    c.solver = solver_config_from_json(merged.dump());
  }

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    only_keys(d, "dataset", {"class", "n", "test_fraction", "generator"});
    c.dataset.cls = pattern_class_from_string(get<std::string>(d, "class", "dataset", "PLG"));
    c.dataset.n = get<std::size_t>(d, "n", "dataset", c.dataset.n);
    c.dataset.test_fraction = get<double>(d, "test_fraction", "dataset", c.dataset.test_fraction);
    if (d.contains("generator")) c.dataset.generator = generator_params_from_json(d["generator"].dump());
    if (c.dataset.n < 1) bad("dataset.n must be >= 1");
    if (!(c.dataset.test_fraction > 0 && c.dataset.test_fraction < 1)) bad("dataset.test_fraction must be in (0, 1)");
  }

  if (j.contains("model")) {
    json m = j["model"];
    if (!m.is_object()) bad("model must be an object");
    if (m.contains("rfr")) {
      c.model.rfr = forest_hyper_from_json(m["rfr"].dump());
      m.erase("rfr");
    }
    c.model.forward = forward_spec_from_json(m.dump());
  }

  if (j.contains("train")) c.train = train_hyper_from_json(j["train"].dump());

  if (j.contains("inverse")) {
    json v = j["inverse"];
    if (!v.is_object()) bad("inverse must be an object");
    c.inverse.candidates = get<std::size_t>(v, "candidates", "inverse", c.inverse.candidates);
    c.inverse.verify = get<bool>(v, "verify", "inverse", c.inverse.verify);
    if (v.contains("generator")) {
      const json& g = v["generator"];
      only_keys(g, "inverse.generator", {"noise_dim", "widths", "leaky_slope"});
      c.inverse.generator.noise_dim = get<int>(g, "noise_dim", "inverse.generator", c.inverse.generator.noise_dim);
      c.inverse.generator.widths = get<std::vector<int>>(g, "widths", "inverse.generator", c.inverse.generator.widths);
      c.inverse.generator.leaky_slope = get<double>(g, "leaky_slope", "inverse.generator", c.inverse.generator.leaky_slope);
    }
    if (v.contains("judge")) {
      const json& g = v["judge"];
      only_keys(g, "inverse.judge", {"widths", "leaky_slope"});
      c.inverse.judge.widths = get<std::vector<int>>(g, "widths", "inverse.judge", c.inverse.judge.widths);
      c.inverse.judge.leaky_slope = get<double>(g, "leaky_slope", "inverse.judge", c.inverse.judge.leaky_slope);
    }
    for (const char* k : {"candidates", "verify", "generator", "judge"}) v.erase(k);
    c.inverse.hyper = inverse_hyper_from_json(v.dump());
    try {
      validate(c.inverse.generator);
      validate(c.inverse.judge);
    } catch (const Error& e) {
      bad(e.what());
    }
    if (c.inverse.candidates < 1) bad("inverse.candidates must be >= 1");
  }

  if (j.contains("analytics")) {
    const json& a = j["analytics"];
    only_keys(a, "analytics", {"histogram_bins", "scaling_sizes", "crossbench"});
    c.analytics.histogram_bins = get<int>(a, "histogram_bins", "analytics", c.analytics.histogram_bins);
    c.analytics.scaling_sizes =
        get<std::vector<std::size_t>>(a, "scaling_sizes", "analytics", c.analytics.scaling_sizes);
    if (c.analytics.histogram_bins < 1) bad("analytics.histogram_bins must be >= 1");
    if (a.contains("crossbench")) {
      const json& x = a["crossbench"];
      only_keys(x, "analytics.crossbench", {"train", "val", "test", "default_train_size"});
      if (x.contains("train")) c.analytics.crossbench.train = class_paths(x["train"], "analytics.crossbench.train", true);
      if (x.contains("val")) c.analytics.crossbench.val = class_paths(x["val"], "analytics.crossbench.val", false);
      if (x.contains("test")) c.analytics.crossbench.test = class_paths(x["test"], "analytics.crossbench.test", false);
      if (x.contains("default_train_size"))
        c.analytics.crossbench.default_train_size = get<std::size_t>(x, "default_train_size", "analytics.crossbench", 0);
    }
  }
  // Seeds not given per section follow the global one.
  if (!(j.contains("train") && j["train"].contains("seed"))) c.train.seed = c.seed;
  if (!(j.contains("inverse") && j["inverse"].contains("seed"))) c.inverse.hyper.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::string to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  json s = json::parse(metasurf::to_json(c.solver));
  json solver;
  solver["preset"] = c.solver_preset;
  for (auto& [k, v] : s.items()) solver[k] = v;
  j["solver"] = solver;
  j["dataset"] = {{"class", std::string(to_string(c.dataset.cls))},
                  {"n", c.dataset.n},
                  {"test_fraction", c.dataset.test_fraction},
                  {"generator", json::parse(metasurf::to_json(c.dataset.generator))}};
  json model = json::parse(metasurf::to_json(c.model.forward));
  model["rfr"] = json::parse(metasurf::to_json(c.model.rfr));
  j["model"] = model;
  j["train"] = json::parse(metasurf::to_json(c.train));
  json inv = json::parse(metasurf::to_json(c.inverse.hyper));
  inv["candidates"] = c.inverse.candidates;
  inv["verify"] = c.inverse.verify;
  inv["generator"] = {{"noise_dim", c.inverse.generator.noise_dim},
                      {"widths", c.inverse.generator.widths},
                      {"leaky_slope", c.inverse.generator.leaky_slope}};
  inv["judge"] = {{"widths", c.inverse.judge.widths}, {"leaky_slope", c.inverse.judge.leaky_slope}};
  j["inverse"] = inv;
  json xb;
  xb["train"] = c.analytics.crossbench.train;
  xb["val"] = c.analytics.crossbench.val;
  xb["test"] = c.analytics.crossbench.test;
  if (c.analytics.crossbench.default_train_size) xb["default_train_size"] = *c.analytics.crossbench.default_train_size;
  j["analytics"] = {{"histogram_bins", c.analytics.histogram_bins},
                    {"scaling_sizes", c.analytics.scaling_sizes},
                    {"crossbench", xb}};
  return j.dump(2);
}

}  // namespace metasurf::cli
