#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metasurf/analytics.hpp"
#include "metasurf/dataset.hpp"
#include "metasurf/em_solver.hpp"
#include "metasurf/error.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/forward_model.hpp"
#include "metasurf/gradcheck.hpp"
#include "metasurf/inverse_gan.hpp"
#include "metasurf/rng.hpp"
#include "metasurf/svg.hpp"
#include "run_config.hpp"

#ifndef METASURF_VERSION
#define METASURF_VERSION "unknown"
#endif

using namespace metasurf;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Vec = std::array<double, kSpectrumBins>;

namespace {

// Thrown for missing or contradictory flags; maps to exit status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string out;
  bool json_out = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string config;
  std::string command_line;
};

// Per-run state: effective config, output directory and provenance.
class Run {
 public:
  Run(const Globals& g, const std::string& command, bool needs_out) : g_(g), command_(command) {
    cfg = g.config.empty() ? cli::RunConfig{} : cli::load_run_config(g.config);
    if (g.seed) {
      cfg.seed = *g.seed;
      cfg.train.seed = *g.seed;
      cfg.inverse.hyper.seed = *g.seed;
    }
    threads = 1;
    if (const char* env = std::getenv("METASURF_THREADS")) {
      try {
        threads = std::stoul(env);
      } catch (const std::exception&) {
        throw UsageError(std::string("METASURF_THREADS must be a positive integer, got '") + env + "'");
      }
    }
    if (g.threads) threads = *g.threads;
    if (threads < 1) throw UsageError("--threads must be >= 1");
    if (needs_out && g.out.empty()) throw UsageError(command + " needs --out DIR");
    if (!g.out.empty()) {
      out = g.out;
      fs::create_directories(out);
      std::ofstream(out / "config.json") << cli::to_json(cfg) << '\n';
    }
  }

  bool has_out() const { return !out.empty(); }

  fs::path path(const std::string& name) const { return out / name; }

  void write(const std::string& name, const std::string& text) const {
    if (!has_out()) return;
    std::ofstream f(path(name));
    f << text;
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path(name).string());
  }

  DatasetFile dataset(const std::string& label, const std::string& file) {
    DatasetFile ds = metasurf::load(file);
    inputs[label] = {{"path", file},
                     {"class", std::string(to_string(ds.cls))},
                     {"records", ds.size()},
                     {"content_fingerprint", content_fingerprint_hex(ds)},
                     {"solver_fingerprint", fingerprint_hex(ds.solver())}};
    return ds;
  }

  void record_output(const std::string& label, const DatasetFile& ds) {
    outputs[label] = {{"records", ds.size()}, {"content_fingerprint", content_fingerprint_hex(ds)}};
  }

  void finish(const json& summary) const {
    if (has_out()) {
      json m;
      m["command"] = command_;
      m["command_line"] = g_.command_line;
      m["versions"] = {{"metasurf", METASURF_VERSION},
                       {"compiler", __VERSION__},
                       {"dataset_format", 1},
                       {"cxx_standard", static_cast<long>(__cplusplus)}};
      m["seed"] = cfg.seed;
      m["threads"] = threads;
      m["inputs"] = inputs;
      m["outputs"] = outputs;
      write("manifest.json", m.dump(2) + "\n");
      write("summary.json", summary.dump(2) + "\n");
    }
    if (g_.json_out) {
      std::cout << summary.dump(2) << '\n';
    } else {
      for (auto& [k, v] : summary.items()) std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }
  }

  cli::RunConfig cfg;
  fs::path out;
  std::size_t threads = 1;
  json inputs = json::object();
  json outputs = json::object();

 private:
  const Globals& g_;
  std::string command_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Spectrum spectrum_of(const Vec& v, const std::vector<double>& freqs) {
  Spectrum s;
  s.freqs = freqs;
  s.values.assign(v.begin(), v.end());
  return s;
}

std::string errors_csv(const std::vector<double>& s) {
  std::ostringstream os;
  os.precision(17);
  os << "index,s\n";
  for (std::size_t i = 0; i < s.size(); ++i) os << i << ',' << s[i] << '\n';
  return os.str();
}

json eval_json(const EvalResult& r) { return {{"mean", r.mean}, {"median", r.median}, {"max", r.max}, {"count", r.s.size()}}; }

void write_histogram(Run& run, const std::vector<double>& s, const std::string& title) {
  const Histogram h = error_histogram(s, run.cfg.analytics.histogram_bins);
  run.write("histogram.csv", h.to_csv());
  run.write("histogram.svg", svg::bar_plot(h.edges, h.heights, {title, "s = |C_c - C_r|^2", "count / max count", true, false}));
}

PatternClass class_option(const std::string& name, PatternClass fallback) {
  return name.empty() ? fallback : pattern_class_from_string(name);
}

// ---------------------------------------------------------------- commands

void cmd_gen_pattern(const Globals& g, const std::string& cls_name, std::size_t count, std::size_t first) {
  Run run(g, "gen-pattern", false);
  const PatternClass cls = class_option(cls_name, run.cfg.dataset.cls);
  json pats = json::array();
  for (std::size_t i = first; i < first + count; ++i) {
    const std::uint64_t seed = hash64(run.cfg.seed, i);
    const Pattern p = generate_pattern(cls, seed, run.cfg.dataset.generator);
    const std::string text = to_text(p);
    if (run.has_out()) {
      char name[64];
      std::snprintf(name, sizeof name, "pattern_%04zu.txt", i);
      run.write(name, text);
    } else if (!g.json_out) {
      std::cout << text << '\n';
    }
    pats.push_back({{"index", i}, {"seed", seed}, {"fill", p.count_ones()}, {"connected", is_connected(p)},
                    {"pattern", text}});
  }
  run.finish({{"class", std::string(to_string(cls))}, {"count", count}, {"patterns", pats}});
}

void cmd_simulate(const Globals& g, const std::string& pattern_file, const std::string& cls_name, std::size_t index) {
  Run run(g, "simulate", false);
  Pattern p;
  if (!pattern_file.empty()) {
    p = pattern_from_text(read_file(pattern_file));
  } else {
    p = generate_pattern(class_option(cls_name, run.cfg.dataset.cls), hash64(run.cfg.seed, index), run.cfg.dataset.generator);
  }
  SolverStats st;
  const Spectrum s = simulate_copr(p, run.cfg.solver, &st);
  run.write("spectrum.csv", to_csv(s));
  run.write("pattern.txt", to_text(p));
  if (run.has_out()) {
    std::vector<double> ghz;
    for (double f : s.freqs) ghz.push_back(f * 1e-9);
    run.write("spectrum.svg", svg::line_plot({{"coPR", ghz, s.values}}, {"co-polarized reflectance", "frequency (GHz)", "coPR"}));
  } else if (!g.json_out) {
    std::cout << to_csv(s);
  }
  run.finish({{"solver_fingerprint", fingerprint_hex(run.cfg.solver)},
              {"steps", st.steps},
              {"residual_db", st.residual_db},
              {"seconds", st.seconds},
              {"freqs_hz", s.freqs},
              {"copr", s.values},
              {"total_reflectance", st.total_reflectance}});
}

void cmd_build_dataset(const Globals& g, const std::string& cls_name, std::optional<std::size_t> n, const std::string& name) {
  Run run(g, "build-dataset", true);
  const PatternClass cls = class_option(cls_name, run.cfg.dataset.cls);
  const std::size_t count = n.value_or(run.cfg.dataset.n);
  const DatasetFile ds = build_dataset(cls, count, run.cfg.seed, run.cfg.solver, run.threads, run.cfg.dataset.generator,
                                       [&](std::size_t done, std::size_t total) {
                                         if (done % 50 == 0 || done == total)
                                           std::fprintf(stderr, "build-dataset: %zu/%zu\n", done, total);
                                       });
  save(ds, run.path(name));
  run.record_output(name, ds);
  run.finish({{"file", run.path(name).string()},
              {"class", std::string(to_string(cls))},
              {"records", ds.size()},
              {"content_fingerprint", content_fingerprint_hex(ds)},
              {"solver_fingerprint", fingerprint_hex(run.cfg.solver)}});
}

void cmd_split(const Globals& g, const std::string& in, std::optional<double> fraction) {
  Run run(g, "split", true);
  const DatasetFile ds = run.dataset("input", in);
  const Split s = split(ds, fraction.value_or(run.cfg.dataset.test_fraction), run.cfg.seed);
  save(s.train, run.path("train.msds"));
  save(s.test, run.path("test.msds"));
  run.record_output("train.msds", s.train);
  run.record_output("test.msds", s.test);
  run.finish({{"train", s.train.size()},
              {"test", s.test.size()},
              {"train_fingerprint", content_fingerprint_hex(s.train)},
              {"test_fingerprint", content_fingerprint_hex(s.test)}});
}

void cmd_train_forward(const Globals& g, const std::string& train_file, const std::string& val_file,
                       const std::string& test_file, const std::string& arch) {
  Run run(g, "train-forward", true);
  ForwardModelSpec spec = run.cfg.model.forward;
  if (!arch.empty() && arch_from_string(arch) != spec.arch) spec = ForwardModelSpec::preset(arch_from_string(arch));
  const DatasetFile train = run.dataset("train", train_file);
  const DatasetFile val = run.dataset("val", val_file);
  auto [model, rep] = train_forward(spec, train, val, run.cfg.train, [&](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %d train %.6e val %.6e (%.1f s)\n", e.epoch, e.train_mse, e.val_mse, e.seconds);
  });
  json summary = {{"arch", std::string(to_string(spec.arch))},
                  {"param_count", model.params.param_count()},
                  {"epochs", rep.epochs.size()},
                  {"best_epoch", rep.best_epoch},
                  {"best_val_mse", rep.best_val_mse}};
  if (!test_file.empty()) {
    const DatasetFile test = run.dataset("test", test_file);
    const EvalResult r = evaluate(model, test);
    rep.has_test = true;
    rep.test_mse = r.mean;
    summary["test"] = eval_json(r);
    summary["constant_mean_test_mse"] = mean_mse(test, constant_mean_predictions(train, test));
    run.write("test_errors.csv", errors_csv(r.s));
    write_histogram(run, r.s, "test error histogram");
  }
  model.save(run.path("model"));
  run.write("report.csv", rep.to_csv());
  run.write("report.json", rep.to_json() + "\n");
  summary["checkpoint_hash"] = hex64(model.params.hash());
  run.finish(summary);
}

void cmd_evaluate(const Globals& g, const std::string& model_dir, const std::string& test_file) {
  Run run(g, "evaluate", false);
  ForwardModel model = ForwardModel::load(model_dir);
  const DatasetFile test = run.dataset("test", test_file);
  const EvalResult r = evaluate(model, test);
  run.write("errors.csv", errors_csv(r.s));
  if (run.has_out()) write_histogram(run, r.s, "error histogram");
  json summary = eval_json(r);
  summary["arch"] = std::string(to_string(model.spec.arch));
  run.finish(summary);
}

void cmd_fit_rfr(const Globals& g, const std::string& train_file, const std::string& test_file) {
  Run run(g, "fit-rfr", true);
  const DatasetFile train = run.dataset("train", train_file);
  const ForestModel m = fit_rfr(train, run.cfg.model.rfr, run.cfg.seed, run.threads);
  m.save(run.path("forest.json"));
  json summary = {{"trees", m.trees.size()}, {"hyper", json::parse(to_json(run.cfg.model.rfr))}};
  int depth = 0;
  for (const auto& t : m.trees) depth = std::max(depth, t.depth());
  summary["max_depth_reached"] = depth;
  if (!test_file.empty()) {
    const DatasetFile test = run.dataset("test", test_file);
    std::vector<double> s;
    for (const auto& x : test.samples) {
      const Vec p = predict_rfr(m, x.pattern);
      double e = 0;
      for (int k = 0; k < kSpectrumBins; ++k) e += (p[k] - x.copr[k]) * (p[k] - x.copr[k]);
      s.push_back(e / kSpectrumBins);
    }
    summary["test"] = eval_json(summarize_errors(s));
    run.write("test_errors.csv", errors_csv(s));
  }
  run.finish(summary);
}

void cmd_eval_rfr(const Globals& g, const std::string& model_file, const std::string& test_file) {
  Run run(g, "eval-rfr", false);
  const ForestModel m = ForestModel::load(model_file);
  const DatasetFile test = run.dataset("test", test_file);
  std::vector<double> s;
  for (const auto& x : test.samples) {
    const Vec p = predict_rfr(m, x.pattern);
    double e = 0;
    for (int k = 0; k < kSpectrumBins; ++k) e += (p[k] - x.copr[k]) * (p[k] - x.copr[k]);
    s.push_back(e / kSpectrumBins);
  }
  const EvalResult r = summarize_errors(s);
  run.write("errors.csv", errors_csv(r.s));
  if (run.has_out()) write_histogram(run, r.s, "RFR error histogram");
  run.finish(eval_json(r));
}

void cmd_train_inverse(const Globals& g, const std::string& evaluator_dir, const std::string& train_file,
                       const std::string& val_file) {
  Run run(g, "train-inverse", true);
  ForwardModel evaluator = ForwardModel::load(evaluator_dir);
  const DatasetFile train = run.dataset("train", train_file);
  const DatasetFile val = run.dataset("val", val_file);
  auto [gen, hist] = train_inverse(run.cfg.inverse.generator, run.cfg.inverse.judge, evaluator, train, val,
                                   run.cfg.inverse.hyper, [](const InverseEpoch& e) {
                                     std::fprintf(stderr, "epoch %d%s judge %.4f adv %.4f d %.4e val median d %.4e (%.1f s)\n",
                                                  e.epoch, e.closed_loop ? " +d" : "", e.judge_loss, e.gen_adv_loss,
                                                  e.train_d, e.val_median_d, e.seconds);
                                   });
  gen.save(run.path("generator"));
  run.write("history.csv", hist.to_csv());
  run.write("history.json", hist.to_json() + "\n");
  run.finish({{"epochs", hist.epochs.size()},
              {"best_epoch", hist.best_epoch},
              {"val_median_d_first", hist.epochs.front().val_median_d},
              {"val_median_d_best", hist.epochs[hist.best_epoch - 1].val_median_d},
              {"evaluator_hash_before", hex64(hist.evaluator_hash_before)},
              {"evaluator_hash_after", hex64(hist.evaluator_hash_after)}});
}

void cmd_inverse_design(const Globals& g, const std::string& gen_dir, const std::string& evaluator_dir,
                        const std::string& target_file, std::optional<std::size_t> candidates, bool verify) {
  Run run(g, "inverse-design", true);
  Generator gen = Generator::load(gen_dir);
  ForwardModel evaluator = ForwardModel::load(evaluator_dir);
  const Spectrum target = spectrum_from_csv(read_file(target_file));
  const bool do_verify = verify || run.cfg.inverse.verify;
  const InverseResult r = inverse_design(target, gen, evaluator, candidates.value_or(run.cfg.inverse.candidates), do_verify,
                                         run.cfg.solver, run.cfg.seed);
  if (r.distinct_candidates < 2 && candidates.value_or(run.cfg.inverse.candidates) >= 32)
    std::fprintf(stderr, "warning: all candidates binarize to one pattern (mode collapse)\n");
  run.write("result.json", r.to_json() + "\n");
  run.write("pattern.txt", to_text(r.pattern));
  run.write("target.csv", to_csv(target));
  run.write("c_g.csv", to_csv(spectrum_of(r.c_g, target.freqs)));
  std::vector<svg::Series> series{{"target C_r", {}, target.values}, {"predicted C_g", {}, {r.c_g.begin(), r.c_g.end()}}};
  if (r.c_p) {
    run.write("c_p.csv", to_csv(spectrum_of(*r.c_p, target.freqs)));
    series.push_back({"simulated C_p", {}, {r.c_p->begin(), r.c_p->end()}});
  }
  for (auto& s : series)
    for (double f : target.freqs) s.x.push_back(f * 1e-9);
  run.write("spectra.svg", svg::line_plot(series, {"inverse design", "frequency (GHz)", "coPR"}));
  json summary = {{"d", r.d}, {"chosen_candidate", r.chosen}, {"distinct_candidates", r.distinct_candidates}};
  summary["e"] = r.e ? json(*r.e) : json(nullptr);
  summary["b"] = r.b ? json(*r.b) : json(nullptr);
  summary["pattern"] = to_text(r.pattern);
  run.finish(summary);
}

void cmd_crossbench(const Globals& g) {
  Run run(g, "crossbench", true);
  const auto& xb = run.cfg.analytics.crossbench;
  const PatternClass classes[3] = {PatternClass::PLG, PatternClass::PTN, PatternClass::RDN};
  for (const char* c : {"PLG", "PTN", "RDN"}) {
    if (!xb.train.count(c) || !xb.test.count(c) || !xb.val.count(c))
      throw UsageError(std::string("crossbench needs analytics.crossbench.{train,val,test}.") + c + " in --config");
  }
  std::map<std::string, DatasetFile> train, val, test;
  for (PatternClass cls : classes) {
    const std::string c(to_string(cls));
    train[c] = run.dataset("train_" + c, xb.train.at(c));
    val[c] = run.dataset("val_" + c, xb.val.at(c));
    test[c] = run.dataset("test_" + c, xb.test.at(c));
    if (xb.default_train_size) train[c] = head(train[c], *xb.default_train_size);
  }
  DatasetFile rdn_large = xb.train.count("RDN_large") ? run.dataset("train_RDN_large", xb.train.at("RDN_large"))
                                                      : run.dataset("train_RDN_large", xb.train.at("RDN"));

  std::vector<std::unique_ptr<ForestModel>> forests;
  std::vector<std::unique_ptr<ForwardModel>> nets;
  std::vector<BenchModel> rows;
  auto cnn = [&](const std::string& name, PatternClass cls, Arch arch, const DatasetFile& tr, std::uint64_t salt) {
    std::fprintf(stderr, "crossbench: training %s on %zu samples\n", name.c_str(), tr.size());
    TrainHyper h = run.cfg.train;
    h.seed = hash64(run.cfg.seed, salt);
    auto [m, rep] = train_forward(ForwardModelSpec::preset(arch), tr, val[std::string(to_string(cls))], h);
    nets.push_back(std::make_unique<ForwardModel>(std::move(m)));
    rows.push_back(bench_model(name, cls, *nets.back(), tr));
  };
  for (PatternClass cls : classes) {
    const std::string c(to_string(cls));
    forests.push_back(std::make_unique<ForestModel>(
        fit_rfr(train[c], run.cfg.model.rfr, hash64(run.cfg.seed, 100 + static_cast<int>(cls)), run.threads)));
    rows.push_back(bench_model(c + "_RFR", cls, *forests.back(), train[c]));
  }
  for (PatternClass cls : classes)
    cnn(std::string(to_string(cls)) + "_Resnet18S", cls, Arch::Resnet18S, train[std::string(to_string(cls))],
        200 + static_cast<int>(cls));
  cnn("PTN_Resnet34S", PatternClass::PTN, Arch::Resnet34S, train["PTN"], 300);
  cnn("RDN_ResNa", PatternClass::RDN, Arch::ResNa, train["RDN"], 301);
  cnn("RDN" + std::to_string(rdn_large.size()) + "_Resnet18S", PatternClass::RDN, Arch::Resnet18S, rdn_large, 302);

  std::vector<TestSet> tests;
  for (PatternClass cls : classes) tests.push_back({std::string(to_string(cls)), cls, &test[std::string(to_string(cls))]});
  const CrossBenchMatrix m = cross_benchmark(rows, tests);
  run.write("crossbench.csv", m.to_csv());
  run.write("crossbench.txt", m.report());
  if (!g.json_out) std::cout << m.report();
  json in_domain = json::object();
  int default_hits = 0;
  for (std::size_t r = 3; r < m.rows.size(); ++r) {
    const bool hit = m.in_domain_is_row_min(r).value_or(false);
    in_domain[m.rows[r].name] = hit;
    if (r < 6) default_hits += hit;
  }
  json matrix = json::array();
  for (std::size_t r = 0; r < m.rows.size(); ++r) matrix.push_back({{"model", m.rows[r].name}, {"mse", m.mse[r]}});
  run.finish({{"columns", m.cols},
              {"matrix", matrix},
              {"in_domain_row_min", in_domain},
              {"default_cnn_in_domain_hits", default_hits},
              {"warnings", m.warnings}});
}

void cmd_scaling_study(const Globals& g, const std::string& pool_file, const std::string& val_file,
                       const std::vector<std::string>& test_specs) {
  Run run(g, "scaling-study", true);
  const DatasetFile pool = run.dataset("pool", pool_file);
  const DatasetFile val = run.dataset("val", val_file);
  std::vector<std::unique_ptr<DatasetFile>> owned;
  std::vector<TestSet> tests;
  for (const auto& spec : test_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--test expects NAME=FILE, got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    owned.push_back(std::make_unique<DatasetFile>(run.dataset("test_" + name, spec.substr(eq + 1))));
    tests.push_back({name, owned.back()->cls, owned.back().get()});
  }
  if (tests.empty()) throw UsageError("scaling-study needs at least one --test NAME=FILE");
  const ScalingTable t = scaling_study(pool, run.cfg.analytics.scaling_sizes, val, tests, run.cfg.model.forward, run.cfg.train);
  run.write("scaling.csv", t.to_csv());
  std::vector<svg::Series> series;
  for (std::size_t c = 0; c < t.cols.size(); ++c) {
    svg::Series s{t.cols[c], {}, {}};
    for (const auto& r : t.rows) {
      s.x.push_back(static_cast<double>(r.size));
      s.y.push_back(r.mse[c]);
    }
    series.push_back(s);
  }
  run.write("scaling.svg", svg::line_plot(series, {"test MSE vs training size", "training samples", "test MSE", false, true}));
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back({{"size", r.size}, {"best_epoch", r.best_epoch}, {"mse", r.mse}});
  run.finish({{"columns", t.cols}, {"rows", rows}});
}

void cmd_stats(const Globals& g, const std::vector<std::string>& files) {
  Run run(g, "stats", false);
  std::vector<Spectrum> spectra;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const DatasetFile ds = run.dataset("input_" + std::to_string(i), files[i]);
    for (std::size_t k = 0; k < ds.size(); ++k) spectra.push_back(ds.spectrum(k));
  }
  const BinStats st = bin_stats(spectra);
  run.write("bin_stats.csv", st.to_csv());
  if (!run.has_out() && !g.json_out) std::cout << st.to_csv();
  if (run.has_out()) {
    std::vector<double> ghz, kurt_f, kurt;
    for (std::size_t k = 0; k < st.freqs.size(); ++k) {
      ghz.push_back(st.freqs[k] * 1e-9);
      if (st.kurtosis[k]) {
        kurt_f.push_back(st.freqs[k] * 1e-9);
        kurt.push_back(*st.kurtosis[k]);
      }
    }
    run.write("mean_variance.svg", svg::line_plot({{"mean of 1 - coPR", ghz, st.mean}, {"variance of 1 - coPR", ghz, st.variance}},
                                                  {"per-bin statistics", "frequency (GHz)", "value"}));
    if (!kurt.empty()) {
      std::vector<double> edges;
      const double half = kurt_f.size() > 1 ? 0.5 * (kurt_f[1] - kurt_f[0]) : 0.1;
      for (double f : kurt_f) edges.push_back(f - half);
      edges.push_back(kurt_f.back() + half);
      run.write("kurtosis.svg", svg::bar_plot(edges, kurt, {"Pearson kurtosis of 1 - coPR", "frequency (GHz)", "kurtosis"}));
    }
  }
  json kurt = json::array();
  for (const auto& k : st.kurtosis) kurt.push_back(k ? json(*k) : json(nullptr));
  run.finish({{"count", st.count}, {"freqs_hz", st.freqs}, {"mean", st.mean}, {"variance", st.variance}, {"kurtosis", kurt}});
}

int cmd_gradcheck(const Globals& g) {
  Run run(g, "gradcheck", false);
  const ad::GradCheckReport rep = ad::run_gradcheck(run.cfg.seed);
  run.write("gradcheck.json", rep.to_json() + "\n");
  if (!g.json_out) std::cout << rep.to_text();
  const json j = json::parse(rep.to_json());
  if (g.json_out) std::cout << j.dump(2) << '\n';
  if (run.has_out()) {
    json m = {{"command", "gradcheck"}, {"versions", {{"metasurf", METASURF_VERSION}, {"compiler", __VERSION__}}},
              {"seed", run.cfg.seed}};
    run.write("manifest.json", m.dump(2) + "\n");
  }
  if (!rep.all_pass()) throw Error(ErrorKind::MissingGrad, "gradient check failed for at least one op");
  return 0;
}

void cmd_solver_verify(const Globals& g, int n_patterns, const std::vector<std::string>& checks) {
  Run run(g, "solver-verify", false);
  auto wanted = [&](const std::string& c) { return checks.empty() || std::find(checks.begin(), checks.end(), c) != checks.end(); };
  json results = json::array();
  bool all = true;
  auto add = [&](const std::string& name, double value, double tol, bool pass, const std::string& what) {
    results.push_back({{"check", name}, {"value", value}, {"tolerance", tol}, {"pass", pass}, {"detail", what}});
    all = all && pass;
  };
  const SolverConfig& cfg = run.cfg.solver;
  if (wanted("slab")) {
    SolverStats st;
    const Spectrum s = simulate_copr(Pattern::zeros(), cfg, &st);
    double worst = 0;
    for (std::size_t k = 0; k < s.size(); ++k) worst = std::max(worst, std::abs(s.values[k] - analytic_slab_copr(s.freqs[k], cfg)));
    add("slab", worst, 0.02, worst <= 0.02 && st.seconds < 60, "empty pattern vs analytic grounded slab, max abs deviation");
  }
  // Lossless cells hold weakly radiating modes with an energy floor near
  // -52 dB, so their ring-down stops at -50 dB.
  SolverConfig lossless = cfg;
  lossless.substrate_loss_tangent = 0;
  lossless.decay_db = std::max(lossless.decay_db, -50.0);
  if (wanted("ones")) {
    const Spectrum s = simulate_copr(Pattern::ones(), lossless);
    const double lo = *std::min_element(s.values.begin(), s.values.end());
    add("ones", lo, 0.99, lo >= 0.99, "all-ones pattern, lossless, minimum coPR");
  }
  if (wanted("lossless")) {
    double worst = 0, worst_total = 0;
    for (int i = 0; i < n_patterns; ++i) {
      SolverStats st;
      const Spectrum s = simulate_copr(gen_rdn(hash64(run.cfg.seed, i)), lossless, &st);
      for (double v : s.values) worst = std::max(worst, std::abs(v - 1.0));
      for (double v : st.total_reflectance) worst_total = std::max(worst_total, std::abs(v - 1.0));
    }
    add("lossless", worst, 0.02, worst <= 0.02, "random RDN, lossless, max |coPR - 1|");
    add("lossless_total", worst_total, 0.02, worst_total <= 0.02, "random RDN, lossless, max |co + cross - 1|");
  }
  if (wanted("symmetry")) {
    double worst = 0;
    for (PatternClass cls : {PatternClass::PLG, PatternClass::PTN, PatternClass::RDN})
      for (int i = 0; i < n_patterns; ++i) {
        const Pattern p = generate_pattern(cls, hash64(run.cfg.seed + 1, i), run.cfg.dataset.generator);
        const Spectrum a = simulate_copr(p, cfg);
        for (const Pattern& q : {mirror_x(p), mirror_y(p), rot180(p)}) {
          const Spectrum b = simulate_copr(q, cfg);
          for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a.values[k] - b.values[k]));
        }
      }
    add("symmetry", worst, 1e-3, worst <= 1e-3, "mirror and rot180, max per-bin difference");
  }
  run.write("solver_verify.json", json({{"all_pass", all}, {"checks", results}}).dump(2) + "\n");
  run.finish({{"all_pass", all}, {"checks", results}});
  if (!all) throw Error(ErrorKind::Nonconvergence, "at least one solver check failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metasurf: metasurface pattern generation, simulation, learning and analysis"};
  app.set_version_flag("--version", METASURF_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  for (int i = 0; i < argc; ++i) g.command_line += (i ? " " : "") + std::string(argv[i]);
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--out", g.out, "Output directory (created if missing)");
  app.add_flag("--json", g.json_out, "Print a machine-readable JSON summary on stdout");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed; overrides config seed, train.seed and inverse.seed");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads for sample/tree parallelism (default: "
                                                           "$METASURF_THREADS, else 1); results do not depend on it");
  app.add_option("--config", g.config, "RunConfig JSON file (see docs/run_config.schema.json)")->check(CLI::ExistingFile);

  std::string cls, pattern_file, in_file, train_file, val_file, test_file, model_path, arch, gen_dir, target_file, name = "dataset.msds";
  std::size_t count = 1, first = 0, index = 0;
  std::optional<std::size_t> n, candidates;
  std::optional<double> fraction;
  bool verify = false;
  int n_patterns = 2;
  std::vector<std::string> files, tests, checks;

  auto* gen_pattern = app.add_subcommand("gen-pattern", "Generate patterns of one class");
  gen_pattern->add_option("--class", cls, "PLG, PTN or RDN (default: dataset.class)");
  gen_pattern->add_option("--count", count, "Number of patterns")->check(CLI::PositiveNumber);
  gen_pattern->add_option("--first", first, "Index of the first pattern");

  auto* simulate = app.add_subcommand("simulate", "Simulate the coPR spectrum of one pattern");
  auto* pat_opt = simulate->add_option("--pattern", pattern_file, "Pattern text file (16 lines of 0/1)")->check(CLI::ExistingFile);
  simulate->add_option("--class", cls, "Generate the pattern instead")->excludes(pat_opt);
  simulate->add_option("--index", index, "Pattern index for --class");

  auto* build = app.add_subcommand("build-dataset", "Generate patterns and simulate them into an .msds file");
  build->add_option("--class", cls, "PLG, PTN or RDN (default: dataset.class)");
  build->add_option("--n", n, "Number of samples (default: dataset.n)")->check(CLI::PositiveNumber);
  build->add_option("--name", name, "Output file name inside --out");

  auto* split_cmd = app.add_subcommand("split", "Split a dataset into train.msds and test.msds");
  split_cmd->add_option("--in", in_file, "Input .msds")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--test-fraction", fraction, "Test fraction (default: dataset.test_fraction)");

  auto* train_fwd = app.add_subcommand("train-forward", "Train a forward model");
  train_fwd->add_option("--train", train_file, "Training .msds")->required()->check(CLI::ExistingFile);
  train_fwd->add_option("--val", val_file, "Validation .msds for early stopping")->required()->check(CLI::ExistingFile);
  train_fwd->add_option("--test", test_file, "Optional test .msds")->check(CLI::ExistingFile);
  train_fwd->add_option("--arch", arch, "Resnet18S, Resnet34S or ResNa (default: model.arch)");

  auto* fit = app.add_subcommand("fit-rfr", "Fit the random-forest baseline");
  fit->add_option("--train", train_file, "Training .msds")->required()->check(CLI::ExistingFile);
  fit->add_option("--test", test_file, "Optional test .msds")->check(CLI::ExistingFile);

  auto* eval_rfr = app.add_subcommand("eval-rfr", "Evaluate a fitted forest on a test set");
  eval_rfr->add_option("--model", model_path, "forest.json")->required()->check(CLI::ExistingFile);
  eval_rfr->add_option("--test", test_file, "Test .msds")->required()->check(CLI::ExistingFile);

  auto* train_inv = app.add_subcommand("train-inverse", "Train the generator and judge against a frozen evaluator");
  train_inv->add_option("--evaluator", model_path, "Forward-model checkpoint directory")->required()->check(CLI::ExistingDirectory);
  train_inv->add_option("--train", train_file, "Training .msds")->required()->check(CLI::ExistingFile);
  train_inv->add_option("--val", val_file, "Held-out targets .msds")->required()->check(CLI::ExistingFile);

  auto* inv = app.add_subcommand("inverse-design", "Design a pattern for a target spectrum");
  inv->add_option("--generator", gen_dir, "Generator checkpoint directory")->required()->check(CLI::ExistingDirectory);
  inv->add_option("--evaluator", model_path, "Forward-model checkpoint directory")->required()->check(CLI::ExistingDirectory);
  inv->add_option("--target", target_file, "Target spectrum CSV (freq_hz,copr)")->required()->check(CLI::ExistingFile);
  inv->add_option("--candidates", candidates, "Noise draws (default: inverse.candidates)")->check(CLI::PositiveNumber);
  inv->add_flag("--verify", verify, "Simulate the chosen pattern and report e and b");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a forward model on a test set");
  eval->add_option("--model", model_path, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--test", test_file, "Test .msds")->required()->check(CLI::ExistingFile);

  auto* cross = app.add_subcommand("crossbench", "Train the 9-row model set and evaluate it on every test class");
  auto* scaling = app.add_subcommand("scaling-study", "Test MSE as a function of training-set size");
  scaling->add_option("--pool", train_file, "Training pool .msds")->required()->check(CLI::ExistingFile);
  scaling->add_option("--val", val_file, "Validation .msds")->required()->check(CLI::ExistingFile);
  scaling->add_option("--test", tests, "Test set as NAME=FILE (repeatable)")->required();

  auto* stats = app.add_subcommand("stats", "Per-bin mean, variance and kurtosis of 1 - coPR");
  stats->add_option("--in", files, "Input .msds files (repeatable)")->required()->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op");
  auto* verify_cmd = app.add_subcommand("solver-verify", "Run the solver oracle checks");
  verify_cmd->add_option("--patterns", n_patterns, "Random patterns per lossless/symmetry check")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--checks", checks, "Subset of slab, ones, lossless, symmetry")
      ->check(CLI::IsMember({"slab", "ones", "lossless", "symmetry"}))
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count()) g.seed = seed;
  if (threads_opt->count()) g.threads = threads;

  try {
    if (gen_pattern->parsed()) cmd_gen_pattern(g, cls, count, first);
    else if (simulate->parsed()) cmd_simulate(g, pattern_file, cls, index);
    else if (build->parsed()) cmd_build_dataset(g, cls, n, name);
    else if (split_cmd->parsed()) cmd_split(g, in_file, fraction);
    else if (train_fwd->parsed()) cmd_train_forward(g, train_file, val_file, test_file, arch);
    else if (fit->parsed()) cmd_fit_rfr(g, train_file, test_file);
    else if (eval_rfr->parsed()) cmd_eval_rfr(g, model_path, test_file);
    else if (train_inv->parsed()) cmd_train_inverse(g, model_path, train_file, val_file);
    else if (inv->parsed()) cmd_inverse_design(g, gen_dir, model_path, target_file, candidates, verify);
    else if (eval->parsed()) cmd_evaluate(g, model_path, test_file);
    else if (cross->parsed()) cmd_crossbench(g);
    else if (scaling->parsed()) cmd_scaling_study(g, train_file, val_file, tests);
    else if (stats->parsed()) cmd_stats(g, files);
    else if (grad->parsed()) cmd_gradcheck(g);
    else if (verify_cmd->parsed()) cmd_solver_verify(g, n_patterns, checks);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::InvalidConfig ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
