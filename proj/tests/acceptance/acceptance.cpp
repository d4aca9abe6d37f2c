// Acceptance run: one PASS/FAIL line per criterion at the stated tolerances.
// Solver datasets are cached by (class, size, seed, solver fingerprint);
// everything downstream of the data is recomputed on every run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metasurf/analytics.hpp"
#include "metasurf/dataset.hpp"
#include "metasurf/em_solver.hpp"
#include "metasurf/error.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/forward_model.hpp"
#include "metasurf/gradcheck.hpp"
#include "metasurf/inverse_gan.hpp"
#include "metasurf/rng.hpp"

using namespace metasurf;
namespace fs = std::filesystem;
using Vec = std::array<double, kSpectrumBins>;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_cache;
fs::path g_out;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

double msd(const Vec& a, const std::vector<double>& b) {
  double s = 0;
  for (int k = 0; k < kSpectrumBins; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s / kSpectrumBins;
}

Vec to_vec(const Sample& s) {
  Vec v;
  std::copy(s.copr.begin(), s.copr.end(), v.begin());
  return v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- data

DatasetFile cached(PatternClass cls, std::size_t n, std::uint64_t seed) {
  const SolverConfig cfg = SolverConfig::desk();
  const std::string name = std::string(to_string(cls)) + "-" + std::to_string(n) + "-" + std::to_string(seed) + "-" +
                           fingerprint_hex(cfg) + ".msds";
  const fs::path path = g_cache / name;
  if (fs::exists(path)) {
    try {
      DatasetFile ds = load(path);
      if (ds.size() == n && ds.cls == cls && ds.solver_fingerprint() == fingerprint(cfg)) return ds;
      note("cache entry " + name + " does not match; rebuilding");
    } catch (const Error& e) {
      note("cache entry " + name + " unreadable (" + e.what() + "); rebuilding");
    }
  }
  note("building " + name + " with the solver");
  const auto t0 = Clock::now();
  DatasetFile ds = build_dataset(cls, n, seed, cfg, 1, GeneratorParams{}, [&](std::size_t done, std::size_t total) {
    if (done % 200 == 0 || done == total) note(fmt("  %zu/%zu (%.0f s)", done, total, since(t0)));
  });
  fs::create_directories(g_cache);
  save(ds, path.string() + ".tmp");
  fs::rename(path.string() + ".tmp", path);
  return ds;
}

// Desk-scale corpora. Each class has a train/test split from one build and a
// separate validation build used only for early stopping.
struct Corpus {
  DatasetFile train, test, val;
};

Corpus& corpus(PatternClass cls) {
  static std::map<PatternClass, Corpus> cache;
  auto it = cache.find(cls);
  if (it != cache.end()) return it->second;
  Corpus c;
  if (cls == PatternClass::PLG) {
    Split s = split(cached(cls, 2200, 101), 200.0 / 2200.0, 11);
    c = {std::move(s.train), std::move(s.test), cached(cls, 200, 104)};
  } else if (cls == PatternClass::PTN) {
    Split s = split(cached(cls, 600, 102), 100.0 / 600.0, 12);
    c = {std::move(s.train), std::move(s.test), cached(cls, 100, 105)};
  } else {
    Split s = split(cached(cls, 1100, 103), 100.0 / 1100.0, 13);
    c = {std::move(s.train), std::move(s.test), cached(cls, 100, 106)};
  }
  return cache.emplace(cls, std::move(c)).first->second;
}

// ---------------------------------------------------------------- models

TrainHyper desk_hyper(std::uint64_t seed) {
  TrainHyper h;
  h.lr = 1e-3;
  h.batch = 64;
  h.max_epochs = 40;
  h.patience = 8;
  h.seed = seed;
  return h;
}

struct Trained {
  ForwardModel model;
  TrainReport report;
};

std::unique_ptr<Trained> train_logged(const std::string& label, Arch arch, const DatasetFile& train,
                                      const DatasetFile& val, const TrainHyper& h) {
  const auto t0 = Clock::now();
  auto [m, rep] = train_forward(ForwardModelSpec::preset(arch), train, val, h, [&](const EpochRecord& e) {
    if (e.epoch % 5 == 0) note(fmt("  %s epoch %d train %.3e val %.3e", label.c_str(), e.epoch, e.train_mse, e.val_mse));
  });
  note(fmt("%s: %zu train samples, best epoch %d of %zu, val %.4e, %.0f s", label.c_str(), train.size(),
           rep.best_epoch, rep.epochs.size(), rep.best_val_mse, since(t0)));
  return std::make_unique<Trained>(Trained{std::move(m), std::move(rep)});
}

Trained& plg_cnn() {
  static std::unique_ptr<Trained> t;
  if (!t) {
    Corpus& c = corpus(PatternClass::PLG);
    t = train_logged("PLG Resnet18S", Arch::Resnet18S, c.train, c.val, desk_hyper(601));
  }
  return *t;
}

// ---------------------------------------------------------------- criteria

Outcome c1_solver_oracle() {
  const SolverConfig cfg;
  SolverStats st;
  const Spectrum s = simulate_copr(Pattern::zeros(), cfg, &st);
  double worst = 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    worst = std::max(worst, std::abs(s.values[k] - analytic_slab_copr(s.freqs[k], cfg)));
  const bool ok = s.size() == 32 && worst <= 0.02 && st.seconds < 60.0;
  return {ok, fmt("empty pattern, default grid, %zu bins: max |coPR - analytic| = %.5f (<= 0.02), runtime %.2f s (< 60 s)",
                  s.size(), worst, st.seconds)};
}

Outcome c2_conservation() {
  // Lossless cells hold weakly radiating modes whose energy floor sits near
  // -52 dB, so the ring-down stops at -50 dB.
  SolverConfig cfg = SolverConfig::desk();
  cfg.substrate_loss_tangent = 0.0;
  cfg.decay_db = -50.0;
  double worst = 0, worst_total = 0;
  for (int i = 0; i < 20; ++i) {
    SolverStats st;
    const Spectrum s = simulate_copr(gen_rdn(hash64(2002, i)), cfg, &st);
    double w = 0;
    for (double v : s.values) w = std::max(w, std::abs(v - 1.0));
    for (double v : st.total_reflectance) worst_total = std::max(worst_total, std::abs(v - 1.0));
    worst = std::max(worst, w);
    note(fmt("  RDN %2d lossless: max |coPR - 1| = %.4f", i, w));
  }
  const Spectrum ones = simulate_copr(Pattern::ones(), cfg);
  const double ones_min = *std::min_element(ones.values.begin(), ones.values.end());
  const bool ok = worst <= 0.02 && ones_min >= 0.99;
  return {ok, fmt("lossless desk grid (-50 dB stop): 20 RDN max |coPR - 1| = %.4f (<= 0.02); all-ones min coPR = %.4f (>= 0.99); "
                  "co+cross max |R - 1| = %.4f",
                  worst, ones_min, worst_total)};
}

Outcome c3_symmetry() {
  const SolverConfig cfg = SolverConfig::desk();
  double worst = 0;
  for (PatternClass cls : {PatternClass::PLG, PatternClass::PTN, PatternClass::RDN}) {
    double cls_worst = 0;
    for (int i = 0; i < 10; ++i) {
      const Pattern p = generate_pattern(cls, hash64(3003 + static_cast<int>(cls), i), GeneratorParams{});
      const Spectrum a = simulate_copr(p, cfg);
      for (const Pattern& q : {mirror_x(p), mirror_y(p), rot180(p)}) {
        const Spectrum b = simulate_copr(q, cfg);
        for (std::size_t k = 0; k < a.size(); ++k) cls_worst = std::max(cls_worst, std::abs(a.values[k] - b.values[k]));
      }
    }
    note(fmt("  %s: max per-bin difference %.2e over 10 patterns x {mirror_x, mirror_y, rot180}",
             std::string(to_string(cls)).c_str(), cls_worst));
    worst = std::max(worst, cls_worst);
  }
  return {worst <= 1e-3, fmt("desk grid, 30 patterns: max |coPR(p) - coPR(T p)| = %.2e (<= 1e-3)", worst)};
}

Outcome c4_autodiff() {
  const ad::GradCheckReport rep = ad::run_gradcheck(4004, 1e-4, 1e-10);
  double fd = 0, adj = 0;
  int fails = 0;
  for (const auto& e : rep.entries) {
    double& worst = e.kind == "fd" ? fd : adj;
    worst = std::max(worst, e.error);
    if (!e.pass()) {
      ++fails;
      note("  failed: " + e.op + fmt(" error %.3e", e.error));
    }
  }
  return {rep.all_pass(), fmt("%zu checks: worst FD relative error %.2e (<= 1e-4), worst adjoint gap %.2e (<= 1e-10), %d failing",
                              rep.entries.size(), fd, adj, fails)};
}

Outcome c5_capacity() {
  const DatasetFile few = head(corpus(PatternClass::PLG).train, 64);
  bool ok = true;
  std::string detail = "64 PLG samples:";
  for (Arch a : {Arch::Resnet18S, Arch::Resnet34S, Arch::ResNa}) {
    TrainHyper h;
    h.lr = 1e-3;
    h.batch = 16;
    h.max_epochs = 150;
    h.patience = 150;
    h.seed = 505;
    const auto t0 = Clock::now();
    auto [m, rep] = train_forward(ForwardModelSpec::preset(a), few, few, h);
    const double mse = evaluate(m, few).mean;
    note(fmt("  %s: train MSE %.3e after %zu epochs (%.0f s)", std::string(to_string(a)).c_str(), mse,
             rep.epochs.size(), since(t0)));
    ok = ok && mse < 1e-3;
    detail += fmt(" %s %.2e", std::string(to_string(a)).c_str(), mse);
  }
  return {ok, detail + " (each < 1e-3)"};
}

Outcome c6_generalization() {
  Corpus& c = corpus(PatternClass::PLG);
  Trained& t = plg_cnn();
  const double cnn = evaluate(t.model, c.test).mean;
  const double base = mean_mse(c.test, constant_mean_predictions(c.train, c.test));
  return {cnn <= base / 3.0, fmt("PLG %zu train / %zu test: Resnet18S test MSE %.4e, constant-mean MSE %.4e, ratio %.3f (<= 1/3)",
                                 c.train.size(), c.test.size(), cnn, base, cnn / base)};
}

ForestHyper desk_forest() { return ForestHyper{}; }

Outcome c7_baseline() {
  Corpus& c = corpus(PatternClass::PLG);
  const double cnn = evaluate(plg_cnn().model, c.test).mean;
  const auto t0 = Clock::now();
  const ForestModel f = fit_rfr(c.train, desk_forest(), 707);
  std::vector<Vec> pred;
  for (const auto& s : c.test.samples) pred.push_back(predict_rfr(f, s.pattern));
  const double rfr = mean_mse(c.test, pred);
  note(fmt("  RFR fit %.0f s", since(t0)));
  return {cnn < rfr, fmt("PLG test MSE: CNN %.4e < RFR %.4e", cnn, rfr)};
}

Outcome c8_crossbench() {
  const PatternClass classes[3] = {PatternClass::PLG, PatternClass::PTN, PatternClass::RDN};
  std::vector<std::unique_ptr<ForestModel>> forests;
  std::vector<std::unique_ptr<Trained>> owned;
  std::vector<BenchModel> rows;
  auto train_set = [](PatternClass cls) {
    Corpus& c = corpus(cls);
    return cls == PatternClass::RDN ? head(c.train, 500) : c.train;
  };
  for (PatternClass cls : classes) {
    const DatasetFile tr = train_set(cls);
    forests.push_back(std::make_unique<ForestModel>(fit_rfr(tr, desk_forest(), 800 + static_cast<int>(cls))));
    rows.push_back(bench_model(std::string(to_string(cls)) + "_RFR", cls, *forests.back(), tr));
  }
  for (PatternClass cls : classes) {
    const std::string name = std::string(to_string(cls)) + "_Resnet18S";
    if (cls == PatternClass::PLG) {
      rows.push_back(bench_model(name, cls, plg_cnn().model, corpus(cls).train));
      continue;
    }
    const DatasetFile tr = train_set(cls);
    owned.push_back(train_logged(name, Arch::Resnet18S, tr, corpus(cls).val, desk_hyper(810 + static_cast<int>(cls))));
    rows.push_back(bench_model(name, cls, owned.back()->model, tr));
  }
  const std::size_t first_default_cnn = 3;
  {
    const DatasetFile tr = train_set(PatternClass::PTN);
    owned.push_back(train_logged("PTN_Resnet34S", Arch::Resnet34S, tr, corpus(PatternClass::PTN).val, desk_hyper(820)));
    rows.push_back(bench_model("PTN_Resnet34S", PatternClass::PTN, owned.back()->model, tr));
  }
  {
    const DatasetFile tr = train_set(PatternClass::RDN);
    owned.push_back(train_logged("RDN_ResNa", Arch::ResNa, tr, corpus(PatternClass::RDN).val, desk_hyper(830)));
    rows.push_back(bench_model("RDN_ResNa", PatternClass::RDN, owned.back()->model, tr));
  }
  {
    const DatasetFile& tr = corpus(PatternClass::RDN).train;
    owned.push_back(train_logged("RDN1000_Resnet18S", Arch::Resnet18S, tr, corpus(PatternClass::RDN).val, desk_hyper(840)));
    rows.push_back(bench_model("RDN1000_Resnet18S", PatternClass::RDN, owned.back()->model, tr));
  }
  std::vector<TestSet> tests;
  for (PatternClass cls : classes) tests.push_back({std::string(to_string(cls)), cls, &corpus(cls).test});
  const CrossBenchMatrix m = cross_benchmark(rows, tests);
  fs::create_directories(g_out);
  std::ofstream(g_out / "crossbench.csv") << m.to_csv();
  std::ofstream(g_out / "crossbench.txt") << m.report();
  std::istringstream report(m.report());
  for (std::string line; std::getline(report, line);) note(line);

  int hits = 0;
  for (std::size_t r = first_default_cnn; r < first_default_cnn + 3; ++r) hits += m.in_domain_is_row_min(r).value_or(false);
  int all_cnn = 0;
  for (std::size_t r = first_default_cnn; r < rows.size(); ++r) all_cnn += m.in_domain_is_row_min(r).value_or(false);
  return {hits >= 2, fmt("9x3 matrix written to %s; in-domain row minimum in %d of 3 default-CNN rows (>= 2), "
                         "%d of %zu CNN rows overall",
                         (g_out / "crossbench.csv").c_str(), hits, all_cnn, rows.size() - first_default_cnn)};
}

// Brute-force central moments in long double, two passes per bin.
Outcome c9_statistics() {
  const DatasetFile& ds = corpus(PatternClass::PLG).train;
  const BinStats st = bin_stats(ds);
  double worst = 0;
  for (int k = 0; k < kSpectrumBins; ++k) {
    long double s = 0;
    for (const auto& x : ds.samples) s += 1.0L - static_cast<long double>(static_cast<double>(x.copr[k]));
    const long double m = s / ds.size();
    long double m2 = 0, m4 = 0;
    for (const auto& x : ds.samples) {
      const long double d = 1.0L - static_cast<long double>(static_cast<double>(x.copr[k])) - m;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    m2 /= ds.size();
    m4 /= ds.size();
    worst = std::max({worst, std::abs(st.mean[k] - static_cast<double>(m)), std::abs(st.variance[k] - static_cast<double>(m2)),
                      st.kurtosis[k] ? std::abs(*st.kurtosis[k] - static_cast<double>(m4 / (m2 * m2))) : 1.0});
  }
  std::mt19937_64 gen(9009);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Spectrum> draws(1000000);
  for (auto& sp : draws) {
    sp.freqs = {1e9};
    sp.values = {normal(gen)};
  }
  const double kurt = bin_stats(draws).kurtosis[0].value_or(0.0);
  Spectrum lo, hi;
  lo.freqs = hi.freqs = {1e9};
  lo.values = {0.0};
  hi.values = {1.0};
  const BinStats two = bin_stats(std::vector<Spectrum>{lo, hi});
  const bool exact = two.mean[0] == 0.5 && two.variance[0] == 0.25 && two.kurtosis[0] && *two.kurtosis[0] == 1.0;
  const bool ok = worst <= 1e-12 && std::abs(kurt - 3.0) <= 0.05 && exact;
  return {ok, fmt("PLG bin stats vs brute force max gap %.2e (<= 1e-12); normal kurtosis %.4f (3 +- 0.05); "
                  "two-point (%.17g, %.17g, %.17g)",
                  worst, kurt, two.mean[0], two.variance[0], two.kurtosis[0].value_or(-1.0))};
}

Outcome c10_inverse() {
  Corpus& c = corpus(PatternClass::PLG);
  ForwardModel& ev = plg_cnn().model;
  const std::uint64_t hash_before = ev.params.hash();
  InverseHyper h;
  h.pretrain_epochs = 1;
  h.epochs = 10;
  h.batch = 64;
  h.n_val_targets = 20;
  h.seed = 1010;
  const auto t0 = Clock::now();
  auto [gen, hist] = train_inverse(GeneratorSpec{}, JudgeSpec{}, ev, c.train, c.test, h, [&](const InverseEpoch& e) {
    note(fmt("  GAN epoch %d%s judge %.3f adv %.3f train d %.3e val median d %.3e acc %.2f (%.0f s)", e.epoch,
             e.closed_loop ? " +d" : "   ", e.judge_loss, e.gen_adv_loss, e.train_d, e.val_median_d, e.judge_accuracy,
             e.seconds));
  });
  note(fmt("  GAN training %.0f s", since(t0)));
  const double d1 = hist.epochs.front().val_median_d;
  const double dbest = hist.epochs[hist.best_epoch - 1].val_median_d;
  const double drop = 1.0 - dbest / d1;

  std::vector<double> e_design, e_random;
  const SolverConfig cfg = SolverConfig::desk();
  for (std::size_t i = 0; i < 6; ++i) {
    const Sample& target = c.test.samples[i];
    Spectrum ts = c.test.spectrum(i);
    const InverseResult r = inverse_design(ts, gen, ev, 64, true, cfg, hash64(1011, i));
    e_design.push_back(*r.e);
    const Spectrum rnd = simulate_copr(gen_rdn(hash64(1012, i)), cfg);
    e_random.push_back(msd(to_vec(target), rnd.values));
    note(fmt("  target %zu: design d %.3e e %.3e b %.3e | random RDN e %.3e", i, r.d, *r.e, *r.b, e_random.back()));
    std::ofstream(g_out / fmt("inverse_design_%zu.json", i)) << r.to_json();
  }
  std::ofstream(g_out / "inverse_history.csv") << hist.to_csv();
  const double med_design = median(e_design), med_random = median(e_random);
  const bool frozen = ev.params.hash() == hash_before && hist.evaluator_hash_before == hist.evaluator_hash_after &&
                      hist.evaluator_hash_before == hash_before;
  const bool ok = drop >= 0.30 && med_design < med_random && frozen;
  return {ok, fmt("median d epoch 1 %.3e -> best (epoch %d) %.3e, drop %.1f%% (>= 30%%); median e design %.3e < random "
                  "%.3e; evaluator hash %s",
                  d1, hist.best_epoch, dbest, 100 * drop, med_design, med_random, frozen ? "unchanged" : "CHANGED")};
}

// Each stage runs twice from identical inputs and seeds.
Outcome c11_reproducibility() {
  const SolverConfig cfg = SolverConfig::desk();
  const auto a = encode(build_dataset(PatternClass::PTN, 6, 1111, cfg, 1));
  const auto b = encode(build_dataset(PatternClass::PTN, 6, 1111, cfg, 2));
  bool ok = a == b;
  std::string detail = fmt("build-dataset bytes %s", a == b ? "identical" : "DIFFER");

  const DatasetFile& pool = corpus(PatternClass::PLG).train;
  const Split s1 = split(pool, 0.1, 1112), s2 = split(pool, 0.1, 1112);
  const bool split_same = encode(s1.train) == encode(s2.train) && encode(s1.test) == encode(s2.test);
  ok = ok && split_same;
  detail += fmt("; split %s", split_same ? "identical" : "DIFFER");

  auto train_metrics = [&] {
    TrainHyper h;
    h.max_epochs = 3;
    h.batch = 32;
    h.seed = 1113;
    auto [m, rep] = train_forward(ForwardModelSpec::preset(Arch::ResNa), head(s1.train, 256), head(s1.test, 64), h);
    std::string metrics;
    for (const auto& e : rep.epochs) metrics += fmt("%d %.17g %.17g\n", e.epoch, e.train_mse, e.val_mse);
    metrics += fmt("test %.17g hash %016llx\n", evaluate(m, head(s1.test, 64)).mean,
                   static_cast<unsigned long long>(m.params.hash()));
    return metrics;
  };
  const std::string t1 = train_metrics(), t2 = train_metrics();
  ok = ok && t1 == t2;
  detail += fmt("; train-forward metrics %s", t1 == t2 ? "identical" : "DIFFER");

  ForestHyper fh;
  fh.n_trees = 10;
  const bool rfr_same = fit_rfr(head(s1.train, 500), fh, 1114, 1).to_json() == fit_rfr(head(s1.train, 500), fh, 1114, 2).to_json();
  ok = ok && rfr_same;
  detail += fmt("; fit-rfr %s", rfr_same ? "identical" : "DIFFER");

  const bool stats_same = bin_stats(s1.train).to_csv() == bin_stats(s2.train).to_csv();
  ok = ok && stats_same;
  detail += fmt("; stats %s", stats_same ? "identical" : "DIFFER");
  return {ok, detail};
}

std::uint32_t le32(const std::uint8_t* p) { return p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24; }
std::uint64_t le64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
  return v;
}

Outcome c12_format() {
  const std::string name = "PLG-2200-101-" + fingerprint_hex(SolverConfig::desk()) + ".msds";
  const fs::path src = g_cache / name;
  corpus(PatternClass::PLG);
  std::ifstream in(src, std::ios::binary);
  const std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), {});
  const DatasetFile ds = load(src);
  const fs::path copy = g_out / "roundtrip.msds";
  fs::create_directories(g_out);
  save(ds, copy);
  std::ifstream in2(copy, std::ios::binary);
  const std::vector<std::uint8_t> again((std::istreambuf_iterator<char>(in2)), {});
  const bool round_trip = raw == again && encode(decode(raw)) == raw;

  // Independent parse of the documented layout.
  bool layout = raw.size() >= 20 && std::memcmp(raw.data(), "MSDS", 4) == 0 && raw[4] == 1 && raw[5] == 0 &&
                raw[6] == static_cast<std::uint8_t>(PatternClass::PLG) && raw[7] == 0;
  const std::uint32_t hlen = layout ? le32(raw.data() + 8) : 0;
  const std::size_t base = 20 + hlen;
  const std::uint64_t count = layout ? le64(raw.data() + 12 + hlen) : 0;
  layout = layout && count == ds.size() && raw.size() == base + 168 * count;
  std::size_t bad_records = 0;
  for (std::size_t i = 0; layout && i < count; ++i) {
    const std::uint8_t* rec = raw.data() + base + 168 * i;
    const Sample& s = ds.samples[i];
    bool same = le64(rec + 32) == s.gen_seed;
    for (int c = 0; c < kGridCells; ++c) same = same && ((rec[c / 8] >> (7 - c % 8)) & 1) == s.pattern.at(c / 16, c % 16);
    for (int k = 0; k < kSpectrumBins; ++k) {
      const std::uint32_t bits = le32(rec + 40 + 4 * k);
      float f;
      std::memcpy(&f, &bits, 4);
      same = same && std::memcmp(&f, &s.copr[k], 4) == 0;
    }
    bad_records += !same;
  }
  layout = layout && bad_records == 0;
  return {round_trip && layout, fmt("%s (%zu bytes): save/load %s; 168-byte layout %s (%zu records, %zu mismatches)",
                                    name.c_str(), raw.size(), round_trip ? "byte-exact" : "DIFFERS",
                                    layout ? "matches" : "MISMATCH", static_cast<std::size_t>(count), bad_records)};
}

}  // namespace

int main(int argc, char** argv) {
  g_cache = "acceptance_cache";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cache" && i + 1 < argc) {
      g_cache = argv[++i];
    } else if (a == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: acceptance [--cache DIR] [--out DIR] [--only 1,2,...]\n");
      return 1;
    }
  }
  if (g_out.empty()) g_out = g_cache.parent_path() / "acceptance_out";
  fs::create_directories(g_out);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"solver oracle", c1_solver_oracle},    {"solver conservation", c2_conservation},
      {"solver symmetry", c3_symmetry},       {"autodiff", c4_autodiff},
      {"forward capacity", c5_capacity},      {"forward generalization", c6_generalization},
      {"baseline ordering", c7_baseline},     {"cross-benchmark trend", c8_crossbench},
      {"statistics", c9_statistics},          {"inverse design", c10_inverse},
      {"reproducibility", c11_reproducibility}, {"dataset format", c12_format},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    std::printf("[%d] %s\n", id, criteria[i].first);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
