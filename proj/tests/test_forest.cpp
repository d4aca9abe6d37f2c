#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "metasurf/error.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/rng.hpp"

using namespace metasurf;
namespace fs = std::filesystem;

namespace {

DatasetFile synthetic(std::size_t n, std::uint64_t seed) {
  DatasetFile ds = DatasetFile::create(PatternClass::RDN, SolverConfig::desk(), GeneratorParams{}, seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.gen_seed = hash64(seed, i);
    s.pattern = gen_rdn(s.gen_seed);
    Rng rng(s.gen_seed);
    // Spectrum depends on two cells plus noise so splits have something to find.
    const double base = 0.3 + 0.3 * s.pattern.at(3, 4) + 0.2 * s.pattern.at(10, 12);
    for (int k = 0; k < kSpectrumBins; ++k) s.copr[k] = static_cast<float>(base + 0.05 * rng.uniform() + 0.002 * k);
    ds.samples.push_back(s);
  }
  return ds;
}

std::array<double, kSpectrumBins> brute_mean(const DatasetFile& ds) {
  std::array<double, kSpectrumBins> m{};
  for (const auto& s : ds.samples)
    for (int k = 0; k < kSpectrumBins; ++k) m[k] += s.copr[k];
  for (double& v : m) v /= static_cast<double>(ds.size());
  return m;
}

}  // namespace

TEST_CASE("a depth-0 tree without bootstrap predicts the training mean") {
  const DatasetFile ds = synthetic(37, 1);
  ForestHyper h;
  h.n_trees = 1;
  h.max_depth = 0;
  h.bootstrap = false;
  const ForestModel m = fit_rfr(ds, h, 3);
  REQUIRE(m.trees.size() == 1);
  CHECK(m.trees[0].nodes.size() == 1);
  const auto want = brute_mean(ds);
  const auto got = predict_rfr(m, gen_rdn(999));
  for (int k = 0; k < kSpectrumBins; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("fully grown trees recall distinct training samples") {
  const DatasetFile ds = synthetic(30, 2);
  ForestHyper h;
  h.n_trees = 1;
  h.max_depth = 64;
  h.min_samples_leaf = 1;
  h.max_features = 256;
  h.bootstrap = false;
  const ForestModel m = fit_rfr(ds, h, 5);
  for (const auto& s : ds.samples) {
    const auto p = predict_rfr(m, s.pattern);
    for (int k = 0; k < kSpectrumBins; ++k) CHECK(p[k] == doctest::Approx(s.copr[k]).epsilon(1e-9));
  }
}

TEST_CASE("leaf values equal the mean of the rows routed to them") {
  const DatasetFile ds = synthetic(200, 3);
  ForestHyper h;
  h.n_trees = 4;
  h.max_depth = 5;
  const ForestModel m = fit_rfr(ds, h, 7);
  for (int t = 0; t < h.n_trees; ++t) {
    const Tree& tree = m.trees[t];
    CHECK(tree.depth() <= 5);
    std::vector<std::array<double, kSpectrumBins>> sum(tree.nodes.size());
    std::vector<int> count(tree.nodes.size(), 0);
    for (std::size_t r : tree_rows(h, 7, t, ds.size())) {
      const int leaf = tree.leaf_of(ds.samples[r].pattern);
      ++count[leaf];
      for (int k = 0; k < kSpectrumBins; ++k) sum[leaf][k] += ds.samples[r].copr[k];
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.nodes[i].feature >= 0) continue;
      REQUIRE(count[i] >= h.min_samples_leaf);
      for (int k = 0; k < kSpectrumBins; ++k)
        CHECK(tree.nodes[i].value[k] == doctest::Approx(sum[i][k] / count[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("predictions stay within the training range and beat the mean") {
  const DatasetFile ds = synthetic(300, 4), test = synthetic(100, 40);
  ForestHyper h;
  h.n_trees = 20;
  h.max_features = 256;
  const ForestModel m = fit_rfr(ds, h, 9);
  double lo = 1e9, hi = -1e9;
  for (const auto& s : ds.samples)
    for (float v : s.copr) {
      lo = std::min<double>(lo, v);
      hi = std::max<double>(hi, v);
    }
  const auto mean = brute_mean(ds);
  double forest_err = 0, mean_err = 0;
  for (const auto& s : test.samples) {
    const auto p = predict_rfr(m, s.pattern);
    for (int k = 0; k < kSpectrumBins; ++k) {
      CHECK(p[k] >= lo - 1e-12);
      CHECK(p[k] <= hi + 1e-12);
      forest_err += (p[k] - s.copr[k]) * (p[k] - s.copr[k]);
      mean_err += (mean[k] - s.copr[k]) * (mean[k] - s.copr[k]);
    }
  }
  CHECK(forest_err < 0.5 * mean_err);
}

TEST_CASE("bootstrap rows") {
  ForestHyper h;
  const auto a = tree_rows(h, 1, 0, 500);
  CHECK(a.size() == 500);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(a == tree_rows(h, 1, 0, 500));
  CHECK(a != tree_rows(h, 1, 1, 500));
  // About 1 - 1/e of the rows appear in a bootstrap sample.
  std::vector<std::size_t> u = a;
  u.erase(std::unique(u.begin(), u.end()), u.end());
  CHECK(u.size() > 280);
  CHECK(u.size() < 350);
  h.bootstrap = false;
  const auto all = tree_rows(h, 1, 0, 5);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("worker count does not change the forest") {
  const DatasetFile ds = synthetic(120, 5);
  ForestHyper h;
  h.n_trees = 7;
  CHECK(fit_rfr(ds, h, 11, 1).to_json() == fit_rfr(ds, h, 11, 3).to_json());
  CHECK(fit_rfr(ds, h, 11, 1).to_json() != fit_rfr(ds, h, 12, 1).to_json());
}

TEST_CASE("serialization round trip and corrupt files") {
  const DatasetFile ds = synthetic(80, 6);
  ForestHyper h;
  h.n_trees = 3;
  const ForestModel m = fit_rfr(ds, h, 2);
  const fs::path dir = fs::temp_directory_path() / "metasurf_test_forest";
  fs::create_directories(dir);
  m.save(dir / "f.json");
  const ForestModel back = ForestModel::load(dir / "f.json");
  CHECK(back.to_json() == m.to_json());
  CHECK(back.hyper == h);
  for (int i = 0; i < 10; ++i) {
    const Pattern p = gen_rdn(hash64(8, i));
    CHECK(predict_rfr(back, p) == predict_rfr(m, p));
  }
  CHECK_THROWS_AS(ForestModel::from_json(R"({"format":"other"})"), Error);
  CHECK_THROWS_AS(ForestModel::from_json("not json"), Error);
  CHECK_THROWS_AS(ForestModel::load(dir / "missing.json"), Error);
  CHECK_THROWS_AS(forest_hyper_from_json(R"({"trees": 3})"), Error);
  CHECK_THROWS_AS(fit_rfr(ds.empty_like(), h, 1), Error);
  CHECK(forest_hyper_from_json(to_json(h)) == h);
}
