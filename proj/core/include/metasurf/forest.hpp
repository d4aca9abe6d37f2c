#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metasurf/dataset.hpp"

namespace metasurf {

struct ForestHyper {
  int n_trees = 100;
  int max_depth = 16;
  int min_samples_leaf = 2;
  /// Candidate features per split (sqrt of 256).
  int max_features = 16;
  bool bootstrap = true;

  friend bool operator==(const ForestHyper&, const ForestHyper&) = default;
};

std::string to_json(const ForestHyper& h);
ForestHyper forest_hyper_from_json(std::string_view json);

/// Flat binary tree over the 256 pattern bits. Internal node: cell `feature`
/// is 0 -> left, 1 -> right. Leaf: feature == -1 and `value` holds the mean
/// spectrum of the training samples routed there.
struct Tree {
  struct Node {
    int feature = -1;
    int left = -1, right = -1;
    std::array<double, kSpectrumBins> value{};
  };
  std::vector<Node> nodes;

  /// Index of the leaf reached by p.
  int leaf_of(const Pattern& p) const;
  int depth() const;
};

struct ForestModel {
  ForestHyper hyper;
  std::uint64_t seed = 0;
  std::vector<Tree> trees;

  std::string to_json() const;
  static ForestModel from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static ForestModel load(const std::filesystem::path& path);
};

/// Training rows used by tree t: n draws with replacement when bootstrapping,
/// otherwise 0..n-1.
std::vector<std::size_t> tree_rows(const ForestHyper& h, std::uint64_t seed, int t, std::size_t n);

/// Trees are fitted independently on `workers` threads; the result does not
/// depend on the worker count.
ForestModel fit_rfr(const DatasetFile& train, const ForestHyper& hyper, std::uint64_t seed,
                    std::size_t workers = 1);

std::array<double, kSpectrumBins> predict_rfr(const ForestModel& m, const Pattern& p);

}  // namespace metasurf
