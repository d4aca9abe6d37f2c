#include "metasurf/forest.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "metasurf/error.hpp"
#include "metasurf/rng.hpp"

namespace metasurf {

namespace {

using json = nlohmann::ordered_json;
using Vec = std::array<double, kSpectrumBins>;

constexpr int kForestVersion = 1;

Vec mean_of(const std::vector<Sample>& samples, const std::size_t* begin, const std::size_t* end) {
  Vec v{};
  for (auto* it = begin; it != end; ++it)
    for (int k = 0; k < kSpectrumBins; ++k) v[k] += samples[*it].copr[k];
  const double n = static_cast<double>(end - begin);
  for (double& x : v) x /= n;
  return v;
}

struct Split {
  int feature = -1;
  double score = 0;
};

// Best split of rows [begin, end) among randomly ordered features. Features
// constant on the node do not count toward max_features.
Split best_split(const std::vector<Sample>& samples, const std::size_t* begin, const std::size_t* end,
                 const ForestHyper& h, Rng& rng) {
  std::array<int, kGridCells> order;
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = static_cast<std::size_t>(end - begin);
  Vec total{};
  for (auto* it = begin; it != end; ++it)
    for (int k = 0; k < kSpectrumBins; ++k) total[k] += samples[*it].copr[k];

  Split best;
  int tried = 0;
  for (int i = 0; i < kGridCells && tried < h.max_features; ++i) {
    const std::size_t j = i + rng.below(kGridCells - i);
    std::swap(order[i], order[j]);
    const int f = order[i];
    const int row = f / kGridSide, col = f % kGridSide;
    Vec right{};
    std::size_t n_right = 0;
    for (auto* it = begin; it != end; ++it) {
      const Sample& s = samples[*it];
      if (!s.pattern.at(row, col)) continue;
      ++n_right;
      for (int k = 0; k < kSpectrumBins; ++k) right[k] += s.copr[k];
    }
    if (n_right == 0 || n_right == n) continue;
    ++tried;
    const std::size_t n_left = n - n_right;
    if (n_left < static_cast<std::size_t>(h.min_samples_leaf) || n_right < static_cast<std::size_t>(h.min_samples_leaf))
      continue;
    // Minimizing the summed squared error equals maximizing this.
    double score = 0;
    for (int k = 0; k < kSpectrumBins; ++k) {
      const double l = total[k] - right[k];
      score += l * l / n_left + right[k] * right[k] / n_right;
    }
    if (best.feature < 0 || score > best.score) best = {f, score};
  }
  if (best.feature >= 0) {
    double parent = 0;
    for (int k = 0; k < kSpectrumBins; ++k) parent += total[k] * total[k] / n;
    if (!(best.score > parent * (1 + 1e-12))) best.feature = -1;  // no variance reduction
  }
  return best;
}

Tree fit_tree(const std::vector<Sample>& samples, std::vector<std::size_t> rows, const ForestHyper& h,
              Rng& rng) {
  Tree t;
  struct Work {
    int node;
    std::size_t begin, end;
    int depth;
  };
  t.nodes.emplace_back();
  std::vector<Work> stack{{0, 0, rows.size(), 0}};
  while (!stack.empty()) {
    const Work w = stack.back();
    stack.pop_back();
    std::size_t* b = rows.data() + w.begin;
    std::size_t* e = rows.data() + w.end;
    Split sp;
    if (w.depth < h.max_depth && w.end - w.begin >= 2 * static_cast<std::size_t>(h.min_samples_leaf))
      sp = best_split(samples, b, e, h, rng);
    if (sp.feature < 0) {
      t.nodes[w.node].value = mean_of(samples, b, e);
      continue;
    }
    const int row = sp.feature / kGridSide, col = sp.feature % kGridSide;
    std::size_t* mid = std::stable_partition(b, e, [&](std::size_t i) { return !samples[i].pattern.at(row, col); });
    const int left = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    t.nodes.emplace_back();
    t.nodes[w.node].feature = sp.feature;
    t.nodes[w.node].left = left;
    t.nodes[w.node].right = left + 1;
    const std::size_t m = static_cast<std::size_t>(mid - rows.data());
    stack.push_back({left + 1, m, w.end, w.depth + 1});
    stack.push_back({left, w.begin, m, w.depth + 1});
  }
  return t;
}

}  // namespace

int Tree::leaf_of(const Pattern& p) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    const int f = nodes[i].feature;
    i = p.at(f / kGridSide, f % kGridSide) ? nodes[i].right : nodes[i].left;
  }
  return i;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
  }
  return best;
}

std::string to_json(const ForestHyper& h) {
  json j;
  j["n_trees"] = h.n_trees;
  j["max_depth"] = h.max_depth;
  j["min_samples_leaf"] = h.min_samples_leaf;
  j["max_features"] = h.max_features;
  j["bootstrap"] = h.bootstrap;
  return j.dump();
}

ForestHyper forest_hyper_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("forest JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "forest config must be an object");
  ForestHyper h;
  for (auto& [key, val] : j.items()) {
    try {
      if (key == "n_trees") h.n_trees = val.get<int>();
      else if (key == "max_depth") h.max_depth = val.get<int>();
      else if (key == "min_samples_leaf") h.min_samples_leaf = val.get<int>();
      else if (key == "max_features") h.max_features = val.get<int>();
      else if (key == "bootstrap") h.bootstrap = val.get<bool>();
      else throw Error(ErrorKind::InvalidConfig, "unknown forest key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, "forest key '" + key + "': " + e.what());
    }
  }
  if (h.n_trees < 1 || h.max_depth < 0 || h.min_samples_leaf < 1 || h.max_features < 1 ||
      h.max_features > kGridCells)
    throw Error(ErrorKind::InvalidConfig, "forest: n_trees >= 1, max_depth >= 0, min_samples_leaf >= 1, "
                                          "1 <= max_features <= 256");
  return h;
}

std::string ForestModel::to_json() const {
  json j;
  j["format"] = "metasurf-forest";
  j["version"] = kForestVersion;
  j["seed"] = seed;
  j["hyper"] = json::parse(metasurf::to_json(hyper));
  json ts = json::array();
  for (const auto& t : trees) {
    json feat = json::array(), left = json::array(), right = json::array(), value = json::array();
    for (const auto& n : t.nodes) {
      feat.push_back(n.feature);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.feature < 0 ? json(n.value) : json(nullptr));
    }
    ts.push_back({{"feature", feat}, {"left", left}, {"right", right}, {"value", value}});
  }
  j["trees"] = ts;
  return j.dump();
}

ForestModel ForestModel::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("forest file: ") + e.what());
  }
  if (j.value("format", "") != "metasurf-forest") throw Error(ErrorKind::CorruptHeader, "not a forest file");
  if (j.value("version", 0) != kForestVersion)
    throw Error(ErrorKind::VersionMismatch, "forest version " + std::to_string(j.value("version", 0)));
  ForestModel m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.hyper = forest_hyper_from_json(j.at("hyper").dump());
    for (const auto& jt : j.at("trees")) {
      Tree t;
      const auto& feat = jt.at("feature");
      t.nodes.resize(feat.size());
      for (std::size_t i = 0; i < feat.size(); ++i) {
        auto& n = t.nodes[i];
        n.feature = feat[i].get<int>();
        n.left = jt.at("left")[i].get<int>();
        n.right = jt.at("right")[i].get<int>();
        if (n.feature < 0) {
          n.value = jt.at("value")[i].get<Vec>();
        } else if (n.feature >= kGridCells || n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) ||
                   n.left >= static_cast<int>(feat.size()) || n.right >= static_cast<int>(feat.size())) {
          throw Error(ErrorKind::CorruptHeader, "forest node " + std::to_string(i) + " is malformed");
        }
      }
      if (t.nodes.empty()) throw Error(ErrorKind::CorruptHeader, "forest contains an empty tree");
      m.trees.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("forest file: ") + e.what());
  }
  return m;
}

void ForestModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json() << '\n';
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

ForestModel ForestModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<std::size_t> tree_rows(const ForestHyper& h, std::uint64_t seed, int t, std::size_t n) {
  std::vector<std::size_t> rows(n);
  if (!h.bootstrap) {
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  Rng rng(hash64(hash64(seed, static_cast<std::uint64_t>(t)), 0x626f6f74));
  for (auto& r : rows) r = rng.below(n);
  std::sort(rows.begin(), rows.end());
  return rows;
}

ForestModel fit_rfr(const DatasetFile& train, const ForestHyper& hyper, std::uint64_t seed, std::size_t workers) {
  if (train.size() == 0) throw Error(ErrorKind::EmptyInput, "cannot fit a forest on an empty set");
  if (hyper.n_trees < 1 || hyper.max_depth < 0 || hyper.min_samples_leaf < 1 || hyper.max_features < 1)
    throw Error(ErrorKind::InvalidConfig, "invalid forest hyperparameters");
  ForestModel m;
  m.hyper = hyper;
  m.seed = seed;
  m.trees.resize(hyper.n_trees);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (int t = next++; t < hyper.n_trees; t = next++) {
      try {
        Rng rng(hash64(seed, static_cast<std::uint64_t>(t)));
        m.trees[t] = fit_tree(train.samples, tree_rows(hyper, seed, t, train.size()), hyper, rng);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, static_cast<std::size_t>(hyper.n_trees));
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
  return m;
}

Vec predict_rfr(const ForestModel& m, const Pattern& p) {
  Vec out{};
  for (const auto& t : m.trees) {
    const auto& v = t.nodes[t.leaf_of(p)].value;
    for (int k = 0; k < kSpectrumBins; ++k) out[k] += v[k];
  }
  for (double& x : out) x /= static_cast<double>(m.trees.size());
  return out;
}

}  // namespace metasurf
