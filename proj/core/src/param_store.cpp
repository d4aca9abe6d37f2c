#include "metasurf/param_store.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "metasurf/error.hpp"

namespace metasurf::ad {

namespace {

using json = nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

void put_f64(std::ofstream& out, std::span<const double> values) {
  for (double d : values) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<char>(u >> (8 * k));
    out.write(b, 8);
  }
}

void get_f64(const std::vector<unsigned char>& blob, std::size_t& pos, std::span<double> values) {
  if (pos + 8 * values.size() > blob.size())
    throw Error(ErrorKind::TruncatedRecords, "checkpoint blob shorter than manifest declares");
  for (double& d : values) {
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(blob[pos + k]) << (8 * k);
    d = std::bit_cast<double>(u);
    pos += 8;
  }
}

}  // namespace

Tensor& ParamStore::add_param(const std::string& name, Tensor t) {
  if (contains(name)) throw Error(ErrorKind::InvalidSpec, "duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.push_back({name, std::move(t), true, {}, {}});
  return entries_.back().tensor;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
  if (contains(name)) throw Error(ErrorKind::InvalidSpec, "duplicate parameter name " + name);
  t.set_requires_grad(false);
  entries_.push_back({name, std::move(t), false, {}, {}});
  return entries_.back().tensor;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw Error(ErrorKind::InvalidSpec, "no parameter named " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

void ParamStore::set_trainable(bool on) {
  for (auto& e : entries_)
    if (e.trainable) e.tensor.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& e : entries_) {
    fnv(h, e.name.data(), e.name.size());
    for (int d : e.tensor.shape()) fnv(h, &d, sizeof d);
    const auto data = e.tensor.data();
    fnv(h, data.data(), data.size() * sizeof(double));
  }
  return h;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  out.seed = seed;
  out.step = step;
  out.meta_json = meta_json;
  for (const auto& e : entries_) {
    Tensor t = e.tensor.detach();
    t.set_requires_grad(e.tensor.requires_grad());
    out.entries_.push_back({e.name, std::move(t), e.trainable, e.m, e.v});
  }
  return out;
}

void ParamStore::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json manifest;
  manifest["format"] = "metasurf-params";
  manifest["version"] = kCheckpointVersion;
  manifest["seed"] = seed;
  manifest["step"] = step;
  manifest["meta"] = json::parse(meta_json);
  json list = json::array();
  for (const auto& e : entries_) {
    json item;
    item["name"] = e.name;
    item["shape"] = e.tensor.shape();
    item["kind"] = e.trainable ? "param" : "buffer";
    item["adam"] = !e.m.empty();
    list.push_back(item);
  }
  manifest["tensors"] = list;

  std::ofstream blob(dir / "params.bin", std::ios::binary);
  for (const auto& e : entries_) {
    put_f64(blob, e.tensor.data());
    if (!e.m.empty()) {
      put_f64(blob, e.m);
      put_f64(blob, e.v);
    }
  }
  if (!blob) throw Error(ErrorKind::Io, "cannot write " + (dir / "params.bin").string());
  std::ofstream man(dir / "manifest.json");
  man << manifest.dump(2) << '\n';
  if (!man) throw Error(ErrorKind::Io, "cannot write " + (dir / "manifest.json").string());
}

ParamStore ParamStore::load(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.json");
  if (!man) throw Error(ErrorKind::Io, "cannot read " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(man);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "metasurf-params")
    throw Error(ErrorKind::CorruptHeader, "not a metasurf checkpoint: " + dir.string());
  if (manifest.value("version", 0) != kCheckpointVersion)
    throw Error(ErrorKind::VersionMismatch,
                "checkpoint version " + std::to_string(manifest.value("version", 0)) + " unsupported");

  std::ifstream in(dir / "params.bin", std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + (dir / "params.bin").string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  ParamStore store;
  store.seed = manifest.at("seed").get<std::uint64_t>();
  store.step = manifest.at("step").get<std::int64_t>();
  store.meta_json = manifest.at("meta").dump();
  std::size_t pos = 0;
  for (const auto& item : manifest.at("tensors")) {
    Tensor t(item.at("shape").get<Shape>());
    get_f64(blob, pos, t.data());
    const bool trainable = item.at("kind") == "param";
    Entry e{item.at("name").get<std::string>(), t, trainable, {}, {}};
    e.tensor.set_requires_grad(trainable);
    if (item.at("adam").get<bool>()) {
      e.m.resize(t.numel());
      e.v.resize(t.numel());
      get_f64(blob, pos, e.m);
      get_f64(blob, pos, e.v);
    }
    store.entries_.push_back(std::move(e));
  }
  if (pos != blob.size()) throw Error(ErrorKind::CorruptHeader, "checkpoint blob has trailing bytes");
  return store;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (const auto& e : store.entries())
    if (e.trainable && e.tensor.requires_grad() && !e.tensor.has_grad())
      throw Error(ErrorKind::MissingGrad, "parameter " + e.name + " has no gradient");
  store.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (auto& e : store.entries()) {
    if (!e.trainable || !e.tensor.requires_grad()) continue;
    if (e.m.empty()) {
      e.m.assign(e.tensor.numel(), 0.0);
      e.v.assign(e.tensor.numel(), 0.0);
    }
    auto w = e.tensor.data();
    const auto g = e.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.lr * (e.m[i] / c1) / (std::sqrt(e.v[i] / c2) + cfg.eps);
    }
  }
}

Tensor kaiming_uniform(const Shape& shape, int fan_in, double slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double bound = gain * std::sqrt(3.0 / fan_in);
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor orthogonal(int rows, int cols, Rng& rng) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int j = 0; j < small; ++j)
    for (int i = 0; i < big; ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Tensor t({rows, cols});
  auto d = t.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) d[static_cast<std::size_t>(i) * cols + j] = rows >= cols ? q(i, j) : q(j, i);
  return t;
}

}  // namespace metasurf::ad
