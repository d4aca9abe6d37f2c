#include "metasurf/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "metasurf/error.hpp"
#include "metasurf/rng.hpp"

namespace metasurf {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'M', 'S', 'D', 'S'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<std::make_unsigned_t<T>>(p[b]) << (8 * b);
  return static_cast<T>(u);
}

}  // namespace

std::string to_json(const GeneratorParams& g) {
  json j;
  j["rdn_fill"] = g.rdn_fill;
  j["plg_fill_lo"] = g.plg_fill_lo;
  j["plg_fill_hi"] = g.plg_fill_hi;
  j["plg_max_vertices"] = g.plg_max_vertices;
  j["ptn_min_shapes"] = g.ptn_min_shapes;
  j["ptn_max_shapes"] = g.ptn_max_shapes;
  return j.dump();
}

GeneratorParams generator_params_from_json(std::string_view text) {
  GeneratorParams g;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("generator JSON: ") + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    try {
      if (k == "rdn_fill") g.rdn_fill = it->get<double>();
      else if (k == "plg_fill_lo") g.plg_fill_lo = it->get<double>();
      else if (k == "plg_fill_hi") g.plg_fill_hi = it->get<double>();
      else if (k == "plg_max_vertices") g.plg_max_vertices = it->get<int>();
      else if (k == "ptn_min_shapes") g.ptn_min_shapes = it->get<int>();
      else if (k == "ptn_max_shapes") g.ptn_max_shapes = it->get<int>();
      else throw Error(ErrorKind::InvalidConfig, "unknown generator key '" + k + "'");
    } catch (const json::exception&) {
      throw Error(ErrorKind::InvalidConfig, "generator key '" + k + "' has the wrong type");
    }
  }
  return g;
}

DatasetFile DatasetFile::create(PatternClass cls, const SolverConfig& cfg, const GeneratorParams& gen,
                                std::uint64_t master_seed) {
  DatasetFile ds;
  ds.cls = cls;
  json h;
  h["solver"] = json::parse(to_json(cfg));
  h["solver_fingerprint"] = fingerprint_hex(cfg);
  h["generator"] = json::parse(to_json(gen));
  h["master_seed"] = master_seed;
  ds.header_json = h.dump();
  return ds;
}

SolverConfig DatasetFile::solver() const {
  try {
    const auto h = json::parse(header_json);
    return solver_config_from_json(h.at("solver").dump());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("header JSON: ") + e.what());
  }
}

std::uint64_t DatasetFile::solver_fingerprint() const { return fingerprint(solver()); }

std::vector<double> DatasetFile::freqs() const {
  const auto cfg = solver();
  return uniform_freqs(cfg.band_lo, cfg.band_hi, cfg.n_freq);
}

Spectrum DatasetFile::spectrum(std::size_t i) const {
  return Spectrum{freqs(), samples.at(i).values()};
}

DatasetFile DatasetFile::empty_like() const {
  DatasetFile out;
  out.cls = cls;
  out.header_json = header_json;
  return out;
}

std::array<std::uint8_t, kPatternBytes> pack_pattern(const Pattern& p) {
  std::array<std::uint8_t, kPatternBytes> out{};
  const auto cells = p.cells();
  for (int i = 0; i < kGridCells; ++i)
    if (cells[i]) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  return out;
}

Pattern unpack_pattern(std::span<const std::uint8_t, kPatternBytes> bytes) {
  Pattern p;
  for (int i = 0; i < kGridCells; ++i)
    p.set(i / kGridSide, i % kGridSide, (bytes[i / 8] >> (7 - i % 8)) & 1u);
  return p;
}

std::vector<std::uint8_t> encode(const DatasetFile& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(20 + ds.header_json.size() + kRecordBytes * ds.samples.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, kDatasetVersion);
  out.push_back(static_cast<std::uint8_t>(ds.cls));
  out.push_back(0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.header_json.size()));
  out.insert(out.end(), ds.header_json.begin(), ds.header_json.end());
  put_le<std::uint64_t>(out, ds.samples.size());
  for (const auto& s : ds.samples) {
    const auto packed = pack_pattern(s.pattern);
    out.insert(out.end(), packed.begin(), packed.end());
    put_le<std::uint64_t>(out, s.gen_seed);
    for (float v : s.copr) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

DatasetFile decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorKind::CorruptHeader, "missing MSDS magic");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kDatasetVersion)
    throw Error(ErrorKind::VersionMismatch, "file version " + std::to_string(version) + ", expected " +
                                                std::to_string(kDatasetVersion));
  const std::uint8_t tag = bytes[6];
  if (tag > 3) throw Error(ErrorKind::CorruptHeader, "class tag " + std::to_string(tag) + " out of range");
  const auto hlen = get_le<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen) + 8)
    throw Error(ErrorKind::CorruptHeader, "header length exceeds file size");
  DatasetFile ds;
  ds.cls = static_cast<PatternClass>(tag);
  ds.header_json.assign(reinterpret_cast<const char*>(bytes.data() + 12), hlen);
  if (!json::accept(ds.header_json)) throw Error(ErrorKind::CorruptHeader, "header JSON does not parse");
  const std::size_t count_at = 12 + hlen;
  const auto count = get_le<std::uint64_t>(bytes.data() + count_at);
  const std::size_t body = count_at + 8;
  const std::size_t available = (bytes.size() - body) / kRecordBytes;
  if (available < count)
    throw Error(ErrorKind::TruncatedRecords, "record " + std::to_string(available) + " of " +
                                                 std::to_string(count) + " is incomplete or missing");
  if (bytes.size() - body != count * kRecordBytes)
    throw Error(ErrorKind::CorruptHeader, "trailing bytes after " + std::to_string(count) + " records");
  ds.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* r = bytes.data() + body + i * kRecordBytes;
    auto& s = ds.samples[i];
    s.pattern = unpack_pattern(std::span<const std::uint8_t, kPatternBytes>(r, kPatternBytes));
    s.pattern.tag = ds.cls;
    s.gen_seed = get_le<std::uint64_t>(r + kPatternBytes);
    s.pattern.seed = s.gen_seed;
    for (int b = 0; b < kSpectrumBins; ++b)
      s.copr[b] = std::bit_cast<float>(get_le<std::uint32_t>(r + kPatternBytes + 8 + 4 * b));
  }
  return ds;
}

std::uint64_t content_fingerprint(const DatasetFile& ds) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : encode(ds)) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string content_fingerprint_hex(const DatasetFile& ds) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(content_fingerprint(ds)));
  return buf;
}

void save(const DatasetFile& ds, const std::filesystem::path& path) {
  const auto bytes = encode(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

DatasetFile load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

Pattern generate_pattern(PatternClass cls, std::uint64_t seed, const GeneratorParams& gen) {
  switch (cls) {
    case PatternClass::RDN:
      return gen_rdn(seed, gen.rdn_fill);
    case PatternClass::PLG: {
      Rng rng(hash64(seed, 0x706c67));
      return gen_plg(seed, rng.uniform(gen.plg_fill_lo, gen.plg_fill_hi), gen.plg_max_vertices);
    }
    case PatternClass::PTN:
      return gen_ptn(seed, gen.ptn_min_shapes, gen.ptn_max_shapes);
    case PatternClass::OTHER:
      break;
  }
  throw Error(ErrorKind::InvalidArgument, "cannot generate patterns of class OTHER");
}

DatasetFile build_dataset(PatternClass cls, std::size_t n, std::uint64_t master_seed,
                          const SolverConfig& cfg, std::size_t workers, const GeneratorParams& gen,
                          const ProgressFn& progress) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "dataset size must be >= 1");
  if (workers < 1) throw Error(ErrorKind::InvalidArgument, "workers must be >= 1");
  if (cfg.n_freq != kSpectrumBins)
    throw Error(ErrorKind::InvalidConfig, "datasets store exactly 32 spectrum bins");
  validate(cfg);

  DatasetFile ds = DatasetFile::create(cls, cfg, gen, master_seed);
  ds.samples.resize(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::size_t error_index = n;
  std::mutex mu;

  auto one = [&](std::size_t i) {
    std::uint64_t seed = hash64(master_seed, i);
    for (int attempt = 0;; ++attempt) {
      try {
        Sample s;
        s.pattern = generate_pattern(cls, seed, gen);
        const Spectrum sp = simulate_copr(s.pattern, cfg);
        s.gen_seed = seed;
        for (int b = 0; b < kSpectrumBins; ++b) s.copr[b] = static_cast<float>(sp.values[b]);
        ds.samples[i] = std::move(s);
        return;
      } catch (const Error& e) {
        const bool retryable = e.kind() == ErrorKind::Nonconvergence ||
                               e.kind() == ErrorKind::PlacementExhausted ||
                               e.kind() == ErrorKind::GenerationRetryExhausted;
        if (!retryable || attempt >= 1)
          throw Error(e.kind(), "sample " + std::to_string(i) + ": " + e.what());
        seed = hash64(seed, 1);
      }
    }
  };

  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        one(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        failed.store(true);
        return;
      }
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(mu);
        progress(d, n);
      }
    }
  };

  const std::size_t nthreads = std::min(workers, n);
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return ds;
}

Split split(const DatasetFile& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::InvalidArgument, "test_fraction must lie in (0,1)");
  const std::size_t n = ds.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n)
    throw Error(ErrorKind::EmptySide, "split of " + std::to_string(n) + " samples at " +
                                          std::to_string(test_fraction) + " leaves one side empty");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::uint8_t> is_test(n, 0);
  for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = 1;
  Split out{ds.empty_like(), ds.empty_like()};
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).samples.push_back(ds.samples[i]);
  return out;
}

DatasetFile head(const DatasetFile& ds, std::size_t n) {
  DatasetFile out = ds.empty_like();
  const std::size_t k = std::min(n, ds.size());
  out.samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

}  // namespace metasurf
