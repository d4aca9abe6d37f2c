#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metasurf/em_solver.hpp"
#include "metasurf/pattern.hpp"
#include "metasurf/spectrum.hpp"

namespace metasurf {

/// On-disk layout (all integers little-endian):
///
///   offset  size  field
///   0       4     magic "MSDS"
///   4       2     format version (u16) = 1
///   6       1     class tag (0 PLG, 1 PTN, 2 RDN, 3 OTHER)
///   7       1     reserved, 0
///   8       4     header JSON length L (u32)
///   12      L     header JSON (solver config, fingerprint, generator params)
///   12+L    8     sample count (u64)
///   20+L    168*n records
///
/// Record: 32 bytes pattern (256 bits, row-major, MSB first within each
/// byte), 8 bytes gen_seed (u64), 128 bytes spectrum (32 x float32).
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kPatternBytes = 32;
inline constexpr std::size_t kRecordBytes = kPatternBytes + 8 + 4 * kSpectrumBins;

struct Sample {
  Pattern pattern;
  std::uint64_t gen_seed = 0;
  std::array<float, kSpectrumBins> copr{};

  std::vector<double> values() const { return {copr.begin(), copr.end()}; }
};

/// Knobs of the per-class pattern generators used by build_dataset.
struct GeneratorParams {
  double rdn_fill = 0.5;
  double plg_fill_lo = 0.15;
  double plg_fill_hi = 0.55;
  int plg_max_vertices = 8;
  int ptn_min_shapes = 4;
  int ptn_max_shapes = 12;

  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

std::string to_json(const GeneratorParams& g);
GeneratorParams generator_params_from_json(std::string_view json);

class DatasetFile {
 public:
  PatternClass cls = PatternClass::OTHER;
  /// Verbatim header JSON; kept as text so save(load(x)) is byte-exact.
  std::string header_json;
  std::vector<Sample> samples;

  static DatasetFile create(PatternClass cls, const SolverConfig& cfg, const GeneratorParams& gen,
                            std::uint64_t master_seed);

  SolverConfig solver() const;
  std::uint64_t solver_fingerprint() const;
  std::vector<double> freqs() const;
  std::size_t size() const { return samples.size(); }
  Spectrum spectrum(std::size_t i) const;

  /// Header copy with no samples.
  DatasetFile empty_like() const;
};

std::vector<std::uint8_t> encode(const DatasetFile& ds);
DatasetFile decode(std::span<const std::uint8_t> bytes);

/// FNV-1a of the encoded bytes; identifies dataset content.
std::uint64_t content_fingerprint(const DatasetFile& ds);
std::string content_fingerprint_hex(const DatasetFile& ds);

void save(const DatasetFile& ds, const std::filesystem::path& path);
DatasetFile load(const std::filesystem::path& path);

/// Packs a pattern into 32 bytes (row-major, MSB first).
std::array<std::uint8_t, kPatternBytes> pack_pattern(const Pattern& p);
Pattern unpack_pattern(std::span<const std::uint8_t, kPatternBytes> bytes);

/// Generates one pattern of the given class from a per-sample seed.
Pattern generate_pattern(PatternClass cls, std::uint64_t seed, const GeneratorParams& gen);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Sample i uses seed hash64(master_seed, i); on a solver or generator failure
/// it is retried once with hash64(seed, 1). Output is independent of workers.
DatasetFile build_dataset(PatternClass cls, std::size_t n, std::uint64_t master_seed,
                          const SolverConfig& cfg, std::size_t workers,
                          const GeneratorParams& gen = {}, const ProgressFn& progress = {});

struct Split {
  DatasetFile train;
  DatasetFile test;
};

/// Deterministic shuffled split; both sides keep the original sample order.
Split split(const DatasetFile& ds, double test_fraction, std::uint64_t seed);

/// First n samples (all of them if n exceeds the size).
DatasetFile head(const DatasetFile& ds, std::size_t n);

}  // namespace metasurf
