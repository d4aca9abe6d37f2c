#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metasurf/rng.hpp"
#include "metasurf/tensor.hpp"

namespace metasurf::ad {

/// Named, ordered collection of model tensors plus Adam state.
///
/// Parameters are trainable leaves. Buffers (batch-norm running statistics)
/// are saved with the model but never updated by the optimizer.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    std::vector<double> m, v;  // Adam moments, sized on first step
  };

  std::uint64_t seed = 0;
  std::int64_t step = 0;
  /// Free-form JSON object describing the model (architecture spec etc.).
  std::string meta_json = "{}";

  /// Registers a new trainable leaf. Names must be unique.
  Tensor& add_param(const std::string& name, Tensor t);
  Tensor& add_buffer(const std::string& name, Tensor t);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  /// Number of trainable scalars.
  std::size_t param_count() const;

  /// Turns requires_grad on or off for all trainable entries (used to freeze).
  void set_trainable(bool on);
  void zero_grad();

  /// FNV-1a over names, shapes and values of every entry.
  std::uint64_t hash() const;

  /// Deep copy: no tensor is shared with the original.
  ParamStore clone() const;

  /// Writes manifest.json plus params.bin (little-endian float64) into dir.
  void save(const std::filesystem::path& dir) const;
  static ParamStore load(const std::filesystem::path& dir);

 private:
  std::vector<Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard Adam with bias correction over every trainable entry. Entries
/// whose tensor does not require grad (frozen) are skipped.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// U(-b, b) with b = gain * sqrt(3 / fan_in), gain = sqrt(2 / (1 + slope^2)).
Tensor kaiming_uniform(const Shape& shape, int fan_in, double slope, Rng& rng);
/// Matrix [rows, cols] with orthonormal columns (rows >= cols) or rows.
Tensor orthogonal(int rows, int cols, Rng& rng);

}  // namespace metasurf::ad
