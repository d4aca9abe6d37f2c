#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metasurf/dataset.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/forward_model.hpp"

namespace metasurf {

/// Per-frequency statistics of x = 1 - coPR over a set of spectra, using
/// population moments. Kurtosis is Pearson's m4 / m2^2 (3 for a normal
/// distribution) and is absent when the variance is below 1e-12.
struct BinStats {
  std::vector<double> freqs;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<std::optional<double>> kurtosis;
  std::size_t count = 0;

  /// Header `freq_hz,mean,variance,kurtosis`; absent kurtosis is an empty field.
  std::string to_csv() const;
};

/// Needs at least two spectra on identical frequency grids.
BinStats bin_stats(const std::vector<Spectrum>& spectra);
BinStats bin_stats(const DatasetFile& ds);

struct Histogram {
  std::vector<double> edges;    // n_bins + 1 values, log10-spaced
  std::vector<double> heights;  // counts divided by the largest count
  std::vector<std::size_t> counts;

  std::string to_csv() const;
};

/// Log10-spaced histogram between the smallest positive and the largest
/// error; zeros fall into the first bin. A single distinct value gets a one
/// decade wide range centred on it.
Histogram error_histogram(const std::vector<double>& errors, int n_bins);

/// A trained predictor as seen by the cross benchmark.
struct BenchModel {
  std::string name;
  PatternClass train_class = PatternClass::OTHER;
  std::string arch;
  std::vector<double> freqs;            // band/grid the model was trained on
  std::uint64_t solver_fingerprint = 0; // of its training data
  std::function<std::vector<std::array<double, kSpectrumBins>>(const DatasetFile&)> predict;
};

/// The model must outlive the returned callback.
BenchModel bench_model(const std::string& name, PatternClass cls, ForwardModel& model, const DatasetFile& train);
BenchModel bench_model(const std::string& name, PatternClass cls, const ForestModel& model, const DatasetFile& train);

struct TestSet {
  std::string name;
  PatternClass cls = PatternClass::OTHER;
  const DatasetFile* data = nullptr;
};

struct CrossBenchMatrix {
  std::vector<BenchModel> rows;  // predict callbacks are not needed after the run
  std::vector<std::string> cols;
  std::vector<PatternClass> col_classes;
  std::vector<std::vector<double>> mse;
  std::vector<std::string> warnings;

  /// Header `model,train_class,arch,<col names...>`.
  std::string to_csv() const;
  /// True when the row's in-domain column holds the row minimum.
  std::optional<bool> in_domain_is_row_min(std::size_t row) const;
  /// Text table with per-column minima starred and the in-domain check per row.
  std::string report() const;
};

/// Mean per-sample MSE for every (model, test set) pair. A different solver
/// fingerprint only adds a warning; a different frequency grid is an error.
CrossBenchMatrix cross_benchmark(const std::vector<BenchModel>& models, const std::vector<TestSet>& tests);

/// Mean of s over a test set for given predictions.
double mean_mse(const DatasetFile& ds, const std::vector<std::array<double, kSpectrumBins>>& pred);
/// Predictions of the per-bin training mean for every test sample.
std::vector<std::array<double, kSpectrumBins>> constant_mean_predictions(const DatasetFile& train,
                                                                         const DatasetFile& test);

struct ScalingRow {
  std::size_t size = 0;
  std::vector<double> mse;  // one per test set
  int best_epoch = 0;
};

struct ScalingTable {
  std::vector<std::string> cols;
  std::vector<ScalingRow> rows;

  std::string to_csv() const;
};

/// Trains one model per size on the first `size` samples of `pool` (sizes
/// strictly increasing) and evaluates each on every test set.
ScalingTable scaling_study(const DatasetFile& pool, const std::vector<std::size_t>& sizes,
                           const DatasetFile& val, const std::vector<TestSet>& tests,
                           const ForwardModelSpec& spec, const TrainHyper& hyper);

}  // namespace metasurf
