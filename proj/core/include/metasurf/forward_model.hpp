#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "metasurf/dataset.hpp"
#include "metasurf/param_store.hpp"

namespace metasurf {

enum class Arch { Resnet18S, Resnet34S, ResNa };

std::string_view to_string(Arch a) noexcept;
Arch arch_from_string(std::string_view s);

/// Architecture of a pattern -> spectrum network. Inputs are 16x16 patterns
/// encoded as {-1, +1}; the head is dense -> 32 -> sigmoid.
struct ForwardModelSpec {
  Arch arch = Arch::Resnet18S;
  /// Residual nets: channel width per stage. ResNa: width per conv block.
  std::vector<int> widths{32, 64, 128, 256};
  /// Residual nets only: basic blocks per stage.
  std::vector<int> blocks{2, 2, 2, 2};
  double leaky_slope = 0.2;
  /// ResNa only.
  int lstm_hidden = 64;

  static ForwardModelSpec preset(Arch a);
  int residual_blocks() const;

  friend bool operator==(const ForwardModelSpec&, const ForwardModelSpec&) = default;
};

/// Throws InvalidSpec when the spec cannot build a network on 16x16 inputs.
void validate(const ForwardModelSpec& spec);
std::string to_json(const ForwardModelSpec& spec);
ForwardModelSpec forward_spec_from_json(std::string_view json);

class ForwardModel {
 public:
  ForwardModelSpec spec;
  ad::ParamStore params;

  static ForwardModel build(const ForwardModelSpec& spec, std::uint64_t seed);

  /// x [N, 1, 16, 16] -> [N, 32] in (0, 1). Training mode uses batch
  /// statistics and updates the running estimates.
  ad::Tensor forward(const ad::Tensor& x, bool training);

  void save(const std::filesystem::path& dir) const;
  static ForwardModel load(const std::filesystem::path& dir);
};

/// Stacks patterns into [N, 1, 16, 16] with the {-1, +1} encoding.
ad::Tensor encode_batch(const std::vector<const Pattern*>& patterns);
/// Stacks sample spectra into [N, 32].
ad::Tensor target_batch(const std::vector<const Sample*>& samples);

/// Eval-mode prediction for one pattern.
std::array<double, kSpectrumBins> predict(ForwardModel& model, const Pattern& p);
/// Eval-mode predictions, processed in batches of `batch`.
std::vector<std::array<double, kSpectrumBins>> predict_all(ForwardModel& model,
                                                           const std::vector<const Pattern*>& patterns,
                                                           std::size_t batch = 128);

struct TrainHyper {
  double lr = 1e-3;
  std::size_t batch = 64;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 0;
};

std::string to_json(const TrainHyper& h);
TrainHyper train_hyper_from_json(std::string_view json);

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0;  // mean training-mode batch loss
  double val_mse = 0;    // eval-mode MSE on the validation set
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_mse = 0;
  double wall_seconds = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0, n_val = 0;
  std::uint64_t train_fingerprint = 0, val_fingerprint = 0;
  std::size_t param_count = 0;
  bool has_test = false;
  double test_mse = 0;

  std::string to_csv() const;
  std::string to_json() const;
};

using EpochFn = std::function<void(const EpochRecord&)>;

/// Minimizes the mean per-sample spectrum MSE with Adam and returns the
/// best-validation checkpoint. Both datasets must come from the same solver
/// configuration. Throws Divergence when the validation loss is not finite.
std::pair<ForwardModel, TrainReport> train_forward(const ForwardModelSpec& spec, const DatasetFile& train,
                                                   const DatasetFile& val, const TrainHyper& hyper,
                                                   const EpochFn& on_epoch = {});

struct EvalResult {
  std::vector<double> s;  // per-sample mean over the 32 bins of squared error
  double mean = 0, median = 0, max = 0;
};

EvalResult summarize_errors(std::vector<double> s);
EvalResult evaluate(ForwardModel& model, const DatasetFile& test);

}  // namespace metasurf
