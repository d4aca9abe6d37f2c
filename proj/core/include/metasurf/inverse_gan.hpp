#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metasurf/dataset.hpp"
#include "metasurf/forward_model.hpp"
#include "metasurf/param_store.hpp"

namespace metasurf {

/// Conditional generator: [target spectrum (32, mapped to 2C-1) | noise]
/// -> 5 transposed-conv blocks (1 -> 2 -> 4 -> 8 -> 16 -> 16 pixels) -> tanh.
struct GeneratorSpec {
  int noise_dim = 32;
  /// Output channels of the first four blocks; the fifth emits 1 channel.
  std::vector<int> widths{256, 128, 64, 32};
  double leaky_slope = 0.2;

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

/// Realism judge: conv blocks (3x3, stride 2 until 2x2, then stride 1)
/// -> dense -> one logit.
struct JudgeSpec {
  std::vector<int> widths{32, 64, 128, 128};
  double leaky_slope = 0.2;

  friend bool operator==(const JudgeSpec&, const JudgeSpec&) = default;
};

void validate(const GeneratorSpec& g);
void validate(const JudgeSpec& j);

struct InverseHyper {
  /// Epochs of adversarial-only training before the closed-loop term.
  int pretrain_epochs = 2;
  /// Epochs with the lambda * d term added to the generator loss.
  int epochs = 20;
  std::size_t batch = 64;
  double lr = 2e-4;
  double beta1 = 0.5;
  double lambda = 10.0;
  /// Held-out targets whose median d is tracked per epoch.
  std::size_t n_val_targets = 20;
  std::uint64_t seed = 0;
};

std::string to_json(const InverseHyper& h);
InverseHyper inverse_hyper_from_json(std::string_view json);

class Generator {
 public:
  GeneratorSpec spec;
  ad::ParamStore params;

  static Generator build(const GeneratorSpec& spec, std::uint64_t seed);
  /// cond [N, 32] in [0, 1], noise [N, noise_dim] -> [N, 1, 16, 16] in (-1, 1).
  ad::Tensor forward(const ad::Tensor& cond, const ad::Tensor& noise, bool training);

  void save(const std::filesystem::path& dir) const;
  static Generator load(const std::filesystem::path& dir);
};

class Judge {
 public:
  JudgeSpec spec;
  ad::ParamStore params;

  static Judge build(const JudgeSpec& spec, std::uint64_t seed);
  /// x [N, 1, 16, 16] -> logits [N, 1].
  ad::Tensor forward(const ad::Tensor& x);
};

/// Noise vectors drawn uniformly from [-1, 1]; row i uses stream hash64(seed, i).
ad::Tensor noise_batch(std::size_t n, int dim, std::uint64_t seed, std::uint64_t first_index = 0);

/// Threshold at 0 (> 0 -> metal). The result is tagged OTHER.
Pattern binarize(std::span<const double> values);

struct InverseEpoch {
  int epoch = 0;
  bool closed_loop = false;
  double judge_loss = 0;
  double gen_adv_loss = 0;
  double train_d = 0;        // mean d on the continuous outputs (closed-loop epochs)
  double judge_accuracy = 0; // on real vs generated in the last pass
  double val_median_d = 0;   // on binarized outputs for the held-out targets
  double seconds = 0;
};

struct InverseHistory {
  std::vector<InverseEpoch> epochs;
  int best_epoch = 0;
  std::uint64_t evaluator_hash_before = 0, evaluator_hash_after = 0;

  std::string to_csv() const;
  std::string to_json() const;
};

using InverseEpochFn = std::function<void(const InverseEpoch&)>;

/// Trains generator and judge against a frozen evaluator. `val` supplies the
/// held-out targets. Returns the generator of the epoch with the lowest
/// validation median d. Throws FrozenModified if the evaluator changes and
/// Divergence on non-finite losses.
std::pair<Generator, InverseHistory> train_inverse(const GeneratorSpec& gspec, const JudgeSpec& jspec,
                                                   ForwardModel& evaluator, const DatasetFile& train,
                                                   const DatasetFile& val, const InverseHyper& hyper,
                                                   const InverseEpochFn& on_epoch = {});

struct InverseResult {
  std::vector<double> freqs;
  std::array<double, kSpectrumBins> target{};
  Pattern pattern;
  std::array<double, kSpectrumBins> c_g{};
  std::optional<std::array<double, kSpectrumBins>> c_p;
  double d = 0;
  std::optional<double> e, b;
  std::size_t chosen = 0;
  std::size_t distinct_candidates = 0;

  std::string to_json() const;
};

/// Generates n_candidates patterns for the target, keeps the one with the
/// smallest d and, when verify is set, simulates it to obtain C_p, e and b.
InverseResult inverse_design(const Spectrum& target, Generator& gen, ForwardModel& evaluator,
                             std::size_t n_candidates, bool verify, const SolverConfig& cfg,
                             std::uint64_t seed);

/// Median d of one fixed-noise binarized design per target.
double median_design_error(Generator& gen, ForwardModel& evaluator,
                           const std::vector<std::array<double, kSpectrumBins>>& targets, std::uint64_t seed);

}  // namespace metasurf
