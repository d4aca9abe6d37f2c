#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metasurf/dataset.hpp"
#include "metasurf/em_solver.hpp"
#include "metasurf/forest.hpp"
#include "metasurf/forward_model.hpp"
#include "metasurf/inverse_gan.hpp"

namespace metasurf::cli {

struct DatasetSection {
  PatternClass cls = PatternClass::PLG;
  std::size_t n = 100;
  double test_fraction = 0.1;
  GeneratorParams generator;
};

struct ModelSection {
  ForwardModelSpec forward;
  ForestHyper rfr;
};

struct InverseSection {
  InverseHyper hyper;
  GeneratorSpec generator;
  JudgeSpec judge;
  std::size_t candidates = 64;
  bool verify = false;
};

/// Input files of the 9-row cross benchmark, keyed by class name (PLG, PTN,
/// RDN). `train` may also hold "RDN_large" for the larger RDN row.
struct CrossbenchSection {
  std::map<std::string, std::string> train, val, test;
  std::optional<std::size_t> default_train_size;
};

struct AnalyticsSection {
  int histogram_bins = 20;
  std::vector<std::size_t> scaling_sizes{500, 1000, 2000};
  CrossbenchSection crossbench;
};

/// Effective configuration of one CLI run. Every field has a default;
/// unknown keys anywhere are rejected with InvalidConfig.
struct RunConfig {
  std::string solver_preset = "default";
  SolverConfig solver;
  DatasetSection dataset;
  ModelSection model;
  TrainHyper train;
  InverseSection inverse;
  AnalyticsSection analytics;
  std::uint64_t seed = 0;
};

RunConfig run_config_from_json(std::string_view text);
RunConfig load_run_config(const std::string& path);
/// Canonical JSON with every default filled in.
std::string to_json(const RunConfig& cfg);

}  // namespace metasurf::cli
