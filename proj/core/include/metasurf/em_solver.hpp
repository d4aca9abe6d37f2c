#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metasurf/pattern.hpp"
#include "metasurf/spectrum.hpp"

namespace metasurf {

/// Geometry, materials, discretization and run controls of the periodic
/// unit-cell reflectance solver. All lengths in metres, frequencies in Hz.
///
/// The unit cell is a 16x16 patch layer (pitch `patch_pitch`) surrounded by
/// `pad` on every side, printed on a lossy substrate over a PEC backplate.
/// Copper is modelled as PEC: the patch layer as a zero-thickness sheet on the
/// substrate surface, the backplate as the bottom termination. The thickness
/// fields for both are kept for provenance only.
struct SolverConfig {
  double patch_pitch = 0.5e-3;
  double patch_thickness = 0.018e-3;
  double pad = 1.0e-3;
  double substrate_eps_real = 2.65;
  double substrate_loss_tangent = 0.003;
  double substrate_mu_r = 1.0;
  double substrate_thickness = 3.0e-3;
  double backplate_thickness = 0.18e-3;
  double lateral_step = 0.25e-3;
  double vertical_step = 0.25e-3;
  double air_height = 10.0e-3;
  int absorber_cells = 20;
  double courant_factor = 0.99;
  double band_lo = 2.0e9;
  double band_hi = 12.0e9;
  int n_freq = kSpectrumBins;
  int max_steps = 200000;
  double decay_db = -60.0;
  /// Source scale; reflectance is independent of it.
  double source_amplitude = 1.0;

  double cell_size() const { return kGridSide * patch_pitch + 2.0 * pad; }

  /// 2-12 GHz band used for the PTN and RDN corpora and the oracle checks.
  static SolverConfig full_band() { return {}; }
  /// 9.5-12 GHz band used for the original PLG spectra.
  static SolverConfig plg_band();
  /// Coarse 0.5 mm grid for bulk dataset generation (about 16x cheaper).
  static SolverConfig desk();

  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

/// Throws InvalidConfig naming the first violated invariant.
void validate(const SolverConfig& cfg);

/// Canonical JSON (fixed key order, SI units).
std::string to_json(const SolverConfig& cfg);
/// Missing keys take defaults; unknown keys are rejected.
SolverConfig solver_config_from_json(std::string_view json);

/// FNV-1a 64 of the canonical JSON.
std::uint64_t fingerprint(const SolverConfig& cfg);
std::string fingerprint_hex(const SolverConfig& cfg);

/// Per-run diagnostics.
struct SolverStats {
  int steps = 0;
  double residual_db = 0.0;  // final field energy relative to its peak
  double seconds = 0.0;
  /// Total co+cross polarized reflectance, for energy-balance diagnostics.
  std::vector<double> total_reflectance;
};

/// Co-polarized specular reflectance of the patterned unit cell under
/// x-polarized normal incidence, by two FDTD runs (vacuum reference and
/// device) sharing one time grid.
Spectrum simulate_copr(const Pattern& p, const SolverConfig& cfg, SolverStats* stats = nullptr);

/// Closed-form reflectance of a PEC-backed lossy slab at normal incidence
/// (transmission-line model, eps = eps' (1 - j tan d)).
double analytic_slab_copr(double freq_hz, const SolverConfig& cfg);

struct ConvergenceReport {
  std::vector<double> steps;           // grid step used for each row (lateral = vertical)
  std::vector<Spectrum> spectra;       // one per row
  std::vector<double> max_deviation;   // per frequency, max over row pairs
};

/// Reruns the solver with lateral and vertical step set to each refinement.
ConvergenceReport convergence_report(const Pattern& p, const SolverConfig& cfg,
                                     const std::vector<double>& refinements);

}  // namespace metasurf
