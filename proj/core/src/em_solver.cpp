#include "metasurf/em_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "json.hpp"
#include "metasurf/error.hpp"

namespace metasurf {

namespace {

using json = nlohmann::ordered_json;

constexpr double kC0 = 299792458.0;
constexpr double kMu0 = 1.25663706212e-6;
constexpr double kEps0 = 1.0 / (kMu0 * kC0 * kC0);
constexpr double kEta0 = kMu0 * kC0;

// Graded CPML parameters: polynomial order and the frequency of the
// complex-frequency shift.
constexpr double kPmlOrder = 3.0;
constexpr double kPmlAlphaHz = 1.0e9;

int exact_ratio(double num, double den, const char* what) {
  const double r = num / den;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-6)
    throw Error(ErrorKind::InvalidConfig, std::string(what) + " is not an integer multiple of the grid step");
  return static_cast<int>(n);
}

struct PmlCoeffs {
  double b = 0.0;
  double a = 0.0;
};

// depth in cells measured from the inner CPML face (0 at the face).
PmlCoeffs pml_coeffs(double depth_cells, int layers, double dz, double dt) {
  if (depth_cells <= 0.0) return {};
  const double rho = std::min(depth_cells / layers, 1.0);
  const double sigma_max = 0.8 * (kPmlOrder + 1.0) / (kEta0 * dz);
  const double sigma = sigma_max * std::pow(rho, kPmlOrder);
  const double alpha = 2.0 * std::numbers::pi * kEps0 * kPmlAlphaHz * (1.0 - rho);
  PmlCoeffs c;
  c.b = std::exp(-(sigma + alpha) * dt / kEps0);
  c.a = sigma > 0.0 ? sigma / (sigma + alpha) * (c.b - 1.0) : 0.0;
  return c;
}

struct UpdateCoeffs {
  double ca = 1.0;
  double cb = 0.0;
};

UpdateCoeffs e_coeffs(double eps_r, double sigma, double dt) {
  const double loss = sigma * dt / (2.0 * kEps0 * eps_r);
  return {(1.0 - loss) / (1.0 + loss), (kC0 * dt / eps_r) / (1.0 + loss)};
}

// Differentiated Gaussian; spectrum peaks near 6.5 GHz and spans 1-13 GHz.
struct Pulse {
  double tau;
  double t0;
  double amplitude;
  double operator()(double t) const {
    const double u = (t - t0) / tau;
    return -amplitude * u * std::exp(-u * u);
  }
  double end() const { return 2.0 * t0; }
};

Pulse make_pulse(double amplitude) {
  const double tau = std::numbers::sqrt2 / (2.0 * std::numbers::pi * 6.5e9);
  return {tau, 5.0 * tau, amplitude};
}

struct Layout {
  int nx = 0;       // lateral cells per side
  int pad = 0;      // lateral cells in the pad
  int per_px = 0;   // lateral cells per pattern pixel
  int ns = 0;       // substrate cells
  int na = 0;       // air cells
  int np = 0;       // CPML cells
  int nz = 0;       // total cells in z; E-tangential nodes 0..nz
  int k_obs = 0;
  int k_src = 0;
  double dx = 0.0;
  double dz = 0.0;
  double dt = 0.0;
  double sigma = 0.0;  // substrate conductivity
};

Layout make_layout(const SolverConfig& cfg) {
  Layout L;
  L.per_px = exact_ratio(cfg.patch_pitch, cfg.lateral_step, "patch_pitch");
  L.pad = exact_ratio(cfg.pad, cfg.lateral_step, "pad");
  L.nx = kGridSide * L.per_px + 2 * L.pad;
  L.ns = exact_ratio(cfg.substrate_thickness, cfg.vertical_step, "substrate_thickness");
  L.na = exact_ratio(cfg.air_height, cfg.vertical_step, "air_height");
  L.np = cfg.absorber_cells;
  L.nz = L.ns + L.na + L.np;
  L.k_src = L.ns + L.na - 3;
  L.k_obs = L.ns + L.na / 2;
  L.dx = cfg.lateral_step;
  L.dz = cfg.vertical_step;
  const double inv = std::sqrt(2.0 / (L.dx * L.dx) + 1.0 / (L.dz * L.dz));
  L.dt = cfg.courant_factor / (kC0 * inv);
  // Constant conductivity reproducing the loss tangent at band centre.
  const double f_ref = 0.5 * (cfg.band_lo + cfg.band_hi);
  L.sigma = 2.0 * std::numbers::pi * f_ref * kEps0 * cfg.substrate_eps_real * cfg.substrate_loss_tangent;
  return L;
}

// Running DFT at a fixed set of frequencies.
class DftRecorder {
 public:
  DftRecorder(const std::vector<double>& freqs, double dt) {
    for (double f : freqs) step_.push_back(std::polar(1.0, -2.0 * std::numbers::pi * f * dt));
    phase_.assign(freqs.size(), {1.0, 0.0});
    acc_.assign(freqs.size(), {0.0, 0.0});
  }
  void add(double x) {
    for (std::size_t m = 0; m < acc_.size(); ++m) {
      acc_[m] += x * phase_[m];
      phase_[m] *= step_[m];
    }
  }
  const std::vector<std::complex<double>>& values() const { return acc_; }

 private:
  std::vector<std::complex<double>> step_, phase_, acc_;
};

std::vector<std::complex<double>> dft(const std::vector<double>& x, const std::vector<double>& freqs,
                                      double dt) {
  DftRecorder rec(freqs, dt);
  for (double v : x) rec.add(v);
  return rec.values();
}

// Incident Ex(t) at the observation plane: the same scheme restricted to
// laterally uniform fields (the 3-D update reduces to this exactly), all
// vacuum, with CPML on both ends.
std::vector<double> reference_run(const Layout& L, const Pulse& pulse, int steps) {
  const int below = 20;              // vacuum cells under the patch plane
  const int off = L.np + below - L.ns;  // m = k + off for k >= ns
  const int m_top = L.nz + off;
  std::vector<double> ex(m_top + 1, 0.0), hy(m_top, 0.0);
  std::vector<double> psi_e(m_top + 1, 0.0), psi_h(m_top, 0.0);
  std::vector<PmlCoeffs> pe(m_top + 1), ph(m_top);
  const int top_face = L.ns + L.na + off;
  for (int m = 0; m <= m_top; ++m) {
    const double d = std::max(L.np - m, m - top_face);
    pe[m] = pml_coeffs(d, L.np, L.dz, L.dt);
  }
  for (int m = 0; m < m_top; ++m) {
    const double d = std::max(L.np - (m + 0.5), (m + 0.5) - top_face);
    ph[m] = pml_coeffs(d, L.np, L.dz, L.dt);
  }
  const double s = kC0 * L.dt / L.dz;
  const int m_src = L.k_src + off;
  const int m_obs = L.k_obs + off;
  std::vector<double> rec(steps);
  for (int n = 0; n < steps; ++n) {
    for (int m = 0; m < m_top; ++m) {
      const double d = ex[m + 1] - ex[m];
      psi_h[m] = ph[m].b * psi_h[m] + ph[m].a * d;
      hy[m] -= s * (d + psi_h[m]);
    }
    for (int m = 1; m < m_top; ++m) {
      const double d = hy[m] - hy[m - 1];
      psi_e[m] = pe[m].b * psi_e[m] + pe[m].a * d;
      ex[m] -= s * (d + psi_e[m]);
    }
    ex[m_src] += pulse((n + 1) * L.dt);
    rec[n] = ex[m_obs];
  }
  return rec;
}

class DeviceGrid {
 public:
  DeviceGrid(const Layout& L, const SolverConfig& cfg, const Pattern& p) : L_(L) {
    const std::size_t nxy = static_cast<std::size_t>(L.nx) * L.nx;
    col_ = static_cast<std::size_t>(L.nz) + 1;
    for (auto* f : {&ex_, &ey_, &ez_, &hx_, &hy_, &hz_}) f->assign(nxy * col_, 0.0);
    for (auto* f : {&psi_exz_, &psi_eyz_, &psi_hxz_, &psi_hyz_})
      f->assign(nxy * static_cast<std::size_t>(L.np), 0.0);

    const double eps = cfg.substrate_eps_real;
    ce_t_.resize(col_);
    ce_z_.resize(col_);
    eps_t_.resize(col_);
    eps_z_.resize(col_);
    for (int k = 0; k <= L.nz; ++k) {
      double e = 1.0, sg = 0.0;
      if (k < L.ns) {
        e = eps;
        sg = L.sigma;
      } else if (k == L.ns) {
        e = 0.5 * (eps + 1.0);
        sg = 0.5 * L.sigma;
      }
      ce_t_[k] = e_coeffs(e, sg, L.dt);
      eps_t_[k] = e;
      const bool in_sub = k < L.ns;
      ce_z_[k] = e_coeffs(in_sub ? eps : 1.0, in_sub ? L.sigma : 0.0, L.dt);
      eps_z_[k] = in_sub ? eps : 1.0;
    }
    for (const auto& c : ce_t_) {
      ca_t_.push_back(c.ca);
      cb_t_.push_back(c.cb);
    }
    for (const auto& c : ce_z_) {
      ca_z_.push_back(c.ca);
      cb_z_.push_back(c.cb);
    }
    pml_e_.resize(L.np);
    pml_h_.resize(L.np);
    for (int q = 0; q < L.np; ++q) {
      pml_e_[q] = pml_coeffs(q, L.np, L.dz, L.dt);          // Ex/Ey at k = ns + na + q
      pml_h_[q] = pml_coeffs(q + 0.5, L.np, L.dz, L.dt);    // Hx/Hy half a cell above
    }

    // Metal grid cells; a tangential E edge on the closure of a metal cell is zeroed.
    std::vector<std::uint8_t> metal(nxy, 0);
    for (int i = 0; i < L.nx; ++i)
      for (int j = 0; j < L.nx; ++j) {
        const int ci = i - L.pad;
        const int cj = j - L.pad;
        if (ci < 0 || cj < 0 || ci >= kGridSide * L.per_px || cj >= kGridSide * L.per_px) continue;
        const int col = ci / L.per_px;
        const int row = kGridSide - 1 - cj / L.per_px;  // rows run along -y
        metal[idx2(i, j)] = p.at(row, col);
      }
    mask_ex_.assign(nxy, 0);
    mask_ey_.assign(nxy, 0);
    for (int i = 0; i < L.nx; ++i)
      for (int j = 0; j < L.nx; ++j) {
        const int im = (i + L.nx - 1) % L.nx;
        const int jm = (j + L.nx - 1) % L.nx;
        mask_ex_[idx2(i, j)] = metal[idx2(i, j)] | metal[idx2(i, jm)];
        mask_ey_[idx2(i, j)] = metal[idx2(i, j)] | metal[idx2(im, j)];
      }
  }

  void step_h() {
    const int nx = L_.nx;
    const int nz = L_.nz;
    const double sx = kC0 * L_.dt / L_.dx;
    const double sz = kC0 * L_.dt / L_.dz;
    const int face = L_.ns + L_.na;
    for (int i = 0; i < nx; ++i) {
      const int ip = (i + 1) % nx;
      for (int j = 0; j < nx; ++j) {
        const int jp = (j + 1) % nx;
        const std::size_t c = idx2(i, j) * col_;
        const double* __restrict exc = &ex_[c];
        const double* __restrict eyc = &ey_[c];
        const double* __restrict ezc = &ez_[c];
        const double* __restrict ex_jp = &ex_[idx2(i, jp) * col_];
        const double* __restrict ey_ip = &ey_[idx2(ip, j) * col_];
        const double* __restrict ez_ip = &ez_[idx2(ip, j) * col_];
        const double* __restrict ez_jp = &ez_[idx2(i, jp) * col_];
        double* __restrict hxc = &hx_[c];
        double* __restrict hyc = &hy_[c];
        double* __restrict hzc = &hz_[c];
#pragma GCC ivdep
        for (int k = 0; k < nz; ++k) hxc[k] -= sx * (ez_jp[k] - ezc[k]) - sz * (eyc[k + 1] - eyc[k]);
#pragma GCC ivdep
        for (int k = 0; k < nz; ++k) hyc[k] -= sz * (exc[k + 1] - exc[k]) - sx * (ez_ip[k] - ezc[k]);
#pragma GCC ivdep
        for (int k = 0; k <= nz; ++k) hzc[k] -= sx * ((ey_ip[k] - eyc[k]) - (ex_jp[k] - exc[k]));

        double* __restrict pxz = &psi_hxz_[idx2(i, j) * L_.np];
        double* __restrict pyz = &psi_hyz_[idx2(i, j) * L_.np];
        for (int q = 0; q < L_.np; ++q) {
          const int k = face + q;
          const PmlCoeffs& pc = pml_h_[q];
          pxz[q] = pc.b * pxz[q] + pc.a * (eyc[k + 1] - eyc[k]);
          pyz[q] = pc.b * pyz[q] + pc.a * (exc[k + 1] - exc[k]);
          hxc[k] += sz * pxz[q];
          hyc[k] -= sz * pyz[q];
        }
      }
    }
  }

  void step_e(double source) {
    const int nx = L_.nx;
    const int nz = L_.nz;
    const double rx = 1.0 / L_.dx;
    const double rz = 1.0 / L_.dz;
    const int face = L_.ns + L_.na;
    for (int i = 0; i < nx; ++i) {
      const int im = (i + nx - 1) % nx;
      for (int j = 0; j < nx; ++j) {
        const int jm = (j + nx - 1) % nx;
        const std::size_t c = idx2(i, j) * col_;
        const double* __restrict hxc = &hx_[c];
        const double* __restrict hyc = &hy_[c];
        const double* __restrict hzc = &hz_[c];
        const double* __restrict hx_jm = &hx_[idx2(i, jm) * col_];
        const double* __restrict hy_im = &hy_[idx2(im, j) * col_];
        const double* __restrict hz_im = &hz_[idx2(im, j) * col_];
        const double* __restrict hz_jm = &hz_[idx2(i, jm) * col_];
        double* __restrict exc = &ex_[c];
        double* __restrict eyc = &ey_[c];
        double* __restrict ezc = &ez_[c];
        const UpdateCoeffs* __restrict ct = ce_t_.data();
        const double* __restrict ta = ca_t_.data();
        const double* __restrict tb = cb_t_.data();
        const double* __restrict za = ca_z_.data();
        const double* __restrict zb = cb_z_.data();
#pragma GCC ivdep
        for (int k = 1; k < nz; ++k)
          exc[k] = ta[k] * exc[k] + tb[k] * ((hzc[k] - hz_jm[k]) * rx - (hyc[k] - hyc[k - 1]) * rz);
#pragma GCC ivdep
        for (int k = 1; k < nz; ++k)
          eyc[k] = ta[k] * eyc[k] + tb[k] * ((hxc[k] - hxc[k - 1]) * rz - (hzc[k] - hz_im[k]) * rx);
#pragma GCC ivdep
        for (int k = 0; k < nz; ++k)
          ezc[k] = za[k] * ezc[k] + zb[k] * ((hyc[k] - hy_im[k]) * rx - (hxc[k] - hx_jm[k]) * rx);

        double* __restrict pxz = &psi_exz_[idx2(i, j) * L_.np];
        double* __restrict pyz = &psi_eyz_[idx2(i, j) * L_.np];
        for (int q = 1; q < L_.np; ++q) {
          const int k = face + q;
          const PmlCoeffs& pc = pml_e_[q];
          pxz[q] = pc.b * pxz[q] + pc.a * (hyc[k] - hyc[k - 1]) * rz;
          pyz[q] = pc.b * pyz[q] + pc.a * (hxc[k] - hxc[k - 1]) * rz;
          exc[k] -= ct[k].cb * pxz[q];
          eyc[k] += ct[k].cb * pyz[q];
        }

        const std::size_t m = idx2(i, j);
        if (mask_ex_[m]) exc[L_.ns] = 0.0;
        if (mask_ey_[m]) eyc[L_.ns] = 0.0;
        exc[L_.k_src] += source;
      }
    }
  }

  void plane_average(int k, double& ex_avg, double& ey_avg) const {
    double sx = 0.0, sy = 0.0;
    const std::size_t nxy = static_cast<std::size_t>(L_.nx) * L_.nx;
    for (std::size_t m = 0; m < nxy; ++m) {
      sx += ex_[m * col_ + k];
      sy += ey_[m * col_ + k];
    }
    ex_avg = sx / static_cast<double>(nxy);
    ey_avg = sy / static_cast<double>(nxy);
  }

  double energy() const {
    double e = 0.0;
    const std::size_t nxy = static_cast<std::size_t>(L_.nx) * L_.nx;
    for (std::size_t m = 0; m < nxy; ++m) {
      const std::size_t c = m * col_;
      for (std::size_t k = 0; k < col_; ++k) {
        e += eps_t_[k] * (ex_[c + k] * ex_[c + k] + ey_[c + k] * ey_[c + k]) +
             eps_z_[k] * ez_[c + k] * ez_[c + k] + hx_[c + k] * hx_[c + k] +
             hy_[c + k] * hy_[c + k] + hz_[c + k] * hz_[c + k];
      }
    }
    return e;
  }

 private:
  std::size_t idx2(int i, int j) const { return static_cast<std::size_t>(i) * L_.nx + j; }

  Layout L_;
  std::size_t col_ = 0;
  std::vector<double> ex_, ey_, ez_, hx_, hy_, hz_;
  std::vector<double> psi_exz_, psi_eyz_, psi_hxz_, psi_hyz_;
  std::vector<UpdateCoeffs> ce_t_, ce_z_;
  std::vector<double> ca_t_, cb_t_, ca_z_, cb_z_;  // same, split for vectorized loops
  std::vector<double> eps_t_, eps_z_;
  std::vector<PmlCoeffs> pml_e_, pml_h_;
  std::vector<std::uint8_t> mask_ex_, mask_ey_;
};

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

SolverConfig SolverConfig::plg_band() {
  SolverConfig c;
  c.band_lo = 9.5e9;
  c.band_hi = 12.0e9;
  return c;
}

SolverConfig SolverConfig::desk() {
  SolverConfig c;
  c.lateral_step = 0.5e-3;
  c.vertical_step = 0.5e-3;
  return c;
}

void validate(const SolverConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
  if (!(cfg.patch_pitch > 0 && cfg.pad >= 0 && cfg.lateral_step > 0 && cfg.vertical_step > 0))
    fail("lengths and grid steps must be positive");
  if (!(cfg.substrate_thickness > 0 && cfg.air_height > 0)) fail("substrate and air heights must be positive");
  exact_ratio(cfg.patch_pitch, cfg.lateral_step, "patch_pitch");
  if (cfg.pad > 0) exact_ratio(cfg.pad, cfg.lateral_step, "pad");
  exact_ratio(cfg.substrate_thickness, cfg.vertical_step, "substrate_thickness");
  const int na = exact_ratio(cfg.air_height, cfg.vertical_step, "air_height");
  if (na < 8) fail("air_height must span at least 8 vertical steps");
  if (!(cfg.band_lo > 0 && cfg.band_lo < cfg.band_hi)) fail("require 0 < band_lo < band_hi");
  if (cfg.n_freq < 1) fail("n_freq must be >= 1");
  if (!(kC0 / cfg.band_hi > cfg.cell_size()))
    fail("cell_size " + fmt_g(cfg.cell_size()) + " m admits higher diffraction orders below band_hi");
  if (cfg.substrate_mu_r != 1.0) fail("substrate_mu_r must be 1");
  if (!(cfg.substrate_eps_real >= 1.0 && cfg.substrate_loss_tangent >= 0.0))
    fail("substrate permittivity must have eps' >= 1 and tan d >= 0");
  if (cfg.absorber_cells < 4) fail("absorber_cells must be >= 4");
  if (!(cfg.courant_factor > 0.0 && cfg.courant_factor <= 1.0)) fail("courant_factor must lie in (0,1]");
  if (cfg.max_steps < 1) fail("max_steps must be >= 1");
  if (!(cfg.decay_db < 0.0)) fail("decay_db must be negative");
  if (!(cfg.source_amplitude != 0.0 && std::isfinite(cfg.source_amplitude))) fail("source_amplitude must be finite and non-zero");
}

std::string to_json(const SolverConfig& c) {
  json j;
  j["patch_pitch"] = c.patch_pitch;
  j["patch_thickness"] = c.patch_thickness;
  j["pad"] = c.pad;
  j["substrate_eps_real"] = c.substrate_eps_real;
  j["substrate_loss_tangent"] = c.substrate_loss_tangent;
  j["substrate_mu_r"] = c.substrate_mu_r;
  j["substrate_thickness"] = c.substrate_thickness;
  j["backplate_thickness"] = c.backplate_thickness;
  j["lateral_step"] = c.lateral_step;
  j["vertical_step"] = c.vertical_step;
  j["air_height"] = c.air_height;
  j["absorber_cells"] = c.absorber_cells;
  j["courant_factor"] = c.courant_factor;
  j["band_lo"] = c.band_lo;
  j["band_hi"] = c.band_hi;
  j["n_freq"] = c.n_freq;
  j["max_steps"] = c.max_steps;
  j["decay_db"] = c.decay_db;
  j["source_amplitude"] = c.source_amplitude;
  return j.dump();
}

SolverConfig solver_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("solver config JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "solver config must be a JSON object");
  SolverConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "patch_pitch") c.patch_pitch = v.get<double>();
      else if (k == "patch_thickness") c.patch_thickness = v.get<double>();
      else if (k == "pad") c.pad = v.get<double>();
      else if (k == "substrate_eps_real") c.substrate_eps_real = v.get<double>();
      else if (k == "substrate_loss_tangent") c.substrate_loss_tangent = v.get<double>();
      else if (k == "substrate_mu_r") c.substrate_mu_r = v.get<double>();
      else if (k == "substrate_thickness") c.substrate_thickness = v.get<double>();
      else if (k == "backplate_thickness") c.backplate_thickness = v.get<double>();
      else if (k == "lateral_step") c.lateral_step = v.get<double>();
      else if (k == "vertical_step") c.vertical_step = v.get<double>();
      else if (k == "air_height") c.air_height = v.get<double>();
      else if (k == "absorber_cells") c.absorber_cells = v.get<int>();
      else if (k == "courant_factor") c.courant_factor = v.get<double>();
      else if (k == "band_lo") c.band_lo = v.get<double>();
      else if (k == "band_hi") c.band_hi = v.get<double>();
      else if (k == "n_freq") c.n_freq = v.get<int>();
      else if (k == "max_steps") c.max_steps = v.get<int>();
      else if (k == "decay_db") c.decay_db = v.get<double>();
      else if (k == "source_amplitude") c.source_amplitude = v.get<double>();
      else throw Error(ErrorKind::InvalidConfig, "unknown solver config key '" + k + "'");
    } catch (const json::exception&) {
      throw Error(ErrorKind::InvalidConfig, "solver config key '" + k + "' has the wrong type");
    }
  }
  return c;
}

std::uint64_t fingerprint(const SolverConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fingerprint_hex(const SolverConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint(cfg)));
  return buf;
}

Spectrum simulate_copr(const Pattern& p, const SolverConfig& cfg, SolverStats* stats) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  const Layout L = make_layout(cfg);
  const Pulse pulse = make_pulse(cfg.source_amplitude);
  const int check_every = 50;
  const double threshold = std::pow(10.0, cfg.decay_db / 10.0);

  DeviceGrid grid(L, cfg, p);
  std::vector<double> total_x, total_y;
  total_x.reserve(cfg.max_steps);
  total_y.reserve(cfg.max_steps);
  double peak = 0.0;
  double level = 1.0;
  bool converged = false;
  int n = 0;
  for (; n < cfg.max_steps; ++n) {
    grid.step_h();
    const double t = (n + 1) * L.dt;
    grid.step_e(t <= pulse.end() + 10.0 * L.dt ? pulse(t) : 0.0);
    double ax = 0.0, ay = 0.0;
    grid.plane_average(L.k_obs, ax, ay);
    total_x.push_back(ax);
    total_y.push_back(ay);
    if ((n + 1) % check_every == 0) {
      const double e = grid.energy();
      peak = std::max(peak, e);
      level = peak > 0.0 ? e / peak : 0.0;
      if (t > pulse.end() && level <= threshold) {
        converged = true;
        ++n;
        break;
      }
    }
  }
  const double residual_db = level > 0.0 ? 10.0 * std::log10(level) : -400.0;
  if (!converged)
    throw Error(ErrorKind::Nonconvergence, "field energy at " + fmt_g(residual_db) + " dB after " +
                                               std::to_string(cfg.max_steps) + " steps (threshold " +
                                               fmt_g(cfg.decay_db) + " dB)");

  const std::vector<double> incident = reference_run(L, pulse, n);
  std::vector<double> reflected(n);
  for (int m = 0; m < n; ++m) reflected[m] = total_x[m] - incident[m];

  Spectrum s;
  s.freqs = uniform_freqs(cfg.band_lo, cfg.band_hi, cfg.n_freq);
  const auto inc = dft(incident, s.freqs, L.dt);
  const auto co = dft(reflected, s.freqs, L.dt);
  const auto cross = dft(total_y, s.freqs, L.dt);
  s.values.resize(s.freqs.size());
  std::vector<double> total(s.freqs.size());
  for (std::size_t m = 0; m < s.freqs.size(); ++m) {
    const double pin = std::norm(inc[m]);
    s.values[m] = std::norm(co[m]) / pin;
    total[m] = (std::norm(co[m]) + std::norm(cross[m])) / pin;
  }
  if (stats) {
    stats->steps = n;
    stats->residual_db = residual_db;
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    stats->total_reflectance = std::move(total);
  }
  return s;
}

double analytic_slab_copr(double freq_hz, const SolverConfig& cfg) {
  using cd = std::complex<double>;
  const cd eps = cfg.substrate_eps_real * cd(1.0, -cfg.substrate_loss_tangent);
  const cd n = std::sqrt(eps);
  const cd zd = kEta0 / n;
  const cd beta = 2.0 * std::numbers::pi * freq_hz * n / kC0;
  const cd zin = cd(0.0, 1.0) * zd * std::tan(beta * cfg.substrate_thickness);
  const cd gamma = (zin - kEta0) / (zin + kEta0);
  return std::norm(gamma);
}

ConvergenceReport convergence_report(const Pattern& p, const SolverConfig& cfg,
                                     const std::vector<double>& refinements) {
  if (refinements.empty()) throw Error(ErrorKind::InvalidArgument, "no refinements given");
  ConvergenceReport rep;
  for (double step : refinements) {
    SolverConfig c = cfg;
    c.lateral_step = step;
    c.vertical_step = step;
    rep.steps.push_back(step);
    rep.spectra.push_back(simulate_copr(p, c));
  }
  const std::size_t nf = rep.spectra.front().size();
  rep.max_deviation.assign(nf, 0.0);
  for (std::size_t a = 0; a < rep.spectra.size(); ++a)
    for (std::size_t b = a + 1; b < rep.spectra.size(); ++b)
      for (std::size_t m = 0; m < nf; ++m)
        rep.max_deviation[m] = std::max(rep.max_deviation[m],
                                        std::abs(rep.spectra[a].values[m] - rep.spectra[b].values[m]));
  return rep;
}

}  // namespace metasurf
