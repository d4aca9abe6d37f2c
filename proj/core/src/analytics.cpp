#include "metasurf/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "metasurf/error.hpp"

namespace metasurf {

namespace {

using Vec = std::array<double, kSpectrumBins>;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string BinStats::to_csv() const {
  std::string out = "freq_hz,mean,variance,kurtosis\n";
  for (std::size_t k = 0; k < freqs.size(); ++k)
    out += num(freqs[k]) + ',' + num(mean[k]) + ',' + num(variance[k]) + ',' +
           (kurtosis[k] ? num(*kurtosis[k]) : std::string()) + '\n';
  return out;
}

BinStats bin_stats(const std::vector<Spectrum>& spectra) {
  if (spectra.size() < 2) throw Error(ErrorKind::EmptyInput, "bin statistics need at least 2 spectra");
  const Spectrum& ref = spectra.front();
  for (std::size_t i = 1; i < spectra.size(); ++i)
    if (!same_grid(ref, spectra[i]) || spectra[i].values.size() != ref.freqs.size())
      throw Error(ErrorKind::GridMismatch, "spectrum " + std::to_string(i) + " is on a different frequency grid");
  BinStats st;
  st.freqs = ref.freqs;
  st.count = spectra.size();
  const std::size_t nb = ref.freqs.size();
  const double n = static_cast<double>(spectra.size());
  st.mean.assign(nb, 0.0);
  st.variance.assign(nb, 0.0);
  st.kurtosis.assign(nb, std::nullopt);
  for (std::size_t k = 0; k < nb; ++k) {
    double s = 0;
    for (const auto& sp : spectra) s += 1.0 - sp.values[k];
    const double m = s / n;
    double m2 = 0, m4 = 0;
    for (const auto& sp : spectra) {
      const double d = (1.0 - sp.values[k]) - m;
      const double d2 = d * d;
      m2 += d2;
      m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    st.mean[k] = m;
    st.variance[k] = m2;
    if (m2 >= 1e-12) st.kurtosis[k] = m4 / (m2 * m2);
  }
  return st;
}

BinStats bin_stats(const DatasetFile& ds) {
  std::vector<Spectrum> spectra;
  spectra.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) spectra.push_back(ds.spectrum(i));
  return bin_stats(spectra);
}

std::string Histogram::to_csv() const {
  std::string out = "lo,hi,count,height\n";
  for (std::size_t b = 0; b < heights.size(); ++b)
    out += num(edges[b]) + ',' + num(edges[b + 1]) + ',' + std::to_string(counts[b]) + ',' + num(heights[b]) + '\n';
  return out;
}

Histogram error_histogram(const std::vector<double>& errors, int n_bins) {
  if (errors.empty()) throw Error(ErrorKind::EmptyInput, "histogram of no errors");
  if (n_bins < 1) throw Error(ErrorKind::InvalidArgument, "n_bins must be >= 1");
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (double e : errors) {
    if (!(e >= 0) || !std::isfinite(e)) throw Error(ErrorKind::InvalidArgument, "errors must be finite and >= 0");
    if (e > 0) lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  if (hi == 0) lo = hi = 1e-12;  // all zero: a nominal decade at the bottom
  double a = std::log10(lo), b = std::log10(hi);
  if (b - a < 1e-12) {
    a -= 0.5;
    b += 0.5;
  }
  Histogram h;
  for (int i = 0; i <= n_bins; ++i) h.edges.push_back(std::pow(10.0, a + (b - a) * i / n_bins));
  h.counts.assign(n_bins, 0);
  for (double e : errors) {
    int bin = 0;
    if (e > 0) bin = static_cast<int>(std::floor((std::log10(e) - a) / (b - a) * n_bins));
    h.counts[std::clamp(bin, 0, n_bins - 1)] += 1;
  }
  const double top = static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()));
  for (auto c : h.counts) h.heights.push_back(c / top);
  return h;
}

BenchModel bench_model(const std::string& name, PatternClass cls, ForwardModel& model, const DatasetFile& train) {
  BenchModel m;
  m.name = name;
  m.train_class = cls;
  m.arch = std::string(to_string(model.spec.arch));
  m.freqs = train.freqs();
  m.solver_fingerprint = train.solver_fingerprint();
  m.predict = [&model](const DatasetFile& ds) {
    std::vector<const Pattern*> ptrs;
    for (const auto& s : ds.samples) ptrs.push_back(&s.pattern);
    return predict_all(model, ptrs);
  };
  return m;
}

BenchModel bench_model(const std::string& name, PatternClass cls, const ForestModel& model, const DatasetFile& train) {
  BenchModel m;
  m.name = name;
  m.train_class = cls;
  m.arch = "RFR";
  m.freqs = train.freqs();
  m.solver_fingerprint = train.solver_fingerprint();
  m.predict = [&model](const DatasetFile& ds) {
    std::vector<Vec> out;
    out.reserve(ds.size());
    for (const auto& s : ds.samples) out.push_back(predict_rfr(model, s.pattern));
    return out;
  };
  return m;
}

double mean_mse(const DatasetFile& ds, const std::vector<Vec>& pred) {
  if (pred.size() != ds.size())
    throw Error(ErrorKind::ShapeMismatch, std::to_string(pred.size()) + " predictions for " +
                                              std::to_string(ds.size()) + " samples");
  if (ds.size() == 0) throw Error(ErrorKind::EmptyInput, "empty test set");
  double total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double s = 0;
    for (int k = 0; k < kSpectrumBins; ++k) {
      const double d = pred[i][k] - ds.samples[i].copr[k];
      s += d * d;
    }
    total += s / kSpectrumBins;
  }
  return total / static_cast<double>(ds.size());
}

std::vector<Vec> constant_mean_predictions(const DatasetFile& train, const DatasetFile& test) {
  if (train.size() == 0) throw Error(ErrorKind::EmptyInput, "empty training set");
  Vec m{};
  for (const auto& s : train.samples)
    for (int k = 0; k < kSpectrumBins; ++k) m[k] += s.copr[k];
  for (double& v : m) v /= static_cast<double>(train.size());
  return std::vector<Vec>(test.size(), m);
}

std::string CrossBenchMatrix::to_csv() const {
  std::string out = "model,train_class,arch";
  for (const auto& c : cols) out += ',' + c;
  out += '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += rows[r].name + ',' + std::string(to_string(rows[r].train_class)) + ',' + rows[r].arch;
    for (double v : mse[r]) out += ',' + num(v);
    out += '\n';
  }
  return out;
}

std::optional<bool> CrossBenchMatrix::in_domain_is_row_min(std::size_t row) const {
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (col_classes[c] == rows[row].train_class)
      return *std::min_element(mse[row].begin(), mse[row].end()) == mse[row][c];
  return std::nullopt;
}

std::string CrossBenchMatrix::report() const {
  std::vector<std::size_t> col_min(cols.size(), 0);
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (mse[r][c] < mse[col_min[c]][c]) col_min[c] = r;
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-16s", "model");
  os << buf;
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, " %14s", c.c_str());
    os << buf;
  }
  os << "  in-domain row min\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%-16s", rows[r].name.c_str());
    os << buf;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::snprintf(buf, sizeof buf, " %13.6g%c", mse[r][c], col_min[c] == r ? '*' : ' ');
      os << buf;
    }
    const auto ok = in_domain_is_row_min(r);
    os << "  " << (ok ? (*ok ? "yes" : "no") : "n/a") << '\n';
  }
  os << "* = column minimum\n";
  for (const auto& w : warnings) os << "warning: " << w << '\n';
  return os.str();
}

CrossBenchMatrix cross_benchmark(const std::vector<BenchModel>& models, const std::vector<TestSet>& tests) {
  if (models.empty() || tests.empty()) throw Error(ErrorKind::EmptyInput, "cross benchmark needs models and test sets");
  CrossBenchMatrix m;
  for (const auto& t : tests) {
    if (std::find(m.cols.begin(), m.cols.end(), t.name) != m.cols.end())
      throw Error(ErrorKind::InvalidArgument, "duplicate test set name " + t.name);
    m.cols.push_back(t.name);
    m.col_classes.push_back(t.cls);
  }
  for (const auto& model : models) {
    for (const auto& r : m.rows)
      if (r.name == model.name) throw Error(ErrorKind::InvalidArgument, "duplicate model name " + model.name);
    std::vector<double> row;
    for (const auto& t : tests) {
      const auto freqs = t.data->freqs();
      bool same = freqs.size() == model.freqs.size();
      for (std::size_t k = 0; same && k < freqs.size(); ++k)
        same = std::abs(freqs[k] - model.freqs[k]) <= 1e-9 * std::abs(freqs[k]);
      if (!same) throw Error(ErrorKind::GridMismatch, "model " + model.name + " and test set " + t.name +
                                                          " use different frequency grids");
      if (t.data->solver_fingerprint() != model.solver_fingerprint)
        m.warnings.push_back("model " + model.name + " and test set " + t.name + " come from different solver configs");
      row.push_back(mean_mse(*t.data, model.predict(*t.data)));
    }
    BenchModel label = model;
    label.predict = nullptr;
    m.rows.push_back(std::move(label));
    m.mse.push_back(std::move(row));
  }
  return m;
}

std::string ScalingTable::to_csv() const {
  std::string out = "size,best_epoch";
  for (const auto& c : cols) out += ',' + c;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.size) + ',' + std::to_string(r.best_epoch);
    for (double v : r.mse) out += ',' + num(v);
    out += '\n';
  }
  return out;
}

ScalingTable scaling_study(const DatasetFile& pool, const std::vector<std::size_t>& sizes, const DatasetFile& val,
                           const std::vector<TestSet>& tests, const ForwardModelSpec& spec, const TrainHyper& hyper) {
  if (sizes.empty()) throw Error(ErrorKind::EmptyInput, "scaling study needs at least one size");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || (i > 0 && sizes[i] <= sizes[i - 1]))
      throw Error(ErrorKind::InvalidArgument, "sizes must be positive and strictly increasing");
    if (sizes[i] > pool.size())
      throw Error(ErrorKind::InvalidArgument, "size " + std::to_string(sizes[i]) + " exceeds the pool of " +
                                                  std::to_string(pool.size()));
  }
  ScalingTable table;
  for (const auto& t : tests) table.cols.push_back(t.name);
  for (std::size_t n : sizes) {
    auto [model, rep] = train_forward(spec, head(pool, n), val, hyper);
    ScalingRow row;
    row.size = n;
    row.best_epoch = rep.best_epoch;
    for (const auto& t : tests) row.mse.push_back(evaluate(model, *t.data).mean);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace metasurf
