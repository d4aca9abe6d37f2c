#include "metasurf/forward_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "metasurf/error.hpp"
#include "metasurf/ops.hpp"

namespace metasurf {

namespace {

using json = nlohmann::ordered_json;
using ad::Tensor;

std::string str(int i) { return std::to_string(i); }

void add_conv_bn(ad::ParamStore& ps, const std::string& name, int out, int in, int k, double slope, Rng& rng) {
  ps.add_param(name + ".w", ad::kaiming_uniform({out, in, k, k}, in * k * k, slope, rng));
  ps.add_param(name + ".bn.gamma", Tensor({out}, 1.0));
  ps.add_param(name + ".bn.beta", Tensor({out}, 0.0));
  ps.add_buffer(name + ".bn.running_mean", Tensor({out}, 0.0));
  ps.add_buffer(name + ".bn.running_var", Tensor({out}, 1.0));
}

Tensor conv_bn(ad::ParamStore& ps, const std::string& name, const Tensor& x, int stride, int pad, bool training) {
  ad::BatchNormState st{ps.get(name + ".bn.running_mean"), ps.get(name + ".bn.running_var")};
  const Tensor y = ad::conv2d(x, ps.get(name + ".w"), stride, pad);
  return ad::batchnorm2d(y, ps.get(name + ".bn.gamma"), ps.get(name + ".bn.beta"), st, training);
}

std::string block_name(int stage, int block) { return "s" + str(stage) + ".b" + str(block); }

void build_residual(const ForwardModelSpec& spec, ad::ParamStore& ps, Rng& rng) {
  const double a = spec.leaky_slope;
  add_conv_bn(ps, "stem", spec.widths[0], 1, 3, a, rng);
  int in = spec.widths[0];
  for (std::size_t s = 0; s < spec.widths.size(); ++s) {
    const int out = spec.widths[s];
    for (int b = 0; b < spec.blocks[s]; ++b) {
      const std::string n = block_name(static_cast<int>(s), b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      add_conv_bn(ps, n + ".conv1", out, in, 3, a, rng);
      add_conv_bn(ps, n + ".conv2", out, out, 3, a, rng);
      if (stride != 1 || in != out) add_conv_bn(ps, n + ".proj", out, in, 1, a, rng);
      in = out;
    }
  }
  ps.add_param("head.w", ad::kaiming_uniform({kSpectrumBins, in}, in, 1.0, rng));
  ps.add_param("head.b", Tensor({kSpectrumBins}, 0.0));
}

Tensor forward_residual(const ForwardModelSpec& spec, ad::ParamStore& ps, const Tensor& x, bool training) {
  const double a = spec.leaky_slope;
  Tensor h = ad::leaky_relu(conv_bn(ps, "stem", x, 1, 1, training), a);
  int in = spec.widths[0];
  for (std::size_t s = 0; s < spec.widths.size(); ++s) {
    const int out = spec.widths[s];
    for (int b = 0; b < spec.blocks[s]; ++b) {
      const std::string n = block_name(static_cast<int>(s), b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      Tensor y = ad::leaky_relu(conv_bn(ps, n + ".conv1", h, stride, 1, training), a);
      y = conv_bn(ps, n + ".conv2", y, 1, 1, training);
      const Tensor skip = (stride != 1 || in != out) ? conv_bn(ps, n + ".proj", h, stride, 0, training) : h;
      h = ad::leaky_relu(ad::add(y, skip), a);
      in = out;
    }
  }
  return ad::sigmoid(ad::dense(ad::global_avg_pool(h), ps.get("head.w"), ps.get("head.b")));
}

// ResNa: conv blocks (first at stride 1, the rest at stride 2), the final map
// read as a sequence over spatial positions, one LSTM layer, dense head.
void build_resna(const ForwardModelSpec& spec, ad::ParamStore& ps, Rng& rng) {
  const double a = spec.leaky_slope;
  int in = 1;
  for (std::size_t k = 0; k < spec.widths.size(); ++k) {
    add_conv_bn(ps, "conv" + str(static_cast<int>(k)), spec.widths[k], in, 3, a, rng);
    in = spec.widths[k];
  }
  const int hid = spec.lstm_hidden;
  ps.add_param("lstm.w_ih", ad::kaiming_uniform({4 * hid, in}, in, 1.0, rng));
  ps.add_param("lstm.w_hh", ad::orthogonal(4 * hid, hid, rng));
  Tensor b({4 * hid}, 0.0);
  for (int i = hid; i < 2 * hid; ++i) b.data()[i] = 1.0;  // forget gate open at start
  ps.add_param("lstm.b", b);
  ps.add_param("head.w", ad::kaiming_uniform({kSpectrumBins, hid}, hid, 1.0, rng));
  ps.add_param("head.b", Tensor({kSpectrumBins}, 0.0));
}

Tensor forward_resna(const ForwardModelSpec& spec, ad::ParamStore& ps, const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t k = 0; k < spec.widths.size(); ++k)
    h = ad::leaky_relu(conv_bn(ps, "conv" + str(static_cast<int>(k)), h, k == 0 ? 1 : 2, 1, training),
                       spec.leaky_slope);
  const int n = h.dim(0), c = h.dim(1), steps = h.dim(2) * h.dim(3);
  const Tensor seq = ad::reshape(h, {n, c, steps});
  const int hid = spec.lstm_hidden;
  Tensor state({n, hid}, 0.0), cell({n, hid}, 0.0);
  for (int t = 0; t < steps; ++t)
    std::tie(state, cell) = ad::lstm_cell(ad::take_step(seq, t), state, cell, ps.get("lstm.w_ih"),
                                          ps.get("lstm.w_hh"), ps.get("lstm.b"));
  return ad::sigmoid(ad::dense(state, ps.get("head.w"), ps.get("head.b")));
}

double batch_mse(const Tensor& pred, const std::vector<const Sample*>& batch, std::vector<double>* per_sample) {
  double total = 0;
  const auto p = pred.data();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double s = 0;
    for (int k = 0; k < kSpectrumBins; ++k) {
      const double d = p[i * kSpectrumBins + k] - batch[i]->copr[k];
      s += d * d;
    }
    s /= kSpectrumBins;
    if (per_sample) per_sample->push_back(s);
    total += s;
  }
  return total;
}

std::vector<double> per_sample_errors(ForwardModel& model, const DatasetFile& ds) {
  std::vector<double> s;
  s.reserve(ds.size());
  constexpr std::size_t kBatch = 128;
  ad::NoGradGuard guard;
  for (std::size_t start = 0; start < ds.size(); start += kBatch) {
    std::vector<const Sample*> batch;
    std::vector<const Pattern*> pats;
    for (std::size_t i = start; i < std::min(ds.size(), start + kBatch); ++i) {
      batch.push_back(&ds.samples[i]);
      pats.push_back(&ds.samples[i].pattern);
    }
    batch_mse(model.forward(encode_batch(pats), false), batch, &s);
  }
  return s;
}

}  // namespace

std::string_view to_string(Arch a) noexcept {
  switch (a) {
    case Arch::Resnet18S: return "Resnet18S";
    case Arch::Resnet34S: return "Resnet34S";
    case Arch::ResNa: return "ResNa";
  }
  return "?";
}

Arch arch_from_string(std::string_view s) {
  for (Arch a : {Arch::Resnet18S, Arch::Resnet34S, Arch::ResNa})
    if (to_string(a) == s) return a;
  throw Error(ErrorKind::InvalidSpec, "unknown architecture '" + std::string(s) + "'");
}

ForwardModelSpec ForwardModelSpec::preset(Arch a) {
  ForwardModelSpec s;
  s.arch = a;
  switch (a) {
    case Arch::Resnet18S: break;
    case Arch::Resnet34S: s.blocks = {3, 4, 4, 3}; break;
    case Arch::ResNa:
      s.widths = {32, 64, 64};
      s.blocks.clear();
      break;
  }
  return s;
}

int ForwardModelSpec::residual_blocks() const {
  return arch == Arch::ResNa ? 0 : std::accumulate(blocks.begin(), blocks.end(), 0);
}

void validate(const ForwardModelSpec& spec) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidSpec, m); };
  if (spec.widths.empty()) fail("widths must not be empty");
  for (int w : spec.widths)
    if (w <= 0) fail("widths must be positive");
  if (!(spec.leaky_slope >= 0 && spec.leaky_slope < 1)) fail("leaky_slope must lie in [0, 1)");
  if (spec.arch == Arch::ResNa) {
    if (!spec.blocks.empty()) fail("ResNa takes no residual blocks");
    if (spec.widths.size() > 4) fail("ResNa supports at most 4 conv blocks on 16x16 inputs");
    if (spec.lstm_hidden <= 0) fail("lstm_hidden must be positive");
  } else {
    if (spec.blocks.size() != spec.widths.size()) fail("blocks and widths must have the same length");
    if (spec.widths.size() > 5) fail("at most 5 stages fit a 16x16 input");
    for (int b : spec.blocks)
      if (b <= 0) fail("every stage needs at least one block");
    if (spec.arch == Arch::Resnet18S && spec.residual_blocks() != 8)
      fail("Resnet18S has exactly 8 residual blocks, got " + str(spec.residual_blocks()));
    if (spec.arch == Arch::Resnet34S && spec.residual_blocks() <= 8)
      fail("Resnet34S needs more than 8 residual blocks");
  }
}

std::string to_json(const ForwardModelSpec& spec) {
  json j;
  j["arch"] = to_string(spec.arch);
  j["widths"] = spec.widths;
  j["blocks"] = spec.blocks;
  j["leaky_slope"] = spec.leaky_slope;
  j["lstm_hidden"] = spec.lstm_hidden;
  return j.dump();
}

ForwardModelSpec forward_spec_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("model JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "model config must be an object");
  const Arch arch = arch_from_string(j.value("arch", std::string("Resnet18S")));
  ForwardModelSpec s = ForwardModelSpec::preset(arch);
  for (auto& [key, val] : j.items()) {
    try {
      if (key == "arch") continue;
      else if (key == "widths") s.widths = val.get<std::vector<int>>();
      else if (key == "blocks") s.blocks = val.get<std::vector<int>>();
      else if (key == "leaky_slope") s.leaky_slope = val.get<double>();
      else if (key == "lstm_hidden") s.lstm_hidden = val.get<int>();
      else throw Error(ErrorKind::InvalidConfig, "unknown model key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, "model key '" + key + "': " + e.what());
    }
  }
  validate(s);
  return s;
}

ForwardModel ForwardModel::build(const ForwardModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  ForwardModel m;
  m.spec = spec;
  m.params.seed = seed;
  m.params.meta_json = to_json(spec);
  Rng rng(hash64(seed, 0x6d6f64656c));
  if (spec.arch == Arch::ResNa)
    build_resna(spec, m.params, rng);
  else
    build_residual(spec, m.params, rng);
  return m;
}

Tensor ForwardModel::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != kGridSide || x.dim(3) != kGridSide)
    throw Error(ErrorKind::ShapeMismatch, "forward model expects [N,1,16,16], got " + ad::shape_str(x.shape()));
  return spec.arch == Arch::ResNa ? forward_resna(spec, params, x, training)
                                  : forward_residual(spec, params, x, training);
}

void ForwardModel::save(const std::filesystem::path& dir) const { params.save(dir); }

ForwardModel ForwardModel::load(const std::filesystem::path& dir) {
  ForwardModel m;
  m.params = ad::ParamStore::load(dir);
  m.spec = forward_spec_from_json(m.params.meta_json);
  // Structure check: a fresh build must have the same tensor names and shapes.
  const ForwardModel ref = build(m.spec, 0);
  const auto& a = ref.params.entries();
  const auto& b = m.params.entries();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i)
    same = a[i].name == b[i].name && a[i].tensor.shape() == b[i].tensor.shape();
  if (!same) throw Error(ErrorKind::InvalidSpec, "checkpoint tensors do not match its model spec");
  return m;
}

Tensor encode_batch(const std::vector<const Pattern*>& patterns) {
  const int n = static_cast<int>(patterns.size());
  Tensor x({n, 1, kGridSide, kGridSide});
  auto d = x.data();
  for (int i = 0; i < n; ++i) {
    const auto enc = encode_pm1(*patterns[i]);
    std::copy(enc.begin(), enc.end(), d.begin() + static_cast<std::size_t>(i) * kGridCells);
  }
  return x;
}

Tensor target_batch(const std::vector<const Sample*>& samples) {
  const int n = static_cast<int>(samples.size());
  Tensor y({n, kSpectrumBins});
  auto d = y.data();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kSpectrumBins; ++k) d[static_cast<std::size_t>(i) * kSpectrumBins + k] = samples[i]->copr[k];
  return y;
}

std::array<double, kSpectrumBins> predict(ForwardModel& model, const Pattern& p) {
  return predict_all(model, {&p}).front();
}

std::vector<std::array<double, kSpectrumBins>> predict_all(ForwardModel& model,
                                                           const std::vector<const Pattern*>& patterns,
                                                           std::size_t batch) {
  ad::NoGradGuard guard;
  std::vector<std::array<double, kSpectrumBins>> out;
  out.reserve(patterns.size());
  for (std::size_t start = 0; start < patterns.size(); start += batch) {
    const std::vector<const Pattern*> part(patterns.begin() + start,
                                           patterns.begin() + std::min(patterns.size(), start + batch));
    const Tensor y = model.forward(encode_batch(part), false);
    for (std::size_t i = 0; i < part.size(); ++i) {
      std::array<double, kSpectrumBins> row;
      std::copy_n(y.data().begin() + i * kSpectrumBins, kSpectrumBins, row.begin());
      out.push_back(row);
    }
  }
  return out;
}

std::string to_json(const TrainHyper& h) {
  json j;
  j["lr"] = h.lr;
  j["batch"] = h.batch;
  j["max_epochs"] = h.max_epochs;
  j["patience"] = h.patience;
  j["seed"] = h.seed;
  return j.dump();
}

TrainHyper train_hyper_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("train JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "train config must be an object");
  TrainHyper h;
  for (auto& [key, val] : j.items()) {
    try {
      if (key == "lr") h.lr = val.get<double>();
      else if (key == "batch") h.batch = val.get<std::size_t>();
      else if (key == "max_epochs") h.max_epochs = val.get<int>();
      else if (key == "patience") h.patience = val.get<int>();
      else if (key == "seed") h.seed = val.get<std::uint64_t>();
      else throw Error(ErrorKind::InvalidConfig, "unknown train key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, "train key '" + key + "': " + e.what());
    }
  }
  if (!(h.lr > 0) || h.batch == 0 || h.max_epochs <= 0 || h.patience <= 0)
    throw Error(ErrorKind::InvalidConfig, "train: lr, batch, max_epochs and patience must be positive");
  return h;
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_mse,val_mse,seconds\n";
  for (const auto& e : epochs) os << e.epoch << ',' << e.train_mse << ',' << e.val_mse << ',' << e.seconds << '\n';
  return os.str();
}

std::string TrainReport::to_json() const {
  json j;
  j["best_epoch"] = best_epoch;
  j["best_val_mse"] = best_val_mse;
  j["wall_seconds"] = wall_seconds;
  j["seed"] = seed;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(train_fingerprint));
  j["train_fingerprint"] = buf;
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(val_fingerprint));
  j["val_fingerprint"] = buf;
  j["param_count"] = param_count;
  if (has_test) j["test_mse"] = test_mse;
  json ep = json::array();
  for (const auto& e : epochs)
    ep.push_back({{"epoch", e.epoch}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}, {"seconds", e.seconds}});
  j["epochs"] = ep;
  return j.dump(2);
}

std::pair<ForwardModel, TrainReport> train_forward(const ForwardModelSpec& spec, const DatasetFile& train,
                                                   const DatasetFile& val, const TrainHyper& hyper,
                                                   const EpochFn& on_epoch) {
  using clock = std::chrono::steady_clock;
  if (train.size() == 0) throw Error(ErrorKind::EmptyInput, "training set is empty");
  if (val.size() > 0 && train.solver_fingerprint() != val.solver_fingerprint())
    throw Error(ErrorKind::FingerprintMismatch, "training and validation sets come from different solver configs");
  if (hyper.batch == 0 || hyper.max_epochs <= 0 || hyper.patience <= 0 || !(hyper.lr > 0))
    throw Error(ErrorKind::InvalidConfig, "train: lr, batch, max_epochs and patience must be positive");

  const auto t0 = clock::now();
  ForwardModel model = ForwardModel::build(spec, hyper.seed);
  const DatasetFile& select_on = val.size() > 0 ? val : train;

  TrainReport rep;
  rep.seed = hyper.seed;
  rep.n_train = train.size();
  rep.n_val = val.size();
  rep.train_fingerprint = content_fingerprint(train);
  rep.val_fingerprint = content_fingerprint(val);
  rep.param_count = model.params.param_count();

  ad::AdamConfig adam;
  adam.lr = hyper.lr;
  ad::ParamStore best = model.params.clone();
  rep.best_val_mse = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    const auto e0 = clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hash64(hyper.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      std::vector<const Sample*> batch;
      std::vector<const Pattern*> pats;
      for (std::size_t i = start; i < std::min(order.size(), start + hyper.batch); ++i) {
        batch.push_back(&train.samples[order[i]]);
        pats.push_back(&train.samples[order[i]].pattern);
      }
      model.params.zero_grad();
      const Tensor pred = model.forward(encode_batch(pats), true);
      const Tensor loss = ad::mse_loss(pred, target_batch(batch));
      ad::backward(loss);
      ad::adam_step(model.params, adam);
      loss_sum += loss.item() * static_cast<double>(batch.size());
    }
    model.params.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / static_cast<double>(train.size());
    const auto errs = per_sample_errors(model, select_on);
    rec.val_mse = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
    rec.seconds = std::chrono::duration<double>(clock::now() - e0).count();
    rep.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_mse) || !std::isfinite(rec.train_mse))
      throw Error(ErrorKind::Divergence, "non-finite loss at epoch " + str(epoch));

    if (rec.val_mse < rep.best_val_mse) {
      rep.best_val_mse = rec.val_mse;
      rep.best_epoch = epoch;
      best = model.params.clone();
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  model.params = std::move(best);
  rep.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return {std::move(model), rep};
}

EvalResult summarize_errors(std::vector<double> s) {
  EvalResult r;
  r.s = std::move(s);
  if (r.s.empty()) return r;
  r.mean = std::accumulate(r.s.begin(), r.s.end(), 0.0) / static_cast<double>(r.s.size());
  r.max = *std::max_element(r.s.begin(), r.s.end());
  std::vector<double> sorted = r.s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return r;
}

EvalResult evaluate(ForwardModel& model, const DatasetFile& test) {
  return summarize_errors(per_sample_errors(model, test));
}

}  // namespace metasurf
