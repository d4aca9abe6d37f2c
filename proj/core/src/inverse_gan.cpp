#include "metasurf/inverse_gan.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metasurf/em_solver.hpp"
#include "metasurf/error.hpp"
#include "metasurf/ops.hpp"

namespace metasurf {

namespace {

using json = nlohmann::ordered_json;
using ad::Tensor;
using Vec = std::array<double, kSpectrumBins>;

std::string str(int i) { return std::to_string(i); }

// Transposed-conv geometry of the five generator blocks: (kernel, stride, pad).
constexpr std::array<std::array<int, 3>, 5> kGenBlocks{{{2, 1, 0}, {4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {3, 1, 1}}};

std::string gen_spec_json(const GeneratorSpec& g) {
  json j;
  j["noise_dim"] = g.noise_dim;
  j["widths"] = g.widths;
  j["leaky_slope"] = g.leaky_slope;
  return j.dump();
}

GeneratorSpec gen_spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  GeneratorSpec g;
  g.noise_dim = j.at("noise_dim").get<int>();
  g.widths = j.at("widths").get<std::vector<int>>();
  g.leaky_slope = j.at("leaky_slope").get<double>();
  validate(g);
  return g;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor cond_batch(const std::vector<Vec>& targets) {
  Tensor c({static_cast<int>(targets.size()), kSpectrumBins});
  auto d = c.data();
  for (std::size_t i = 0; i < targets.size(); ++i) std::copy(targets[i].begin(), targets[i].end(), d.begin() + i * kSpectrumBins);
  return c;
}

// Binarized eval-mode generator outputs for (targets, noise rows first..).
std::vector<Pattern> generate_patterns(Generator& gen, const std::vector<Vec>& targets, std::uint64_t seed,
                                       std::uint64_t first) {
  ad::NoGradGuard guard;
  const Tensor out = gen.forward(cond_batch(targets), noise_batch(targets.size(), gen.spec.noise_dim, seed, first), false);
  std::vector<Pattern> pats;
  for (std::size_t i = 0; i < targets.size(); ++i)
    pats.push_back(binarize(out.data().subspan(i * kGridCells, kGridCells)));
  return pats;
}

double msd(const Vec& a, const Vec& b) {
  double s = 0;
  for (int k = 0; k < kSpectrumBins; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s / kSpectrumBins;
}

}  // namespace

void validate(const GeneratorSpec& g) {
  if (g.noise_dim < 1) throw Error(ErrorKind::InvalidSpec, "generator noise_dim must be >= 1");
  if (g.widths.size() != 4) throw Error(ErrorKind::InvalidSpec, "generator needs 4 hidden widths (5 blocks)");
  for (int w : g.widths)
    if (w < 1) throw Error(ErrorKind::InvalidSpec, "generator widths must be positive");
}

void validate(const JudgeSpec& j) {
  if (j.widths.empty() || j.widths.size() > 6) throw Error(ErrorKind::InvalidSpec, "judge needs 1 to 6 conv blocks");
  for (int w : j.widths)
    if (w < 1) throw Error(ErrorKind::InvalidSpec, "judge widths must be positive");
}

std::string to_json(const InverseHyper& h) {
  json j;
  j["pretrain_epochs"] = h.pretrain_epochs;
  j["epochs"] = h.epochs;
  j["batch"] = h.batch;
  j["lr"] = h.lr;
  j["beta1"] = h.beta1;
  j["lambda"] = h.lambda;
  j["n_val_targets"] = h.n_val_targets;
  j["seed"] = h.seed;
  return j.dump();
}

InverseHyper inverse_hyper_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("inverse JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "inverse config must be an object");
  InverseHyper h;
  for (auto& [key, val] : j.items()) {
    try {
      if (key == "pretrain_epochs") h.pretrain_epochs = val.get<int>();
      else if (key == "epochs") h.epochs = val.get<int>();
      else if (key == "batch") h.batch = val.get<std::size_t>();
      else if (key == "lr") h.lr = val.get<double>();
      else if (key == "beta1") h.beta1 = val.get<double>();
      else if (key == "lambda") h.lambda = val.get<double>();
      else if (key == "n_val_targets") h.n_val_targets = val.get<std::size_t>();
      else if (key == "seed") h.seed = val.get<std::uint64_t>();
      else throw Error(ErrorKind::InvalidConfig, "unknown inverse key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, "inverse key '" + key + "': " + e.what());
    }
  }
  if (h.pretrain_epochs < 0 || h.epochs < 0 || h.pretrain_epochs + h.epochs < 1 || h.batch < 2 || !(h.lr > 0) ||
      !(h.lambda >= 0) || h.n_val_targets < 1)
    throw Error(ErrorKind::InvalidConfig, "inverse: need >= 1 epoch, batch >= 2, lr > 0, lambda >= 0");
  return h;
}

Generator Generator::build(const GeneratorSpec& spec, std::uint64_t seed) {
  validate(spec);
  Generator g;
  g.spec = spec;
  g.params.seed = seed;
  g.params.meta_json = gen_spec_json(spec);
  Rng rng(hash64(seed, 0x67656e));
  int in = kSpectrumBins + spec.noise_dim;
  for (int b = 0; b < 5; ++b) {
    const int out = b < 4 ? spec.widths[b] : 1;
    const int k = kGenBlocks[b][0];
    const std::string n = "t" + str(b);
    g.params.add_param(n + ".w", ad::kaiming_uniform({in, out, k, k}, in * k * k, spec.leaky_slope, rng));
    if (b < 4) {
      g.params.add_param(n + ".bn.gamma", Tensor({out}, 1.0));
      g.params.add_param(n + ".bn.beta", Tensor({out}, 0.0));
      g.params.add_buffer(n + ".bn.running_mean", Tensor({out}, 0.0));
      g.params.add_buffer(n + ".bn.running_var", Tensor({out}, 1.0));
    } else {
      g.params.add_param(n + ".b", Tensor({out}, 0.0));
    }
    in = out;
  }
  return g;
}

Tensor Generator::forward(const Tensor& cond, const Tensor& noise, bool training) {
  if (cond.rank() != 2 || cond.dim(1) != kSpectrumBins || noise.rank() != 2 || noise.dim(1) != spec.noise_dim ||
      noise.dim(0) != cond.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "generator inputs " + ad::shape_str(cond.shape()) + " and " +
                                              ad::shape_str(noise.shape()));
  const int n = cond.dim(0);
  const Tensor c = ad::add(ad::scale(cond, 2.0), Tensor(cond.shape(), -1.0));
  Tensor h = ad::reshape(ad::concat({c, noise}, 1), {n, kSpectrumBins + spec.noise_dim, 1, 1});
  for (int b = 0; b < 5; ++b) {
    const std::string name = "t" + str(b);
    h = ad::conv_transpose2d(h, params.get(name + ".w"), kGenBlocks[b][1], kGenBlocks[b][2]);
    if (b < 4) {
      ad::BatchNormState st{params.get(name + ".bn.running_mean"), params.get(name + ".bn.running_var")};
      h = ad::leaky_relu(ad::batchnorm2d(h, params.get(name + ".bn.gamma"), params.get(name + ".bn.beta"), st, training),
                         spec.leaky_slope);
    } else {
      h = ad::tanh(ad::add_channel_bias(h, params.get(name + ".b")));
    }
  }
  return h;
}

void Generator::save(const std::filesystem::path& dir) const { params.save(dir); }

Generator Generator::load(const std::filesystem::path& dir) {
  Generator g;
  g.params = ad::ParamStore::load(dir);
  try {
    g.spec = gen_spec_from_json(g.params.meta_json);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("generator checkpoint meta: ") + e.what());
  }
  const Generator ref = build(g.spec, 0);
  bool same = ref.params.entries().size() == g.params.entries().size();
  for (std::size_t i = 0; same && i < ref.params.entries().size(); ++i)
    same = ref.params.entries()[i].name == g.params.entries()[i].name &&
           ref.params.entries()[i].tensor.shape() == g.params.entries()[i].tensor.shape();
  if (!same) throw Error(ErrorKind::InvalidSpec, "generator checkpoint does not match its spec");
  return g;
}

Judge Judge::build(const JudgeSpec& spec, std::uint64_t seed) {
  validate(spec);
  Judge j;
  j.spec = spec;
  j.params.seed = seed;
  Rng rng(hash64(seed, 0x6a756467));
  int in = 1, side = kGridSide;
  for (std::size_t b = 0; b < spec.widths.size(); ++b) {
    const std::string n = "c" + str(static_cast<int>(b));
    j.params.add_param(n + ".w", ad::kaiming_uniform({spec.widths[b], in, 3, 3}, in * 9, spec.leaky_slope, rng));
    j.params.add_param(n + ".b", Tensor({spec.widths[b]}, 0.0));
    in = spec.widths[b];
    if (side > 2) side /= 2;
  }
  const int flat = in * side * side;
  j.params.add_param("head.w", ad::kaiming_uniform({1, flat}, flat, 1.0, rng));
  j.params.add_param("head.b", Tensor({1}, 0.0));
  return j;
}

Tensor Judge::forward(const Tensor& x) {
  Tensor h = x;
  for (std::size_t b = 0; b < spec.widths.size(); ++b) {
    const std::string n = "c" + str(static_cast<int>(b));
    const int stride = h.dim(2) > 2 ? 2 : 1;
    h = ad::leaky_relu(ad::add_channel_bias(ad::conv2d(h, params.get(n + ".w"), stride, 1), params.get(n + ".b")),
                       spec.leaky_slope);
  }
  const int n = h.dim(0);
  h = ad::reshape(h, {n, static_cast<int>(h.numel()) / n});
  return ad::dense(h, params.get("head.w"), params.get("head.b"));
}

Tensor noise_batch(std::size_t n, int dim, std::uint64_t seed, std::uint64_t first_index) {
  Tensor z({static_cast<int>(n), dim});
  auto d = z.data();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(hash64(seed, first_index + i));
    for (int k = 0; k < dim; ++k) d[i * dim + k] = rng.uniform(-1.0, 1.0);
  }
  return z;
}

Pattern binarize(std::span<const double> values) {
  if (values.size() != kGridCells)
    throw Error(ErrorKind::ShapeMismatch, "binarize expects 256 values, got " + std::to_string(values.size()));
  Pattern p;
  for (int i = 0; i < kGridCells; ++i) p.set(i / kGridSide, i % kGridSide, values[i] > 0.0);
  p.tag = PatternClass::OTHER;
  return p;
}

std::string InverseHistory::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,closed_loop,judge_loss,gen_adv_loss,train_d,judge_accuracy,val_median_d,seconds\n";
  for (const auto& e : epochs)
    os << e.epoch << ',' << (e.closed_loop ? 1 : 0) << ',' << e.judge_loss << ',' << e.gen_adv_loss << ','
       << e.train_d << ',' << e.judge_accuracy << ',' << e.val_median_d << ',' << e.seconds << '\n';
  return os.str();
}

std::string InverseHistory::to_json() const {
  json j;
  j["best_epoch"] = best_epoch;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(evaluator_hash_before));
  j["evaluator_hash_before"] = buf;
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(evaluator_hash_after));
  j["evaluator_hash_after"] = buf;
  json ep = json::array();
  for (const auto& e : epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"closed_loop", e.closed_loop},
                  {"judge_loss", e.judge_loss},
                  {"gen_adv_loss", e.gen_adv_loss},
                  {"train_d", e.train_d},
                  {"judge_accuracy", e.judge_accuracy},
                  {"val_median_d", e.val_median_d},
                  {"seconds", e.seconds}});
  j["epochs"] = ep;
  return j.dump(2);
}

double median_design_error(Generator& gen, ForwardModel& evaluator, const std::vector<Vec>& targets,
                           std::uint64_t seed) {
  const auto pats = generate_patterns(gen, targets, seed, 0);
  std::vector<const Pattern*> ptrs;
  for (const auto& p : pats) ptrs.push_back(&p);
  const auto pred = predict_all(evaluator, ptrs);
  std::vector<double> d;
  for (std::size_t i = 0; i < targets.size(); ++i) d.push_back(msd(targets[i], pred[i]));
  return median(d);
}

std::pair<Generator, InverseHistory> train_inverse(const GeneratorSpec& gspec, const JudgeSpec& jspec,
                                                   ForwardModel& evaluator, const DatasetFile& train,
                                                   const DatasetFile& val, const InverseHyper& hyper,
                                                   const InverseEpochFn& on_epoch) {
  using clock = std::chrono::steady_clock;
  if (train.size() < 2) throw Error(ErrorKind::EmptyInput, "inverse training needs at least 2 samples");
  if (val.size() == 0) throw Error(ErrorKind::EmptyInput, "inverse training needs held-out targets");
  if (hyper.batch < 2 || hyper.pretrain_epochs + hyper.epochs < 1)
    throw Error(ErrorKind::InvalidConfig, "inverse: batch >= 2 and at least one epoch required");

  Generator gen = Generator::build(gspec, hash64(hyper.seed, 1));
  Judge judge = Judge::build(jspec, hash64(hyper.seed, 2));

  InverseHistory hist;
  hist.evaluator_hash_before = evaluator.params.hash();
  evaluator.params.set_trainable(false);

  std::vector<Vec> val_targets;
  for (std::size_t i = 0; i < std::min(val.size(), hyper.n_val_targets); ++i) {
    Vec v;
    std::copy(val.samples[i].copr.begin(), val.samples[i].copr.end(), v.begin());
    val_targets.push_back(v);
  }
  const std::uint64_t val_seed = hash64(hyper.seed, 3);

  ad::AdamConfig adam;
  adam.lr = hyper.lr;
  adam.beta1 = hyper.beta1;
  ad::ParamStore best = gen.params.clone();
  double best_d = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  const int total_epochs = hyper.pretrain_epochs + hyper.epochs;
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const auto t0 = clock::now();
    InverseEpoch rec;
    rec.epoch = epoch;
    rec.closed_loop = epoch > hyper.pretrain_epochs && hyper.lambda > 0;
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hash64(hyper.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double jl = 0, gl = 0, dsum = 0;
    std::size_t correct = 0, judged = 0, seen = 0, batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += hyper.batch) {
      std::vector<const Sample*> batch;
      std::vector<const Pattern*> pats;
      for (std::size_t i = start; i < std::min(order.size(), start + hyper.batch); ++i) {
        batch.push_back(&train.samples[order[i]]);
        pats.push_back(&train.samples[order[i]].pattern);
      }
      if (batch.size() < 2) break;
      const Tensor cond = target_batch(batch);
      const Tensor real = encode_batch(pats);
      const Tensor noise = noise_batch(batch.size(), gspec.noise_dim, hash64(hyper.seed, 7 + epoch),
                                       static_cast<std::uint64_t>(start));
      const Tensor fake = gen.forward(cond, noise, true);

      // Judge update on real vs detached fakes.
      judge.params.zero_grad();
      const Tensor real_logits = judge.forward(real);
      const Tensor fake_logits = judge.forward(fake.detach());
      const Tensor jloss = ad::scale(ad::add(ad::bce_with_logits(real_logits, 1.0), ad::bce_with_logits(fake_logits, 0.0)), 0.5);
      ad::backward(jloss);
      ad::adam_step(judge.params, adam);
      for (double z : real_logits.data()) correct += z > 0;
      for (double z : fake_logits.data()) correct += z < 0;
      judged += 2 * batch.size();

      // Generator update: non-saturating adversarial term plus lambda * d.
      gen.params.zero_grad();
      judge.params.set_trainable(false);
      Tensor gloss = ad::bce_with_logits(judge.forward(fake), 1.0);
      const double adv = gloss.item();
      if (rec.closed_loop) {
        const Tensor d = ad::mse_loss(evaluator.forward(fake, false), cond);
        dsum += d.item() * static_cast<double>(batch.size());
        gloss = ad::add(gloss, ad::scale(d, hyper.lambda));
      }
      ad::backward(gloss);
      judge.params.set_trainable(true);
      judge.params.zero_grad();
      ad::adam_step(gen.params, adam);

      if (!std::isfinite(jloss.item()) || !std::isfinite(gloss.item()))
        throw Error(ErrorKind::Divergence, "non-finite GAN loss at epoch " + str(epoch));
      jl += jloss.item();
      gl += adv;
      seen += batch.size();
      ++batches;
    }
    gen.params.zero_grad();
    rec.judge_loss = batches ? jl / batches : 0;
    rec.gen_adv_loss = batches ? gl / batches : 0;
    rec.train_d = rec.closed_loop && seen ? dsum / seen : 0;
    rec.judge_accuracy = judged ? static_cast<double>(correct) / judged : 0;
    rec.val_median_d = median_design_error(gen, evaluator, val_targets, val_seed);
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (!std::isfinite(rec.val_median_d))
      throw Error(ErrorKind::Divergence, "non-finite design error at epoch " + str(epoch));
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_median_d < best_d) {
      best_d = rec.val_median_d;
      hist.best_epoch = epoch;
      best = gen.params.clone();
    }
  }
  gen.params = std::move(best);

  evaluator.params.set_trainable(true);
  hist.evaluator_hash_after = evaluator.params.hash();
  if (hist.evaluator_hash_after != hist.evaluator_hash_before)
    throw Error(ErrorKind::FrozenModified, "evaluator parameters changed during inverse training");
  return {std::move(gen), hist};
}

std::string InverseResult::to_json() const {
  json j;
  j["freqs_hz"] = freqs;
  j["target"] = target;
  j["c_g"] = c_g;
  j["c_p"] = c_p ? json(*c_p) : json(nullptr);
  j["d"] = d;
  j["e"] = e ? json(*e) : json(nullptr);
  j["b"] = b ? json(*b) : json(nullptr);
  j["chosen_candidate"] = chosen;
  j["distinct_candidates"] = distinct_candidates;
  j["pattern"] = to_text(pattern);
  return j.dump(2);
}

InverseResult inverse_design(const Spectrum& target, Generator& gen, ForwardModel& evaluator,
                             std::size_t n_candidates, bool verify, const SolverConfig& cfg, std::uint64_t seed) {
  if (n_candidates < 1) throw Error(ErrorKind::InvalidArgument, "n_candidates must be >= 1");
  if (target.values.size() != kSpectrumBins)
    throw Error(ErrorKind::ShapeMismatch, "target spectrum needs 32 bins, got " + std::to_string(target.values.size()));
  InverseResult r;
  r.freqs = target.freqs;
  std::copy(target.values.begin(), target.values.end(), r.target.begin());

  constexpr std::size_t kChunk = 64;
  std::set<std::array<std::uint8_t, kGridCells>> distinct;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < n_candidates; start += kChunk) {
    const std::size_t m = std::min(kChunk, n_candidates - start);
    const std::vector<Vec> targets(m, r.target);
    const auto pats = generate_patterns(gen, targets, seed, start);
    std::vector<const Pattern*> ptrs;
    for (const auto& p : pats) {
      ptrs.push_back(&p);
      std::array<std::uint8_t, kGridCells> key;
      for (int i = 0; i < kGridCells; ++i) key[i] = p.at(i / kGridSide, i % kGridSide);
      distinct.insert(key);
    }
    const auto pred = predict_all(evaluator, ptrs);
    for (std::size_t i = 0; i < m; ++i) {
      const double d = msd(r.target, pred[i]);
      if (d < best) {
        best = d;
        r.pattern = pats[i];
        r.c_g = pred[i];
        r.chosen = start + i;
      }
    }
  }
  r.d = best;
  r.distinct_candidates = distinct.size();
  if (verify) {
    const Spectrum sim = simulate_copr(r.pattern, cfg);
    if (sim.values.size() != kSpectrumBins)
      throw Error(ErrorKind::GridMismatch, "solver config yields " + std::to_string(sim.values.size()) + " bins");
    Vec cp;
    std::copy(sim.values.begin(), sim.values.end(), cp.begin());
    r.c_p = cp;
    r.e = msd(r.target, cp);
    r.b = msd(r.c_g, cp);
  }
  return r;
}

}  // namespace metasurf
