#include "metasurf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "json.hpp"
#include "metasurf/ops.hpp"
#include "metasurf/rng.hpp"

namespace metasurf::ad {

namespace {

Tensor random(const Shape& shape, Rng& rng, bool grad = true) {
  Tensor t(shape, 0.0, grad);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Magnitudes in [0.05, 1] with random sign keep the stencil off kinks.
Tensor off_kink(const Shape& shape, Rng& rng) {
  Tensor t(shape, 0.0, true);
  for (double& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

// Scalar reduction with fixed random weights.
Tensor weigh(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(y.shape());
  for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
  return sum(mul(y, w));
}

double fd_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  constexpr double eps = 1e-5;
  for (auto& t : inputs) t.clear_grad();
  backward(f());
  double worst = 0;
  for (auto& t : inputs) {
    if (!t.has_grad()) return INFINITY;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    double max_diff = 0, max_num = 0;
    NoGradGuard guard;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double keep = t.data()[i];
      t.data()[i] = keep + eps;
      const double up = f().item();
      t.data()[i] = keep - eps;
      const double down = f().item();
      t.data()[i] = keep;
      const double num = (up - down) / (2 * eps);
      max_diff = std::max(max_diff, std::abs(num - analytic[i]));
      max_num = std::max(max_num, std::abs(num));
    }
    worst = std::max(worst, max_diff / std::max(max_num, 1e-8));
  }
  return worst;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

bool GradCheckReport::all_pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass(); });
}

std::string GradCheckReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    j.push_back({{"op", e.op}, {"kind", e.kind}, {"error", e.error}, {"tol", e.tol}, {"pass", e.pass()}});
  return nlohmann::ordered_json{{"all_pass", all_pass()}, {"checks", j}}.dump(2);
}

std::string GradCheckReport::to_text() const {
  std::string out;
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-28s %-8s %10.3e <= %.0e  %s\n", e.op.c_str(), e.kind.c_str(), e.error, e.tol,
                  e.pass() ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

GradCheckReport run_gradcheck(std::uint64_t seed, double fd_tol, double adjoint_tol) {
  GradCheckReport rep;
  Rng rng(seed);
  auto fd = [&](const std::string& op, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    rep.entries.push_back({op, "fd", fd_error(f, std::move(inputs)), fd_tol});
  };

  Tensor a = random({3, 4}, rng), b = random({3, 4}, rng);
  fd("add", [&] { return weigh(add(a, b), 1); }, {a, b});
  fd("sub", [&] { return weigh(sub(a, b), 2); }, {a, b});
  fd("mul", [&] { return weigh(mul(a, b), 3); }, {a, b});
  fd("scale", [&] { return weigh(scale(a, -1.7), 4); }, {a});
  fd("sum", [&] { return scale(sum(mul(a, a)), 0.5); }, {a});
  fd("mean", [&] { return mean(mul(a, b)); }, {a, b});

  Tensor k = off_kink({4, 5}, rng);
  fd("leaky_relu", [&] { return weigh(leaky_relu(k, 0.2), 5); }, {k});
  fd("tanh", [&] { return weigh(tanh(scale(a, 2.0)), 6); }, {a});
  fd("sigmoid", [&] { return weigh(sigmoid(scale(a, 3.0)), 7); }, {a});

  Tensor r = random({2, 3, 4}, rng);
  fd("reshape", [&] { return weigh(reshape(r, {4, 6}), 8); }, {r});
  Tensor c1 = random({2, 3, 4}, rng), c2 = random({2, 2, 4}, rng);
  fd("concat", [&] { return weigh(concat({c1, c2}, 1), 9); }, {c1, c2});
  fd("slice_cols", [&] { return weigh(slice_cols(a, 1, 2), 10); }, {a});
  fd("take_step", [&] { return weigh(take_step(r, 2), 11); }, {r});

  Tensor x = random({3, 5}, rng), w = random({4, 5}, rng), bias = random({4}, rng);
  fd("dense", [&] { return weigh(dense(x, w, bias), 12); }, {x, w, bias});

  Tensor img = random({2, 3, 6, 6}, rng), ker = random({4, 3, 3, 3}, rng);
  fd("conv2d s1 p1", [&] { return weigh(conv2d(img, ker, 1, 1), 13); }, {img, ker});
  fd("conv2d s2 p1", [&] { return weigh(conv2d(img, ker, 2, 1), 14); }, {img, ker});
  Tensor small = random({2, 4, 3, 3}, rng), tker = random({4, 2, 4, 4}, rng);
  fd("conv_transpose2d s2 p1", [&] { return weigh(conv_transpose2d(small, tker, 2, 1), 15); }, {small, tker});
  Tensor cb = random({3}, rng);
  fd("add_channel_bias", [&] { return weigh(add_channel_bias(img, cb), 16); }, {img, cb});
  fd("global_avg_pool", [&] { return weigh(global_avg_pool(img), 17); }, {img});

  Tensor gamma = random({3}, rng), beta = random({3}, rng);
  fd("batchnorm2d train",
     [&] {
       BatchNormState st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
       return weigh(batchnorm2d(img, gamma, beta, st, true), 18);
     },
     {img, gamma, beta});
  fd("batchnorm2d eval",
     [&] {
       BatchNormState st{Tensor({3}, std::vector<double>{0.1, -0.2, 0.3}), Tensor({3}, std::vector<double>{0.5, 1.5, 2.0})};
       return weigh(batchnorm2d(img, gamma, beta, st, false), 19);
     },
     {img, gamma, beta});

  Tensor lx = random({2, 3}, rng), lh = random({2, 4}, rng), lc = random({2, 4}, rng);
  Tensor wih = random({16, 3}, rng), whh = random({16, 4}, rng), lb = random({16}, rng);
  fd("lstm_cell",
     [&] {
       auto [h2, c2n] = lstm_cell(lx, lh, lc, wih, whh, lb);
       return add(weigh(h2, 20), weigh(c2n, 21));
     },
     {lx, lh, lc, wih, whh, lb});

  fd("mse_loss", [&] { return mse_loss(a, b); }, {a, b});
  fd("bce_with_logits", [&] { return add(bce_with_logits(a, 1.0), bce_with_logits(b, 0.0)); }, {a, b});

  struct G { int n, c, h, o, k, s, p; };
  for (G g : {G{2, 3, 8, 4, 3, 1, 1}, G{2, 2, 8, 3, 4, 2, 1}, G{1, 2, 15, 2, 3, 2, 1}, G{3, 4, 2, 5, 2, 1, 0}}) {
    const Tensor xi = random({g.n, g.c, g.h, g.h}, rng, false);
    const Tensor kk = random({g.o, g.c, g.k, g.k}, rng, false);
    const Tensor cx = conv2d(xi, kk, g.s, g.p);
    const Tensor y = random(cx.shape(), rng, false);
    const Tensor ty = conv_transpose2d(y, kk, g.s, g.p);
    const double err = ty.shape() == xi.shape() ? std::abs(dot(cx, y) - dot(xi, ty)) : INFINITY;
    rep.entries.push_back({"conv adjoint k" + std::to_string(g.k) + " s" + std::to_string(g.s) + " p" +
                               std::to_string(g.p) + " h" + std::to_string(g.h),
                           "adjoint", err, adjoint_tol});
  }
  return rep;
}

}  // namespace metasurf::ad
