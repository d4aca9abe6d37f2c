#include "doctest.h"

#include <cmath>
#include <functional>

#include "metasurf/error.hpp"
#include "metasurf/ops.hpp"
#include "metasurf/param_store.hpp"
#include "metasurf/rng.hpp"

using namespace metasurf;
using namespace metasurf::ad;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, bool grad = true, double lo = -1, double hi = 1) {
  Tensor t(shape, 0.0, grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Inputs bounded away from zero so kinks are never straddled by the stencil.
Tensor rand_nonzero(const Shape& shape, Rng& rng) {
  Tensor t(shape, 0.0, true);
  for (double& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

// Reduces an op output to a scalar with fixed random weights; the weights
// make every output element contribute with a different coefficient.
Tensor weigh(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(y.shape());
  for (double& v : w.data()) v = rng.uniform(-1, 1);
  return sum(mul(y, w));
}

// Central finite differences with eps = 1e-5 against the recorded backward
// rule. Returns the worst of max|analytic - numeric| / max|numeric| over inputs.
double grad_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  const double eps = 1e-5;
  for (auto& t : inputs) t.clear_grad();
  backward(f());
  double worst = 0;
  for (auto& t : inputs) {
    REQUIRE(t.has_grad());
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
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

// Direct-loop convolution used as a value oracle for the GEMM path.
std::vector<double> conv_ref(const Tensor& x, const Tensor& k, int s, int p) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h + 2 * p - kh) / s + 1, wo = (w + 2 * p - kw) / s + 1;
  std::vector<double> y(static_cast<std::size_t>(n) * o * ho * wo, 0.0);
  for (int in = 0; in < n; ++in)
    for (int io = 0; io < o; ++io)
      for (int r = 0; r < ho; ++r)
        for (int q = 0; q < wo; ++q) {
          double acc = 0;
          for (int ic = 0; ic < c; ++ic)
            for (int a = 0; a < kh; ++a)
              for (int b = 0; b < kw; ++b) {
                const int rr = r * s - p + a, cc = q * s - p + b;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                acc += x.data()[((in * c + ic) * h + rr) * w + cc] * k.data()[((io * c + ic) * kh + a) * kw + b];
              }
          y[((in * o + io) * ho + r) * wo + q] = acc;
        }
  return y;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise ops pass finite differences") {
  Rng rng(1);
  Tensor a = rand_nonzero({3, 4}, rng), b = rand_nonzero({3, 4}, rng);
  CHECK(grad_error([&] { return weigh(add(a, b), 2); }, {a, b}) < kTol);
  CHECK(grad_error([&] { return weigh(sub(a, b), 3); }, {a, b}) < kTol);
  CHECK(grad_error([&] { return weigh(mul(a, b), 4); }, {a, b}) < kTol);
  CHECK(grad_error([&] { return weigh(scale(a, -2.5), 5); }, {a}) < kTol);
  CHECK(grad_error([&] { return sum(a); }, {a}) < kTol);
  CHECK(grad_error([&] { return mean(mul(a, a)); }, {a}) < kTol);
  CHECK(grad_error([&] { return weigh(leaky_relu(a, 0.2), 6); }, {a}) < kTol);
  CHECK(grad_error([&] { return weigh(tanh(scale(a, 2.0)), 7); }, {a}) < kTol);
  Tensor wide = rand_tensor({2, 5}, rng, true, -30, 30);
  CHECK(grad_error([&] { return weigh(sigmoid(wide), 8); }, {wide}) < kTol);
  CHECK(grad_error([&] { return weigh(sigmoid(a), 9); }, {a}) < kTol);
}

TEST_CASE("shape ops pass finite differences") {
  Rng rng(2);
  Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 2, 4}, rng), c = rand_tensor({2, 3, 4}, rng);
  CHECK(grad_error([&] { return weigh(reshape(a, {6, 4}), 1); }, {a}) < kTol);
  CHECK(grad_error([&] { return weigh(concat({a, b}, 1), 2); }, {a, b}) < kTol);
  CHECK(grad_error([&] { return weigh(concat({a, c}, 0), 3); }, {a, c}) < kTol);
  CHECK(grad_error([&] { return weigh(concat({a, c}, 2), 4); }, {a, c}) < kTol);
  Tensor m = rand_tensor({3, 7}, rng);
  CHECK(grad_error([&] { return weigh(slice_cols(m, 2, 3), 5); }, {m}) < kTol);
  CHECK(grad_error([&] { return weigh(take_step(a, 2), 6); }, {a}) < kTol);
}

TEST_CASE("dense passes finite differences and matches loops") {
  Rng rng(3);
  Tensor x = rand_tensor({4, 5}, rng), w = rand_tensor({3, 5}, rng), b = rand_tensor({3}, rng);
  CHECK(grad_error([&] { return weigh(dense(x, w, b), 1); }, {x, w, b}) < kTol);
  CHECK(grad_error([&] { return weigh(dense(x, w), 2); }, {x, w}) < kTol);
  const Tensor y = dense(x, w, b);
  for (int i = 0; i < 4; ++i)
    for (int o = 0; o < 3; ++o) {
      double acc = b.data()[o];
      for (int j = 0; j < 5; ++j) acc += x.data()[i * 5 + j] * w.data()[o * 5 + j];
      CHECK(y.data()[i * 3 + o] == doctest::Approx(acc).epsilon(1e-13));
    }
}

TEST_CASE("conv2d matches direct loops and finite differences") {
  Rng rng(4);
  struct G { int n, c, h, o, k, s, p; };
  for (G g : {G{2, 3, 6, 4, 3, 1, 1}, G{2, 2, 7, 3, 3, 2, 1}, G{1, 3, 4, 2, 1, 1, 0}, G{3, 1, 5, 2, 2, 2, 0}}) {
    Tensor x = rand_tensor({g.n, g.c, g.h, g.h}, rng), k = rand_tensor({g.o, g.c, g.k, g.k}, rng);
    const Tensor y = conv2d(x, k, g.s, g.p);
    const auto ref = conv_ref(x, k, g.s, g.p);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(grad_error([&] { return weigh(conv2d(x, k, g.s, g.p), 5); }, {x, k}) < kTol);
  }
}

TEST_CASE("conv_transpose2d passes finite differences") {
  Rng rng(5);
  struct G { int n, o, h, c, k, s, p; };
  for (G g : {G{2, 3, 1, 4, 2, 1, 0}, G{2, 3, 2, 2, 4, 2, 1}, G{1, 2, 4, 3, 3, 1, 1}}) {
    Tensor x = rand_tensor({g.n, g.o, g.h, g.h}, rng), k = rand_tensor({g.o, g.c, g.k, g.k}, rng);
    CHECK(grad_error([&] { return weigh(conv_transpose2d(x, k, g.s, g.p), 6); }, {x, k}) < kTol);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(6);
  struct G { int n, c, h, o, k, s, p; };
  for (G g : {G{2, 3, 8, 4, 3, 1, 1}, G{2, 2, 8, 3, 4, 2, 1}, G{3, 4, 2, 5, 2, 1, 0}, G{1, 2, 15, 2, 3, 2, 1}}) {
    const Tensor x = rand_tensor({g.n, g.c, g.h, g.h}, rng, false);
    const Tensor k = rand_tensor({g.o, g.c, g.k, g.k}, rng, false);
    const Tensor cx = conv2d(x, k, g.s, g.p);
    const Tensor y = rand_tensor(cx.shape(), rng, false);
    const Tensor ty = conv_transpose2d(y, k, g.s, g.p);
    REQUIRE(ty.shape() == x.shape());
    CHECK(std::abs(dot(cx, y) - dot(x, ty)) <= 1e-10);
  }
}

TEST_CASE("channel ops pass finite differences") {
  Rng rng(7);
  Tensor x = rand_tensor({2, 3, 4, 4}, rng), b = rand_tensor({3}, rng);
  CHECK(grad_error([&] { return weigh(add_channel_bias(x, b), 1); }, {x, b}) < kTol);
  CHECK(grad_error([&] { return weigh(global_avg_pool(x), 2); }, {x}) < kTol);
}

TEST_CASE("batchnorm passes finite differences in both modes") {
  Rng rng(8);
  Tensor x = rand_tensor({3, 2, 3, 3}, rng), gamma = rand_tensor({2}, rng, true, 0.5, 1.5), beta = rand_tensor({2}, rng);
  BatchNormState st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  CHECK(grad_error([&] { return weigh(batchnorm2d(x, gamma, beta, st, true), 1); }, {x, gamma, beta}) < kTol);
  st.running_mean.data()[0] = 0.3;
  st.running_var.data()[1] = 2.0;
  CHECK(grad_error([&] { return weigh(batchnorm2d(x, gamma, beta, st, false), 2); }, {x, gamma, beta}) < kTol);
}

TEST_CASE("lstm cell passes finite differences and matches the gate formula") {
  Rng rng(9);
  const int n = 2, in = 3, hid = 2;
  Tensor x = rand_tensor({n, in}, rng), h = rand_tensor({n, hid}, rng), c = rand_tensor({n, hid}, rng);
  Tensor wi = rand_tensor({4 * hid, in}, rng), wh = rand_tensor({4 * hid, hid}, rng), b = rand_tensor({4 * hid}, rng);
  auto f = [&] {
    auto [h1, c1] = lstm_cell(x, h, c, wi, wh, b);
    return add(weigh(h1, 3), weigh(c1, 4));
  };
  CHECK(grad_error(f, {x, h, c, wi, wh, b}) < kTol);

  auto sig = [](double z) { return 1 / (1 + std::exp(-z)); };
  auto [h1, c1] = lstm_cell(x, h, c, wi, wh, b);
  for (int s = 0; s < n; ++s)
    for (int j = 0; j < hid; ++j) {
      double g[4];
      for (int q = 0; q < 4; ++q) {
        const int row = q * hid + j;
        g[q] = b.data()[row];
        for (int k = 0; k < in; ++k) g[q] += wi.data()[row * in + k] * x.data()[s * in + k];
        for (int k = 0; k < hid; ++k) g[q] += wh.data()[row * hid + k] * h.data()[s * hid + k];
      }
      const double cn = sig(g[1]) * c.data()[s * hid + j] + sig(g[0]) * std::tanh(g[2]);
      CHECK(c1.data()[s * hid + j] == doctest::Approx(cn).epsilon(1e-12));
      CHECK(h1.data()[s * hid + j] == doctest::Approx(sig(g[3]) * std::tanh(cn)).epsilon(1e-12));
    }
}

TEST_CASE("losses pass finite differences") {
  Rng rng(10);
  Tensor a = rand_tensor({3, 5}, rng), b = rand_tensor({3, 5}, rng);
  CHECK(grad_error([&] { return mse_loss(a, b); }, {a, b}) < kTol);
  Tensor z = rand_tensor({4, 1}, rng, true, -6, 6);
  CHECK(grad_error([&] { return bce_with_logits(z, 1.0); }, {z}) < kTol);
  CHECK(grad_error([&] { return bce_with_logits(z, 0.0); }, {z}) < kTol);
  const double ref = [&] {
    double s = 0;
    for (int i = 0; i < 15; ++i) s += std::pow(a.data()[i] - b.data()[i], 2);
    return s / 15;
  }();
  CHECK(mse_loss(a, b).item() == doctest::Approx(ref).epsilon(1e-14));
  Tensor big({1}, std::vector<double>{800.0});
  CHECK(std::isfinite(bce_with_logits(big, 0.0).item()));
  CHECK(bce_with_logits(big, 0.0).item() == doctest::Approx(800.0));
}

TEST_CASE("chained conv, batchnorm, leaky relu and dense graph") {
  Rng rng(11);
  Tensor x = rand_tensor({3, 1, 5, 5}, rng), k = rand_tensor({2, 1, 3, 3}, rng);
  Tensor gamma = rand_tensor({2}, rng, true, 0.5, 1.5), beta = rand_tensor({2}, rng);
  Tensor w = rand_tensor({4, 2}, rng), b = rand_tensor({4}, rng);
  BatchNormState st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  auto f = [&] {
    const Tensor y = leaky_relu(batchnorm2d(conv2d(x, k, 1, 1), gamma, beta, st, true), 0.2);
    return mse_loss(sigmoid(dense(global_avg_pool(y), w, b)), Tensor({3, 4}, 0.3));
  };
  CHECK(grad_error(f, {x, k, gamma, beta, w, b}) < kTol);
}

TEST_CASE("trivial forward and backward cases") {
  Rng rng(12);
  const Tensor x = rand_tensor({2, 3, 4, 4}, rng, false);
  Tensor eye({3, 3, 1, 1}, 0.0);
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  CHECK(conv2d(x, eye, 1, 0).data()[17] == x.data()[17]);
  const Tensor same = conv2d(x, eye, 1, 0);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

  Tensor pos({5}, std::vector<double>{0.0, 0.5, 1.0, 2.0, 3.0});
  const Tensor lr = leaky_relu(pos, 0.2);
  CHECK(std::equal(lr.data().begin(), lr.data().end(), pos.data().begin()));

  Tensor w = rand_tensor({3, 2}, rng);
  backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);

  Tensor unused = rand_tensor({2}, rng);
  Tensor other = rand_tensor({2}, rng);
  backward(sum(other));
  CHECK((!unused.has_grad() || std::all_of(unused.grad().begin(), unused.grad().end(), [](double g) { return g == 0; })));
}

TEST_CASE("repeated backward with cleared grads is reproducible") {
  Rng rng(13);
  Tensor x = rand_tensor({2, 1, 4, 4}, rng), k = rand_tensor({3, 1, 3, 3}, rng);
  auto run = [&] {
    k.clear_grad();
    backward(weigh(tanh(conv2d(x, k, 1, 1)), 1));
    return std::vector<double>(k.grad().begin(), k.grad().end());
  };
  const auto g1 = run();
  CHECK(run() == g1);
  backward(weigh(tanh(conv2d(x, k, 1, 1)), 1));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(k.grad()[i] == doctest::Approx(2 * g1[i]));
}

TEST_CASE("errors: not scalar and shape mismatch naming both shapes") {
  Rng rng(14);
  Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({3, 2}, rng);
  try {
    add(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[3,2]") != std::string::npos);
  }
  try {
    backward(a);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotScalar);
  }
  CHECK_THROWS_AS(dense(a, b), Error);
  CHECK_THROWS_AS(conv2d(a, b, 1, 0), Error);
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
}

TEST_CASE("no-grad mode records nothing") {
  Rng rng(15);
  Tensor a = rand_tensor({3}, rng);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(mul(a, a).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(mul(a, a).requires_grad());
}

TEST_CASE("batchnorm running statistics and eval purity") {
  Rng rng(16);
  const Tensor x = rand_tensor({4, 2, 3, 3}, rng, false, 0, 2);
  Tensor gamma({2}, 1.0), beta({2}, 0.0);
  BatchNormState st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  batchnorm2d(x, gamma, beta, st, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    int m = 0;
    for (int n = 0; n < 4; ++n)
      for (int q = 0; q < 9; ++q) {
        const double v = x.data()[(n * 2 + c) * 9 + q];
        s += v;
        ss += v * v;
        ++m;
      }
    const double mu = s / m, unbiased = (ss - m * mu * mu) / (m - 1);
    CHECK(st.running_mean.data()[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(st.running_var.data()[c] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  }
  const auto rm = std::vector<double>(st.running_mean.data().begin(), st.running_mean.data().end());
  const Tensor e1 = batchnorm2d(x, gamma, beta, st, false);
  const Tensor e2 = batchnorm2d(x, gamma, beta, st, false);
  CHECK(std::equal(e1.data().begin(), e1.data().end(), e2.data().begin()));
  CHECK(std::equal(rm.begin(), rm.end(), st.running_mean.data().begin()));
}

TEST_CASE("adam: zero gradient, descent step, quadratic bowl") {
  ParamStore store;
  Tensor& w = store.add_param("w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  {
    backward(sum(mul(w, Tensor({3}, 0.0))));
    adam_step(store, AdamConfig{});
    CHECK(w.data()[0] == 1.0);
    CHECK(w.data()[1] == -2.0);
    CHECK(store.step == 1);
  }
  ParamStore one;
  Tensor& v = one.add_param("v", Tensor({1}, 1.0));
  backward(mul(v, v));
  adam_step(one, AdamConfig{0.1});
  CHECK(v.data()[0] < 1.0);

  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int it = 0; it < 500; ++it) {
    store.zero_grad();
    backward(sum(mul(w, w)));
    adam_step(store, cfg);
  }
  for (double x : w.data()) CHECK(std::abs(x) < 1e-3);
}

TEST_CASE("adam: missing gradient and frozen entries") {
  ParamStore store;
  store.add_param("a", Tensor({2}, 1.0));
  Tensor& b = store.add_param("b", Tensor({2}, 1.0));
  store.zero_grad();
  backward(sum(b));
  try {
    adam_step(store, AdamConfig{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingGrad);
  }
  store.set_trainable(false);
  const auto before = store.hash();
  adam_step(store, AdamConfig{});
  CHECK(store.hash() == before);
}

TEST_CASE("initializers") {
  Rng rng(17);
  const Tensor k = kaiming_uniform({64, 32, 3, 3}, 32 * 9, 0.2, rng);
  const double bound = std::sqrt(2.0 / 1.04) * std::sqrt(3.0 / (32 * 9));
  double mx = 0, s2 = 0;
  for (double v : k.data()) {
    mx = std::max(mx, std::abs(v));
    s2 += v * v;
  }
  CHECK(mx <= bound);
  CHECK(mx > 0.99 * bound);
  CHECK(s2 / k.numel() == doctest::Approx(bound * bound / 3).epsilon(0.02));
  for (auto [r, c] : {std::pair{8, 3}, std::pair{3, 8}, std::pair{6, 6}}) {
    const Tensor q = orthogonal(r, c, rng);
    const bool tall = r >= c;
    const int small = std::min(r, c), big = std::max(r, c);
    for (int i = 0; i < small; ++i)
      for (int j = 0; j < small; ++j) {
        double d = 0;
        for (int t = 0; t < big; ++t)
          d += tall ? q.data()[t * c + i] * q.data()[t * c + j] : q.data()[i * c + t] * q.data()[j * c + t];
        CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
      }
  }
}
