#include "metasurf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "metasurf/error.hpp"

namespace metasurf::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
}

std::vector<double>& pgrad(Node& out, std::size_t i) { return out.parents[i]->grad_buffer(); }
bool pneeds(const Node& out, std::size_t i) { return out.parents[i]->requires_grad; }
const std::vector<double>& pval(const Node& out, std::size_t i) { return out.parents[i]->value; }

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx_from_y_x) {
  std::vector<double> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result(x.shape(), std::move(y), {x}, [dfdx_from_y_x](Node& out) {
    auto& gx = pgrad(out, 0);
    const auto& xv = pval(out, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * dfdx_from_y_x(out.value[i], xv[i]);
  });
}

struct ConvGeom {
  int n, c, h, w;   // input of the forward (strided) convolution
  int kh, kw, stride, pad;
  int ho, wo;       // its output
  int rows() const { return c * kh * kw; }
  int cols() const { return n * ho * wo; }
  ConvGeom chunk(int samples) const {
    ConvGeom g = *this;
    g.n = samples;
    return g;
  }
};

// Samples per GEMM so that the column buffer stays cache-sized.
int chunk_size(int positions) { return std::max(1, 1024 / positions); }

// cols[(c*kh+i)*kw+j][(n*ho+oh)*wo+ow] = x[n][c][oh*s-p+i][ow*s-p+j] (0 outside).
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int ncols = g.cols();
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          const double* xc = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            double* dst = row + (static_cast<std::size_t>(n) * g.ho + oh) * g.wo;
            if (ih < 0 || ih >= g.h) {
              for (int ow = 0; ow < g.wo; ++ow) dst[ow] = 0.0;
              continue;
            }
            const double* src = xc + static_cast<std::size_t>(ih) * g.w;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
            }
          }
        }
      }
}

// Adjoint of im2col: accumulates cols back into x.
void col2im(const double* cols, const ConvGeom& g, double* x) {
  const int ncols = g.cols();
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          double* xc = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            const double* src = row + (static_cast<std::size_t>(n) * g.ho + oh) * g.wo;
            double* dst = xc + static_cast<std::size_t>(ih) * g.w;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
            }
          }
        }
      }
}

// [N, C, P] <-> [C, N*P]
void nchw_to_cnp(const double* src, int n, int c, int p, double* dst) {
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      std::copy_n(src + (static_cast<std::size_t>(in) * c + ic) * p, p,
                  dst + static_cast<std::size_t>(ic) * n * p + static_cast<std::size_t>(in) * p);
}

void cnp_to_nchw(const double* src, int n, int c, int p, double* dst) {
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      std::copy_n(src + static_cast<std::size_t>(ic) * n * p + static_cast<std::size_t>(in) * p, p,
                  dst + (static_cast<std::size_t>(in) * c + ic) * p);
}

void add_cnp_to_nchw(const double* src, int n, int c, int p, double* dst) {
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* s = src + static_cast<std::size_t>(ic) * n * p + static_cast<std::size_t>(in) * p;
      double* d = dst + (static_cast<std::size_t>(in) * c + ic) * p;
      for (int q = 0; q < p; ++q) d[q] += s[q];
    }
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!pneeds(out, p)) continue;
      auto& g = pgrad(out, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    if (pneeds(out, 0)) {
      auto& g = pgrad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (pneeds(out, 1)) {
      auto& g = pgrad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    const auto& av = pval(out, 0);
    const auto& bv = pval(out, 1);
    if (pneeds(out, 0)) {
      auto& g = pgrad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bv[i];
    }
    if (pneeds(out, 1)) {
      auto& g = pgrad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * a.data()[i];
  return make_result(a.shape(), std::move(y), {a}, [s](Node& out) {
    auto& g = pgrad(out, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * out.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1}, {acc}, {a}, [](Node& out) {
    auto& g = pgrad(out, 0);
    for (auto& v : g) v += out.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary(
      x, [alpha](double v) { return v >= 0.0 ? v : alpha * v; },
      [alpha](double, double xv) { return xv >= 0.0 ? 1.0 : alpha; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_scalar, [](double y, double) { return y * (1.0 - y); });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> y(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(y), {x}, [](Node& out) {
    auto& g = pgrad(out, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = s0;
    require(a.size() == b.size(), "concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    require(a == b, "concat: shapes " + shape_str(p.shape()) + " and " + shape_str(s0) + " differ off-axis");
    out_shape[axis] += p.shape()[axis];
    widths.push_back(static_cast<std::size_t>(p.shape()[axis]) * inner);
  }
  const std::size_t row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::vector<double> y(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * widths[k], widths[k], y.begin() + o * row + offset);
    offset += widths[k];
  }
  return make_result(out_shape, std::move(y), parts, [widths, outer, row](Node& out) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (pneeds(out, k)) {
        auto& g = pgrad(out, k);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += out.grad[o * row + off + i];
      }
      off += widths[k];
    }
  });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  require(x.rank() == 2, "slice_cols: expected rank 2, got " + shape_str(x.shape()));
  const int n = x.dim(0), w = x.dim(1);
  require(start >= 0 && len > 0 && start + len <= w, "slice_cols: range out of bounds for " + shape_str(x.shape()));
  std::vector<double> y(static_cast<std::size_t>(n) * len);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < len; ++c) y[static_cast<std::size_t>(r) * len + c] = x.data()[static_cast<std::size_t>(r) * w + start + c];
  return make_result({n, len}, std::move(y), {x}, [n, w, start, len](Node& out) {
    auto& g = pgrad(out, 0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < len; ++c)
        g[static_cast<std::size_t>(r) * w + start + c] += out.grad[static_cast<std::size_t>(r) * len + c];
  });
}

Tensor take_step(const Tensor& x, int t) {
  require(x.rank() == 3, "take_step: expected rank 3, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), l = x.dim(2);
  require(t >= 0 && t < l, "take_step: step out of range for " + shape_str(x.shape()));
  std::vector<double> y(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n * c; ++i) y[i] = x.data()[static_cast<std::size_t>(i) * l + t];
  return make_result({n, c}, std::move(y), {x}, [n, c, l, t](Node& out) {
    auto& g = pgrad(out, 0);
    for (int i = 0; i < n * c; ++i) g[static_cast<std::size_t>(i) * l + t] += out.grad[i];
  });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "dense: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias)
    require(b.rank() == 1 && b.dim(0) == w.dim(0),
            "dense: bias " + shape_str(b.shape()) + " incompatible with weight " + shape_str(w.shape()));
  const int n = x.dim(0), in = x.dim(1), o = w.dim(0);
  std::vector<double> y(static_cast<std::size_t>(n) * o);
  MapMat ym(y.data(), n, o);
  ym.noalias() = CMapMat(x.data().data(), n, in) * CMapMat(w.data().data(), o, in).transpose();
  if (has_bias)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < o; ++c) ym(r, c) += b.data()[c];
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result({n, o}, std::move(y), parents, [n, in, o, has_bias](Node& out) {
    CMapMat g(out.grad.data(), n, o);
    if (pneeds(out, 0)) {
      MapMat gx(pgrad(out, 0).data(), n, in);
      gx.noalias() += g * CMapMat(pval(out, 1).data(), o, in);
    }
    if (pneeds(out, 1)) {
      MapMat gw(pgrad(out, 1).data(), o, in);
      gw.noalias() += g.transpose() * CMapMat(pval(out, 0).data(), n, in);
    }
    if (has_bias && pneeds(out, 2)) {
      auto& gb = pgrad(out, 2);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < o; ++c) gb[c] += g(r, c);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  require(x.rank() == 4 && k.rank() == 4 && x.dim(1) == k.dim(1),
          "conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(k.shape()));
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(2), k.dim(3), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: kernel " + shape_str(k.shape()) + " larger than padded input " + shape_str(x.shape()));
  const int o = k.dim(0);
  const int p = g.ho * g.wo;
  const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(o) * p;

  std::vector<double> y(g.n * out_stride);
  std::vector<double> cols, tmp;
  for (int n0 = 0; n0 < g.n; n0 += chunk_size(p)) {
    const ConvGeom gb = g.chunk(std::min(chunk_size(p), g.n - n0));
    cols.resize(static_cast<std::size_t>(gb.rows()) * gb.cols());
    tmp.resize(static_cast<std::size_t>(o) * gb.cols());
    im2col(x.data().data() + n0 * in_stride, gb, cols.data());
    MapMat(tmp.data(), o, gb.cols()).noalias() =
        CMapMat(k.data().data(), o, gb.rows()) * CMapMat(cols.data(), gb.rows(), gb.cols());
    cnp_to_nchw(tmp.data(), gb.n, o, p, y.data() + n0 * out_stride);
  }

  return make_result({g.n, o, g.ho, g.wo}, std::move(y), {x, k}, [g, o, p, in_stride, out_stride](Node& out) {
    const bool need_x = pneeds(out, 0), need_k = pneeds(out, 1);
    const double* kv = pval(out, 1).data();
    std::vector<double> gmat, cols;
    for (int n0 = 0; n0 < g.n; n0 += chunk_size(p)) {
      const ConvGeom gb = g.chunk(std::min(chunk_size(p), g.n - n0));
      gmat.resize(static_cast<std::size_t>(o) * gb.cols());
      cols.resize(static_cast<std::size_t>(gb.rows()) * gb.cols());
      nchw_to_cnp(out.grad.data() + n0 * out_stride, gb.n, o, p, gmat.data());
      CMapMat gm(gmat.data(), o, gb.cols());
      if (need_k) {
        im2col(pval(out, 0).data() + n0 * in_stride, gb, cols.data());
        MapMat(pgrad(out, 1).data(), o, gb.rows()).noalias() +=
            gm * CMapMat(cols.data(), gb.rows(), gb.cols()).transpose();
      }
      if (need_x) {
        MapMat(cols.data(), gb.rows(), gb.cols()).noalias() = CMapMat(kv, o, gb.rows()).transpose() * gm;
        col2im(cols.data(), gb, pgrad(out, 0).data() + n0 * in_stride);
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  require(x.rank() == 4 && k.rank() == 4 && x.dim(1) == k.dim(0),
          "conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(k.shape()));
  require(stride >= 1 && pad >= 0, "conv_transpose2d: stride must be >= 1 and pad >= 0");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h - 1) * stride - 2 * pad + kh;
  const int wo = (w - 1) * stride - 2 * pad + kw;
  require(ho > 0 && wo > 0, "conv_transpose2d: empty output for input " + shape_str(x.shape()));
  // Geometry of the forward convolution this op is the adjoint of.
  ConvGeom g{n, co, ho, wo, kh, kw, stride, pad, h, w};
  require((ho + 2 * pad - kh) / stride + 1 == h && (wo + 2 * pad - kw) / stride + 1 == w,
          "conv_transpose2d: inconsistent geometry");
  const int p = h * w;
  const std::size_t in_stride = static_cast<std::size_t>(ci) * p;
  const std::size_t out_stride = static_cast<std::size_t>(co) * ho * wo;

  std::vector<double> y(n * out_stride, 0.0);
  std::vector<double> xm, cols;
  for (int n0 = 0; n0 < n; n0 += chunk_size(p)) {
    const ConvGeom gb = g.chunk(std::min(chunk_size(p), n - n0));
    xm.resize(static_cast<std::size_t>(ci) * gb.cols());
    cols.resize(static_cast<std::size_t>(gb.rows()) * gb.cols());
    nchw_to_cnp(x.data().data() + n0 * in_stride, gb.n, ci, p, xm.data());
    MapMat(cols.data(), gb.rows(), gb.cols()).noalias() =
        CMapMat(k.data().data(), ci, gb.rows()).transpose() * CMapMat(xm.data(), ci, gb.cols());
    col2im(cols.data(), gb, y.data() + n0 * out_stride);
  }

  return make_result({n, co, ho, wo}, std::move(y), {x, k}, [g, ci, p, in_stride, out_stride](Node& out) {
    const bool need_x = pneeds(out, 0), need_k = pneeds(out, 1);
    std::vector<double> gcols, xm;
    for (int n0 = 0; n0 < g.n; n0 += chunk_size(p)) {
      const ConvGeom gb = g.chunk(std::min(chunk_size(p), g.n - n0));
      gcols.resize(static_cast<std::size_t>(gb.rows()) * gb.cols());
      xm.resize(static_cast<std::size_t>(ci) * gb.cols());
      im2col(out.grad.data() + n0 * out_stride, gb, gcols.data());
      CMapMat gc(gcols.data(), gb.rows(), gb.cols());
      if (need_k) {
        nchw_to_cnp(pval(out, 0).data() + n0 * in_stride, gb.n, ci, p, xm.data());
        MapMat(pgrad(out, 1).data(), ci, gb.rows()).noalias() += CMapMat(xm.data(), ci, gb.cols()) * gc.transpose();
      }
      if (need_x) {
        MapMat(xm.data(), ci, gb.cols()).noalias() = CMapMat(pval(out, 1).data(), ci, gb.rows()) * gc;
        add_cnp_to_nchw(xm.data(), gb.n, ci, p, pgrad(out, 0).data() + n0 * in_stride);
      }
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 4 && b.rank() == 1 && b.dim(0) == x.dim(1),
          "add_channel_bias: bias " + shape_str(b.shape()) + " incompatible with " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  std::vector<double> y(x.data().begin(), x.data().end());
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      double* row = y.data() + (static_cast<std::size_t>(in) * c + ic) * p;
      for (int q = 0; q < p; ++q) row[q] += b.data()[ic];
    }
  return make_result(x.shape(), std::move(y), {x, b}, [n, c, p](Node& out) {
    if (pneeds(out, 0)) {
      auto& g = pgrad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (pneeds(out, 1)) {
      auto& g = pgrad(out, 1);
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
          const double* row = out.grad.data() + (static_cast<std::size_t>(in) * c + ic) * p;
          double acc = 0.0;
          for (int q = 0; q < p; ++q) acc += row[q];
          g[ic] += acc;
        }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: expected rank 4, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  std::vector<double> y(static_cast<std::size_t>(n) * c);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (int q = 0; q < p; ++q) acc += x.data()[i * p + q];
    y[i] = acc / p;
  }
  return make_result({n, c}, std::move(y), {x}, [p](Node& out) {
    auto& g = pgrad(out, 0);
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      for (int q = 0; q < p; ++q) g[i * p + q] += out.grad[i] / p;
  });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& st,
                   bool training) {
  require(x.rank() == 4, "batchnorm2d: expected rank 4, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c} && st.running_mean.shape() == Shape{c} &&
              st.running_var.shape() == Shape{c},
          "batchnorm2d: parameter shapes do not match " + shape_str(x.shape()));
  const std::size_t m = static_cast<std::size_t>(n) * p;
  std::vector<double> mu(c), inv_std(c);
  const auto xv = x.data();
  if (training) {
    require(m > 1, "batchnorm2d: training mode needs more than one value per channel");
    for (int ic = 0; ic < c; ++ic) {
      double s = 0.0;
      for (int in = 0; in < n; ++in)
        for (int q = 0; q < p; ++q) s += xv[(static_cast<std::size_t>(in) * c + ic) * p + q];
      const double mean = s / m;
      double v = 0.0;
      for (int in = 0; in < n; ++in)
        for (int q = 0; q < p; ++q) {
          const double d = xv[(static_cast<std::size_t>(in) * c + ic) * p + q] - mean;
          v += d * d;
        }
      const double var = v / m;
      mu[ic] = mean;
      inv_std[ic] = 1.0 / std::sqrt(var + st.eps);
      auto rm = st.running_mean.data();
      auto rv = st.running_var.data();
      rm[ic] = (1.0 - st.momentum) * rm[ic] + st.momentum * mean;
      rv[ic] = (1.0 - st.momentum) * rv[ic] + st.momentum * v / static_cast<double>(m - 1);
    }
  } else {
    for (int ic = 0; ic < c; ++ic) {
      mu[ic] = st.running_mean.data()[ic];
      inv_std[ic] = 1.0 / std::sqrt(st.running_var.data()[ic] + st.eps);
    }
  }
  std::vector<double> y(x.numel());
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * p;
      const double gsc = gamma.data()[ic] * inv_std[ic];
      for (int q = 0; q < p; ++q) y[base + q] = gsc * (xv[base + q] - mu[ic]) + beta.data()[ic];
    }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [n, c, p, m, mu, inv_std, training](Node& out) {
    const auto& xv = pval(out, 0);
    const auto& gam = pval(out, 1);
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * p;
        for (int q = 0; q < p; ++q) {
          const double xhat = (xv[base + q] - mu[ic]) * inv_std[ic];
          sum_g[ic] += out.grad[base + q];
          sum_gx[ic] += out.grad[base + q] * xhat;
        }
      }
    if (pneeds(out, 1)) {
      auto& g = pgrad(out, 1);
      for (int ic = 0; ic < c; ++ic) g[ic] += sum_gx[ic];
    }
    if (pneeds(out, 2)) {
      auto& g = pgrad(out, 2);
      for (int ic = 0; ic < c; ++ic) g[ic] += sum_g[ic];
    }
    if (pneeds(out, 0)) {
      auto& g = pgrad(out, 0);
      const double md = static_cast<double>(m);
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
          const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * p;
          const double k = gam[ic] * inv_std[ic];
          for (int q = 0; q < p; ++q) {
            if (training) {
              const double xhat = (xv[base + q] - mu[ic]) * inv_std[ic];
              g[base + q] += k * (out.grad[base + q] - sum_g[ic] / md - xhat * sum_gx[ic] / md);
            } else {
              g[base + q] += k * out.grad[base + q];
            }
          }
        }
    }
  });
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w_ih,
                                    const Tensor& w_hh, const Tensor& b) {
  require(h.rank() == 2 && c.shape() == h.shape(),
          "lstm_cell: state shapes " + shape_str(h.shape()) + " and " + shape_str(c.shape()) + " differ");
  const int hid = h.dim(1);
  require(w_ih.rank() == 2 && w_ih.dim(0) == 4 * hid && w_hh.shape() == Shape{4 * hid, hid},
          "lstm_cell: weights " + shape_str(w_ih.shape()) + ", " + shape_str(w_hh.shape()) +
              " do not match hidden size " + std::to_string(hid));
  const Tensor gates = add(dense(x, w_ih, b), dense(h, w_hh));
  const Tensor in_gate = sigmoid(slice_cols(gates, 0, hid));
  const Tensor forget = sigmoid(slice_cols(gates, hid, hid));
  const Tensor cell = tanh(slice_cols(gates, 2 * hid, hid));
  const Tensor out_gate = sigmoid(slice_cols(gates, 3 * hid, hid));
  Tensor c_next = add(mul(forget, c), mul(in_gate, cell));
  Tensor h_next = mul(out_gate, tanh(c_next));
  return {h_next, c_next};
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse_loss");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return make_result({1}, {acc / static_cast<double>(n)}, {a, b}, [n](Node& out) {
    const auto& av = pval(out, 0);
    const auto& bv = pval(out, 1);
    const double k = 2.0 * out.grad[0] / static_cast<double>(n);
    if (pneeds(out, 0)) {
      auto& g = pgrad(out, 0);
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (av[i] - bv[i]);
    }
    if (pneeds(out, 1)) {
      auto& g = pgrad(out, 1);
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (av[i] - bv[i]);
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, double target) {
  const std::size_t n = logits.numel();
  double acc = 0.0;
  for (double z : logits.data()) acc += std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  return make_result({1}, {acc / static_cast<double>(n)}, {logits}, [n, target](Node& out) {
    const auto& zv = pval(out, 0);
    auto& g = pgrad(out, 0);
    const double k = out.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += k * (sigmoid_scalar(zv[i]) - target);
  });
}

}  // namespace metasurf::ad
