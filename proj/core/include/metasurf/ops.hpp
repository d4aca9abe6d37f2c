#pragma once

#include <utility>
#include <vector>

#include "metasurf/tensor.hpp"

namespace metasurf::ad {

// Elementwise and reductions. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor leaky_relu(const Tensor& x, double alpha);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Same data, new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation along `axis`; all other dims must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Columns [start, start+len) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, int start, int len);
/// x[:, :, t] of a rank-3 tensor [N, C, L] -> [N, C].
Tensor take_step(const Tensor& x, int t);

/// x [N, in], w [out, in], optional b [out] -> [N, out].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b = {});

/// x [N, C, H, W], k [O, C, kh, kw] -> [N, O, (H+2p-kh)/s+1, (W+2p-kw)/s+1].
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);
/// Adjoint of conv2d with the same kernel: x [N, O, H, W], k [O, C, kh, kw]
/// -> [N, C, (H-1)s-2p+kh, (W-1)s-2p+kw].
Tensor conv_transpose2d(const Tensor& x, const Tensor& k, int stride, int pad);
/// Adds b [C] to every position of channel c of x [N, C, H, W].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// Mean over H and W: [N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

/// Running statistics of a batch-norm layer; not trainable.
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], unbiased
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Training mode normalizes with batch statistics (biased variance) and
/// updates the running estimates; eval mode uses the running estimates and is
/// a pure function of x.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training);

/// One LSTM step with gate order (input, forget, cell, output).
/// x [N, I], h [N, H], c [N, H], w_ih [4H, I], w_hh [4H, H], b [4H].
/// Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const Tensor& w_ih, const Tensor& w_hh, const Tensor& b);

/// Mean over all elements of (a - b)^2.
Tensor mse_loss(const Tensor& a, const Tensor& b);
/// Mean binary cross-entropy of logits against a constant 0/1 target.
Tensor bce_with_logits(const Tensor& logits, double target);

}  // namespace metasurf::ad
