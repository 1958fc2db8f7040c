#pragma once

#include "comet/tensor.hpp"

#include <span>

namespace comet {

// Differentiable primitives. Shapes are explicit: binary ops require equal
// shapes, and the only broadcast is tensor-with-scalar.

/// 2-D cross-correlation over an NCHW batch with an FCkhkw kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0);
/// As above plus a per-output-channel bias of shape [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);

/// [N,D] x [D,M] -> [N,M].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Adds bias[c] to every element of channel c (axis 1) of a rank >= 2 tensor.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Elementwise max(x, c); the subgradient at x == c is 0.
Tensor max_const(const Tensor& x, double c);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator*(double s, const Tensor& x);
Tensor operator*(const Tensor& x, double s);
Tensor operator+(const Tensor& x, double c);
Tensor operator-(const Tensor& x, double c);
/// c - x, elementwise.
Tensor operator-(double c, const Tensor& x);

/// Scalar sum / mean over every element.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over all axes but the first: [N,...] -> [N].
Tensor mean_per_sample(const Tensor& x);

/// Non-overlapping 2x2 average pooling on NCHW (H and W must be even).
Tensor avg_pool2(const Tensor& x);

enum class Upsample { Nearest, Bilinear };
/// x2 spatial upsampling on NCHW. Bilinear uses half-pixel centres with edge
/// clamping.
Tensor upsample2(const Tensor& x, Upsample mode = Upsample::Bilinear);

Tensor reshape(const Tensor& x, Shape shape);
/// [N,...] -> [N, prod(...)].
Tensor flatten(const Tensor& x);
/// [N,1,H,W] -> [N,C,H,W] by copying the single channel.
Tensor repeat_channels(const Tensor& x, Index channels);

/// logits[n, targets[n]] for each row: [N,K] -> [N].
Tensor pick(const Tensor& logits, std::span<const int> targets);

/// Mean over rows of -log softmax(logits)[target]. Logits are [N,K], K >= 2.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Row-wise argmax of [N,K] logits.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace comet
