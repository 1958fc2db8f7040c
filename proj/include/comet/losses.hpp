#pragma once

#include "comet/nets.hpp"
#include "comet/tensor.hpp"

#include <span>
#include <vector>

namespace comet {

/// Per-channel fill pixel q (the dataset mean colour).
using FillPixel = std::vector<double>;

/// Masked-in and masked-out views of a batch under a soft attribution map.
struct MaskPair {
  Tensor masked_in;   // map * x + (1 - map) * q
  Tensor masked_out;  // (1 - map) * x + map * q
  Tensor map;         // [N,1,H,W]
  FillPixel fill;
};

/// Constant [N,C,H,W] image with every pixel equal to `q`.
Tensor fill_image(const Shape& shape, std::span<const double> q);

/// Splits `x` ([N,C,H,W]) with `map` ([N,1,H,W], values in [0,1]).
MaskPair make_masks(const Tensor& x, const Tensor& map, std::span<const double> q);

/// Cross-entropy of the predictor on the masked-in batch.
Tensor predictor_loss(const ClassifierNet& predictor, const Tensor& masked_in, std::span<const int> labels);
/// Cross-entropy of the detector on the masked-out batch.
Tensor detector_loss(const ClassifierNet& detector, const Tensor& masked_out, std::span<const int> labels);

/// Batch mean of max(mean(map_i) - t, 0), where mean(map_i) is the per-image
/// mean of the attribution map.
Tensor sparsity_regularizer(const Tensor& map, double t);

struct LossBreakdown {
  double l_p = 0.0;
  double l_d_out = 0.0;
  double reg = 0.0;
  double l_s = 0.0;    // l_p - a * l_d_out
  double total = 0.0;  // l_s + b * reg
  double a = 0.0;
  double b = 0.0;
  double t = 0.0;
};

LossBreakdown selector_loss(double l_p, double l_d_out, double reg, double a, double b, double t = 0.0);

/// Differentiable l_p - a * l_d_out + b * reg.
Tensor composite_loss(const Tensor& l_p, const Tensor& l_d_out, const Tensor& reg, double a, double b);

}  // namespace comet
