#include "comet/losses.hpp"

#include "comet/errors.hpp"
#include "comet/ops.hpp"

namespace comet {

Tensor fill_image(const Shape& shape, std::span<const double> q) {
  if (shape.size() != 4) throw DimensionError("fill_image expects an NCHW shape");
  const Index n = shape[0], c = shape[1], plane = shape[2] * shape[3];
  if (static_cast<Index>(q.size()) != c)
    throw DimensionError("fill pixel has " + std::to_string(q.size()) + " channels, image has " +
                         std::to_string(c));
  Array v(n * c * plane);
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) v.segment((s * c + ch) * plane, plane).setConstant(q[ch]);
  return Tensor(shape, std::move(v));
}

MaskPair make_masks(const Tensor& x, const Tensor& map, std::span<const double> q) {
  if (x.rank() != 4 || map.rank() != 4 || map.dim(0) != x.dim(0) || map.dim(1) != 1 ||
      map.dim(2) != x.dim(2) || map.dim(3) != x.dim(3))
    throw DimensionError("make_masks: map " + shape_str(map.shape()) + " does not fit image " +
                         shape_str(x.shape()));
  if (map.size() && (map.values().minCoeff() < 0.0 || map.values().maxCoeff() > 1.0))
    throw ContractError("make_masks: map values must lie in [0,1]");
  const Tensor m = repeat_channels(map, x.dim(1));
  const Tensor fill = fill_image(x.shape(), q);
  const Tensor keep_out = 1.0 - m;
  MaskPair pair;
  pair.masked_in = m * x + keep_out * fill;
  pair.masked_out = keep_out * x + m * fill;
  pair.map = map;
  pair.fill.assign(q.begin(), q.end());
  return pair;
}

Tensor predictor_loss(const ClassifierNet& predictor, const Tensor& masked_in, std::span<const int> labels) {
  return softmax_cross_entropy(predictor.forward(masked_in), labels);
}

Tensor detector_loss(const ClassifierNet& detector, const Tensor& masked_out, std::span<const int> labels) {
  return softmax_cross_entropy(detector.forward(masked_out), labels);
}

Tensor sparsity_regularizer(const Tensor& map, double t) {
  if (t < 0.0 || t > 1.0) throw ContractError("sparsity threshold must lie in [0,1]");
  return mean(max_const(mean_per_sample(map) - t, 0.0));
}

LossBreakdown selector_loss(double l_p, double l_d_out, double reg, double a, double b, double t) {
  if (a < 0.0 || b < 0.0) throw ContractError("loss coefficients must be non-negative");
  LossBreakdown out;
  out.l_p = l_p;
  out.l_d_out = l_d_out;
  out.reg = reg;
  out.a = a;
  out.b = b;
  out.t = t;
  out.l_s = l_p - a * l_d_out;
  out.total = out.l_s + b * reg;
  return out;
}

Tensor composite_loss(const Tensor& l_p, const Tensor& l_d_out, const Tensor& reg, double a, double b) {
  if (a < 0.0 || b < 0.0) throw ContractError("loss coefficients must be non-negative");
  return l_p - a * l_d_out + b * reg;
}

}  // namespace comet
