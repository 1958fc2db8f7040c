#include "comet/ops.hpp"

#include "comet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace comet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

bool wants_grad(const detail::Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

struct ConvGeometry {
  Index n, c, h, w, f, kh, kw, ho, wo;
  int stride, pad;
  Index rows() const { return c * kh * kw; }
  Index positions() const { return ho * wo; }
};

// Unfolds sample `x` (C,H,W) into a row-major [C*kh*kw, Ho*Wo] block whose
// rows are `ld` apart, so a batch fills one [C*kh*kw, N*Ho*Wo] matrix.
void im2col(const double* x, const ConvGeometry& g, double* cols, Index ld) {
  for (Index ch = 0; ch < g.c; ++ch)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * ld;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          double* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* in = x + (ch * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : 0.0;
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back into sample gradient `dx`.
void col2im(const double* cols, const ConvGeometry& g, double* dx, Index ld) {
  for (Index ch = 0; ch < g.c; ++ch)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * ld;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* out = dx + (ch * g.h + iy) * g.w;
          const double* in = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) out[ix] += in[ox];
          }
        }
      }
}

Tensor elementwise_unary(const Tensor& x, Array value, std::string op, Array local_grad) {
  return Tensor::make_result(x.shape(), std::move(value), std::move(op), {x},
                             [d = std::move(local_grad)](detail::Node& self) {
                               self.inputs[0]->accumulate(self.grad * d);
                             });
}

// 1-D interpolation taps for x2 upsampling.
struct Taps {
  std::vector<Index> i0, i1;
  std::vector<double> w0, w1;
};

Taps upsample_taps(Index in, Upsample mode) {
  Taps t;
  const Index out = 2 * in;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  for (Index o = 0; o < out; ++o) {
    if (mode == Upsample::Nearest) {
      t.i0[o] = t.i1[o] = o / 2;
      t.w0[o] = 1.0;
      t.w1[o] = 0.0;
      continue;
    }
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    Index lo = static_cast<Index>(std::floor(src));
    double frac = src - static_cast<double>(lo);
    Index hi = lo + 1;
    if (lo < 0) {
      lo = 0;
      hi = 0;
      frac = 0.0;
    }
    if (hi > in - 1) {
      hi = in - 1;
      if (lo > in - 1) lo = in - 1;
    }
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (kernel.dim(1) != g.c)
    throw DimensionError("conv2d: input has " + std::to_string(g.c) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad)
    throw DimensionError("conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  const Index rows = g.rows();
  const Index p = g.positions();
  const Index np = g.n * p;
  const Index sample = g.c * g.h * g.w;
  // [rows, N*P]; left uninitialised because im2col writes every entry.
  std::shared_ptr<double[]> cols(new double[static_cast<std::size_t>(rows * np)]);
  for (Index s = 0; s < g.n; ++s) im2col(input.values().data() + s * sample, g, cols.get() + s * p, np);
  RowMatrix wide(g.f, np);
  wide.noalias() = ConstRowMap(kernel.values().data(), g.f, rows) * ConstRowMap(cols.get(), rows, np);
  Array out(g.n * g.f * p);
  for (Index s = 0; s < g.n; ++s)
    RowMap(out.data() + s * g.f * p, g.f, p) = wide.middleCols(s * p, p);

  return Tensor::make_result(
      {g.n, g.f, g.ho, g.wo}, std::move(out), "conv2d", {input, kernel},
      [g, cols](detail::Node& self) {
        const Index rows = g.rows();
        const Index p = g.positions();
        const Index np = g.n * p;
        const Index sample = g.c * g.h * g.w;
        RowMatrix dout(g.f, np);
        for (Index s = 0; s < g.n; ++s)
          dout.middleCols(s * p, p) = ConstRowMap(self.grad.data() + s * g.f * p, g.f, p);
        const auto& kin = *self.inputs[1];
        if (wants_grad(self, 1)) {
          Array dk(kin.value.size());
          RowMap(dk.data(), g.f, rows).noalias() = dout * ConstRowMap(cols.get(), rows, np).transpose();
          self.inputs[1]->accumulate(dk);
        }
        if (wants_grad(self, 0)) {
          RowMatrix dcols(rows, np);
          dcols.noalias() = ConstRowMap(kin.value.data(), g.f, rows).transpose() * dout;
          Array dx = Array::Zero(self.inputs[0]->value.size());
          for (Index s = 0; s < g.n; ++s) col2im(dcols.data() + s * p, g, dx.data() + s * sample, np);
          self.inputs[0]->accumulate(dx);
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad) {
  return add_bias(conv2d(input, kernel, stride, pad), bias);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index n = a.dim(0), d = a.dim(1), m = b.dim(1);
  if (b.dim(0) != d)
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Array out(n * m);
  RowMap(out.data(), n, m).noalias() =
      ConstRowMap(a.values().data(), n, d) * ConstRowMap(b.values().data(), d, m);
  return Tensor::make_result({n, m}, std::move(out), "matmul", {a, b},
                             [n, d, m](detail::Node& self) {
                               ConstRowMap g(self.grad.data(), n, m);
                               const auto& an = *self.inputs[0];
                               const auto& bn = *self.inputs[1];
                               if (an.requires_grad) {
                                 Array da(n * d);
                                 RowMap(da.data(), n, d).noalias() =
                                     g * ConstRowMap(bn.value.data(), d, m).transpose();
                                 self.inputs[0]->accumulate(da);
                               }
                               if (bn.requires_grad) {
                                 Array db(d * m);
                                 RowMap(db.data(), d, m).noalias() =
                                     ConstRowMap(an.value.data(), n, d).transpose() * g;
                                 self.inputs[1]->accumulate(db);
                               }
                             });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("add_bias: rank must be >= 2");
  require_rank(bias, 1, "add_bias");
  const Index n = x.dim(0), c = x.dim(1);
  if (bias.dim(0) != c)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " for " +
                         shape_str(x.shape()));
  const Index inner = x.size() / std::max<Index>(1, n * c);
  Array out = x.values();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) out.segment((s * c + ch) * inner, inner) += bias[ch];
  return Tensor::make_result(x.shape(), std::move(out), "add_bias", {x, bias},
                             [n, c, inner](detail::Node& self) {
                               if (wants_grad(self, 0)) self.inputs[0]->accumulate(self.grad);
                               if (wants_grad(self, 1)) {
                                 Array db = Array::Zero(c);
                                 for (Index s = 0; s < n; ++s)
                                   for (Index ch = 0; ch < c; ++ch)
                                     db[ch] += self.grad.segment((s * c + ch) * inner, inner).sum();
                                 self.inputs[1]->accumulate(db);
                               }
                             });
}

Tensor relu(const Tensor& x) {
  const Array& v = x.values();
  return elementwise_unary(x, v.max(0.0), "relu", (v > 0.0).cast<double>());
}

Tensor max_const(const Tensor& x, double c) {
  const Array& v = x.values();
  return elementwise_unary(x, v.max(c), "max_const", (v > c).cast<double>());
}

Tensor sigmoid(const Tensor& x) {
  // Split by sign so neither branch overflows.
  const Array& v = x.values();
  Array s(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] >= 0) {
      s[i] = 1.0 / (1.0 + std::exp(-v[i]));
    } else {
      const double e = std::exp(v[i]);
      s[i] = e / (1.0 + e);
    }
  }
  Array d = s * (1.0 - s);
  return elementwise_unary(x, std::move(s), "sigmoid", std::move(d));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::make_result(a.shape(), a.values() + b.values(), "add", {a, b},
                             [](detail::Node& self) {
                               if (wants_grad(self, 0)) self.inputs[0]->accumulate(self.grad);
                               if (wants_grad(self, 1)) self.inputs[1]->accumulate(self.grad);
                             });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::make_result(a.shape(), a.values() - b.values(), "sub", {a, b},
                             [](detail::Node& self) {
                               if (wants_grad(self, 0)) self.inputs[0]->accumulate(self.grad);
                               if (wants_grad(self, 1)) self.inputs[1]->accumulate(-self.grad);
                             });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor::make_result(a.shape(), a.values() * b.values(), "mul", {a, b},
                             [](detail::Node& self) {
                               if (wants_grad(self, 0))
                                 self.inputs[0]->accumulate(self.grad * self.inputs[1]->value);
                               if (wants_grad(self, 1))
                                 self.inputs[1]->accumulate(self.grad * self.inputs[0]->value);
                             });
}

Tensor operator-(const Tensor& x) { return -1.0 * x; }

Tensor operator*(double s, const Tensor& x) {
  return Tensor::make_result(x.shape(), s * x.values(), "scale", {x},
                             [s](detail::Node& self) { self.inputs[0]->accumulate(s * self.grad); });
}

Tensor operator*(const Tensor& x, double s) { return s * x; }

Tensor operator+(const Tensor& x, double c) {
  return Tensor::make_result(x.shape(), x.values() + c, "add_scalar", {x},
                             [](detail::Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Tensor operator-(const Tensor& x, double c) { return x + (-c); }

Tensor operator-(double c, const Tensor& x) {
  return Tensor::make_result(x.shape(), c - x.values(), "rsub_scalar", {x},
                             [](detail::Node& self) { self.inputs[0]->accumulate(-self.grad); });
}

Tensor sum(const Tensor& x) {
  return Tensor::make_result({}, Array::Constant(1, x.values().sum()), "sum", {x},
                             [](detail::Node& self) {
                               self.inputs[0]->accumulate(
                                   Array::Constant(self.inputs[0]->value.size(), self.grad[0]));
                             });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return Tensor::make_result({}, Array::Constant(1, x.values().sum() / n), "mean", {x},
                             [n](detail::Node& self) {
                               self.inputs[0]->accumulate(
                                   Array::Constant(self.inputs[0]->value.size(), self.grad[0] / n));
                             });
}

Tensor mean_per_sample(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("mean_per_sample on scalar");
  const Index n = x.dim(0);
  const Index inner = x.size() / std::max<Index>(n, 1);
  Array out(n);
  for (Index s = 0; s < n; ++s) out[s] = x.values().segment(s * inner, inner).sum() / inner;
  return Tensor::make_result({n}, std::move(out), "mean_per_sample", {x},
                             [n, inner](detail::Node& self) {
                               Array d(n * inner);
                               for (Index s = 0; s < n; ++s)
                                 d.segment(s * inner, inner).setConstant(self.grad[s] / inner);
                               self.inputs[0]->accumulate(d);
                             });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: spatial dims must be even");
  const Index ho = h / 2, wo = w / 2, planes = n * c;
  Array out(planes * ho * wo);
  const double* in = x.values().data();
  for (Index pl = 0; pl < planes; ++pl)
    for (Index y = 0; y < ho; ++y)
      for (Index xx = 0; xx < wo; ++xx) {
        const double* r0 = in + (pl * h + 2 * y) * w + 2 * xx;
        const double* r1 = r0 + w;
        out[(pl * ho + y) * wo + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  return Tensor::make_result({n, c, ho, wo}, std::move(out), "avg_pool2", {x},
                             [planes, h, w, ho, wo](detail::Node& self) {
                               Array d(planes * h * w);
                               for (Index pl = 0; pl < planes; ++pl)
                                 for (Index y = 0; y < h; ++y)
                                   for (Index xx = 0; xx < w; ++xx)
                                     d[(pl * h + y) * w + xx] =
                                         0.25 * self.grad[(pl * ho + y / 2) * wo + xx / 2];
                               self.inputs[0]->accumulate(d);
                             });
}

Tensor upsample2(const Tensor& x, Upsample mode) {
  require_rank(x, 4, "upsample2");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = 2 * h, wo = 2 * w, planes = n * c;
  auto ty = std::make_shared<Taps>(upsample_taps(h, mode));
  auto tx = std::make_shared<Taps>(upsample_taps(w, mode));
  Array out(planes * ho * wo);
  const double* in = x.values().data();
  for (Index pl = 0; pl < planes; ++pl) {
    const double* src = in + pl * h * w;
    for (Index y = 0; y < ho; ++y) {
      const double* ra = src + ty->i0[y] * w;
      const double* rb = src + ty->i1[y] * w;
      const double wa = ty->w0[y], wb = ty->w1[y];
      for (Index xx = 0; xx < wo; ++xx) {
        const Index a = tx->i0[xx], b = tx->i1[xx];
        const double va = tx->w0[xx] * ra[a] + tx->w1[xx] * ra[b];
        const double vb = tx->w0[xx] * rb[a] + tx->w1[xx] * rb[b];
        out[(pl * ho + y) * wo + xx] = wa * va + wb * vb;
      }
    }
  }
  const char* name = mode == Upsample::Nearest ? "upsample_nearest" : "upsample_bilinear";
  return Tensor::make_result(
      {n, c, ho, wo}, std::move(out), name, {x}, [planes, h, w, ho, wo, ty, tx](detail::Node& self) {
        Array d = Array::Zero(planes * h * w);
        for (Index pl = 0; pl < planes; ++pl) {
          double* dst = d.data() + pl * h * w;
          for (Index y = 0; y < ho; ++y) {
            double* ra = dst + ty->i0[y] * w;
            double* rb = dst + ty->i1[y] * w;
            const double wa = ty->w0[y], wb = ty->w1[y];
            for (Index xx = 0; xx < wo; ++xx) {
              const double g = self.grad[(pl * ho + y) * wo + xx];
              const Index a = tx->i0[xx], b = tx->i1[xx];
              ra[a] += wa * tx->w0[xx] * g;
              ra[b] += wa * tx->w1[xx] * g;
              rb[a] += wb * tx->w0[xx] * g;
              rb[b] += wb * tx->w1[xx] * g;
            }
          }
        }
        self.inputs[0]->accumulate(d);
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return Tensor::make_result(std::move(shape), x.values(), "reshape", {x},
                             [](detail::Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten on scalar");
  const Index n = x.dim(0);
  return reshape(x, {n, n ? x.size() / n : 0});
}

Tensor repeat_channels(const Tensor& x, Index channels) {
  require_rank(x, 4, "repeat_channels");
  if (x.dim(1) != 1) throw DimensionError("repeat_channels expects a single channel");
  const Index n = x.dim(0), plane = x.dim(2) * x.dim(3);
  Array out(n * channels * plane);
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < channels; ++c)
      out.segment((s * channels + c) * plane, plane) = x.values().segment(s * plane, plane);
  return Tensor::make_result({n, channels, x.dim(2), x.dim(3)}, std::move(out), "repeat_channels",
                             {x}, [n, channels, plane](detail::Node& self) {
                               Array d = Array::Zero(n * plane);
                               for (Index s = 0; s < n; ++s)
                                 for (Index c = 0; c < channels; ++c)
                                   d.segment(s * plane, plane) +=
                                       self.grad.segment((s * channels + c) * plane, plane);
                               self.inputs[0]->accumulate(d);
                             });
}

Tensor pick(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "pick");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n)
    throw DimensionError("pick: target count does not match rows");
  std::vector<int> tgt(targets.begin(), targets.end());
  Array out(n);
  for (Index i = 0; i < n; ++i) {
    if (tgt[i] < 0 || tgt[i] >= k) throw IndexError("pick: target out of range");
    out[i] = logits.values()[i * k + tgt[i]];
  }
  return Tensor::make_result({n}, std::move(out), "pick", {logits},
                             [n, k, tgt = std::move(tgt)](detail::Node& self) {
                               Array d = Array::Zero(n * k);
                               for (Index i = 0; i < n; ++i) d[i * k + tgt[i]] = self.grad[i];
                               self.inputs[0]->accumulate(d);
                             });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (k < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes");
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  if (static_cast<Index>(targets.size()) != n)
    throw DimensionError("softmax_cross_entropy: target count does not match rows");
  ConstRowMap z(logits.values().data(), n, k);
  auto probs = std::make_shared<RowMatrix>(n, k);
  std::vector<int> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (tgt[i] < 0 || tgt[i] >= k)
      throw IndexError("softmax_cross_entropy: target " + std::to_string(tgt[i]) +
                       " outside [0," + std::to_string(k) + ")");
    const double m = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - m).exp();
    const double s = e.sum();
    probs->row(i) = e / s;
    loss += (m + std::log(s)) - z(i, tgt[i]);
  }
  return Tensor::make_result({}, Array::Constant(1, loss / n), "softmax_cross_entropy", {logits},
                             [n, k, probs, tgt = std::move(tgt)](detail::Node& self) {
                               Array d(n * k);
                               RowMap dm(d.data(), n, k);
                               dm = *probs;
                               for (Index i = 0; i < n; ++i) dm(i, tgt[i]) -= 1.0;
                               d *= self.grad[0] / static_cast<double>(n);
                               self.inputs[0]->accumulate(d);
                             });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < k; ++j)
      if (logits.values()[i * k + j] > logits.values()[i * k + best]) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace comet
