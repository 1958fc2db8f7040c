#include "comet/errors.hpp"
#include "comet/losses.hpp"
#include "comet/ops.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace comet;
using namespace comet::testing;

namespace {

ClassifierSpec tiny_classifier(Index classes = 12) {
  ClassifierSpec s;
  s.height = s.width = 8;
  s.conv_widths = {3, 4};
  s.hidden = 6;
  s.classes = classes;
  return s;
}

SelectorSpec tiny_selector() {
  SelectorSpec s;
  s.height = s.width = 8;
  s.widths = {3, 4, 3};
  return s;
}

const FillPixel kQ{0.2, 0.2, 0.2};

}  // namespace

TEST(Masks, FullSelection) {
  Rng rng(1);
  const Tensor x({2, 3, 4, 4}, random_values(96, rng, 0.0, 1.0));
  const MaskPair m = make_masks(x, Tensor::constant({2, 1, 4, 4}, 1.0), kQ);
  EXPECT_TRUE((m.masked_in.values() == x.values()).all());
  EXPECT_TRUE((m.masked_out.values() == 0.2).all());
}

TEST(Masks, EmptySelection) {
  Rng rng(2);
  const Tensor x({2, 3, 4, 4}, random_values(96, rng, 0.0, 1.0));
  const MaskPair m = make_masks(x, Tensor::zeros({2, 1, 4, 4}), kQ);
  EXPECT_TRUE((m.masked_in.values() == 0.2).all());
  EXPECT_TRUE((m.masked_out.values() == x.values()).all());
}

TEST(Masks, Midpoint) {
  const MaskPair m = make_masks(Tensor::constant({1, 3, 2, 2}, 0.8), Tensor::constant({1, 1, 2, 2}, 0.5), kQ);
  for (Index i = 0; i < 12; ++i) {
    EXPECT_NEAR(m.masked_in[i], 0.5, 1e-15);
    EXPECT_NEAR(m.masked_out[i], 0.5, 1e-15);
  }
}

TEST(Masks, PerChannelFillBroadcast) {
  const FillPixel q{0.1, 0.5, 0.9};
  const MaskPair m = make_masks(Tensor::zeros({1, 3, 2, 2}), Tensor::zeros({1, 1, 2, 2}), q);
  for (Index c = 0; c < 3; ++c)
    for (Index p = 0; p < 4; ++p) EXPECT_EQ(m.masked_in[c * 4 + p], q[c]);
}

TEST(Masks, IdentityHoldsExactly) {
  // Values on a 1/256 grid make every product and sum exact in f64.
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    Array xv(3 * 16), mv(16);
    for (Index i = 0; i < xv.size(); ++i) xv[i] = static_cast<double>(rng.below(257)) / 256.0;
    for (Index i = 0; i < mv.size(); ++i) mv[i] = static_cast<double>(rng.below(257)) / 256.0;
    const FillPixel q{static_cast<double>(rng.below(257)) / 256.0, 0.5, 0.25};
    const Tensor x({1, 3, 4, 4}, xv);
    const MaskPair m = make_masks(x, Tensor({1, 1, 4, 4}, mv), q);
    const Tensor fill = fill_image(x.shape(), q);
    const Array recovered = m.masked_in.values() + m.masked_out.values() - fill.values();
    ASSERT_TRUE((recovered == xv).all()) << "trial " << trial;
  }
}

TEST(Masks, Errors) {
  const Tensor x = Tensor::zeros({1, 3, 4, 4});
  EXPECT_THROW(make_masks(x, Tensor::constant({1, 1, 4, 4}, 1.5), kQ), ContractError);
  EXPECT_THROW(make_masks(x, Tensor::constant({1, 1, 4, 4}, -0.1), kQ), ContractError);
  EXPECT_THROW(make_masks(x, Tensor::zeros({1, 1, 4, 3}), kQ), DimensionError);
  EXPECT_THROW(make_masks(x, Tensor::zeros({2, 1, 4, 4}), kQ), DimensionError);
  const FillPixel two{0.1, 0.2};
  EXPECT_THROW(make_masks(x, Tensor::zeros({1, 1, 4, 4}), two), DimensionError);
}

TEST(ClassifierLosses, ZeroHeadIsLogK) {
  ClassifierNet net = ClassifierNet::create(tiny_classifier(), 1);
  net.params.at("head.w").mutable_values().setZero();
  Rng rng(3);
  const Tensor x({2, 3, 8, 8}, random_values(384, rng, 0.0, 1.0));
  const std::vector<int> y{4, 11};
  EXPECT_NEAR(predictor_loss(net, x, y).item(), std::log(12.0), 1e-12);
  EXPECT_NEAR(detector_loss(net, x, y).item(), std::log(12.0), 1e-12);
}

TEST(ClassifierLosses, ConfidentCorrectIsNearZero) {
  ClassifierNet net = ClassifierNet::create(tiny_classifier(), 1);
  net.params.at("head.w").mutable_values().setZero();
  net.params.at("head.b").mutable_values()[5] = 1000.0;
  const std::vector<int> y{5};
  const Tensor x = Tensor::constant({1, 3, 8, 8}, 0.3);
  EXPECT_LT(predictor_loss(net, x, y).item(), 1e-12);
  EXPECT_LT(detector_loss(net, x, y).item(), 1e-12);
}

TEST(ClassifierLosses, MatchCompositionOfForwardAndCrossEntropy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ClassifierNet net = ClassifierNet::create(tiny_classifier(), seed);
    Rng rng(seed + 100);
    const Tensor x({3, 3, 8, 8}, random_values(576, rng, 0.0, 1.0));
    const std::vector<int> y{0, 7, 3};
    const double direct = softmax_cross_entropy(classifier_forward(net.spec, net.params, x), y).item();
    EXPECT_EQ(predictor_loss(net, x, y).item(), direct);
    EXPECT_EQ(detector_loss(net, x, y).item(), direct);
  }
}

TEST(Regularizer, Examples) {
  EXPECT_EQ(sparsity_regularizer(Tensor::constant({1, 1, 4, 4}, 0.05), 0.1).item(), 0.0);
  EXPECT_NEAR(sparsity_regularizer(Tensor::constant({1, 1, 4, 4}, 0.30), 0.1).item(), 0.20, 1e-15);
  EXPECT_EQ(sparsity_regularizer(Tensor::constant({1, 1, 4, 4}, 0.25), 0.25).item(), 0.0);
}

TEST(Regularizer, PerImageThenBatchMean) {
  // Image means 0.5 and 0.0: per-image hinge gives (0.4 + 0) / 2, a global
  // mean would give 0.15.
  Array v(32);
  v.head(16).setConstant(0.5);
  v.tail(16).setConstant(0.0);
  EXPECT_NEAR(sparsity_regularizer(Tensor({2, 1, 4, 4}, v), 0.1).item(), 0.2, 1e-15);
}

TEST(Regularizer, Gradient) {
  Tensor over = Tensor::parameter({1, 1, 4, 4}, Array::Constant(16, 0.5));
  backward(sparsity_regularizer(over, 0.1));
  for (Index i = 0; i < 16; ++i) EXPECT_NEAR(over.grad()[i], 1.0 / 16.0, 1e-15);

  Tensor under = Tensor::parameter({1, 1, 4, 4}, Array::Constant(16, 0.05));
  backward(sparsity_regularizer(under, 0.1));
  EXPECT_TRUE((under.grad() == 0.0).all());

  Tensor at = Tensor::parameter({1, 1, 4, 4}, Array::Constant(16, 0.25));
  backward(sparsity_regularizer(at, 0.25));
  EXPECT_TRUE((at.grad() == 0.0).all());

  EXPECT_THROW(sparsity_regularizer(over, 1.5), ContractError);
}

TEST(SelectorLoss, Examples) {
  const LossBreakdown a = selector_loss(0.2, 0.5, 0.0, 5.0, 100.0, 0.1);
  EXPECT_NEAR(a.l_s, -2.3, 1e-15);
  EXPECT_NEAR(a.total, -2.3, 1e-15);

  const LossBreakdown b = selector_loss(0.7, 0.9, 0.3, 0.0, 0.0);
  EXPECT_EQ(b.total, 0.7);

  const LossBreakdown c = selector_loss(2.4849, 2.4849, 0.2, 5.0, 100.0, 0.1);
  EXPECT_NEAR(c.total, 10.0604, 1e-12);
  EXPECT_NEAR(c.total, c.l_p - c.a * c.l_d_out + c.b * c.reg, 1e-15);

  EXPECT_THROW(selector_loss(1, 1, 0, -1, 0), ContractError);
  EXPECT_THROW(selector_loss(1, 1, 0, 0, -1), ContractError);
}

TEST(CompositeLoss, MatchesBreakdown) {
  const Tensor l_p = Tensor::scalar(0.2), l_d = Tensor::scalar(0.5), r = Tensor::scalar(0.01);
  EXPECT_NEAR(composite_loss(l_p, l_d, r, 5.0, 100.0).item(), selector_loss(0.2, 0.5, 0.01, 5.0, 100.0).total,
              1e-15);
}

namespace {

struct Triple {
  SelectorNet selector;
  ClassifierNet predictor;
  ClassifierNet detector;
  Tensor x;
  std::vector<int> y;
  FillPixel q{0.4, 0.5, 0.6};

  explicit Triple(std::uint64_t seed)
      : selector(SelectorNet::create(tiny_selector(), derive_seed(seed, 1))),
        predictor(ClassifierNet::create(tiny_classifier(3), derive_seed(seed, 2))),
        detector(ClassifierNet::create(tiny_classifier(3), derive_seed(seed, 3))) {
    Rng rng(seed);
    x = Tensor({4, 3, 8, 8}, random_values(4 * 192, rng, 0.0, 1.0));
    y = {0, 1, 2, 1};
  }

  Tensor loss() const {
    const Tensor map = selector.forward(x);
    const MaskPair m = make_masks(x, map, q);
    return composite_loss(predictor_loss(predictor, m.masked_in, y), detector_loss(detector, m.masked_out, y),
                          sparsity_regularizer(map, 0.1), 5.0, 100.0);
  }
};

}  // namespace

TEST(GradientRouting, FrozenDetectorGetsNoGradient) {
  Triple s(4);
  s.detector.params.set_requires_grad(false);
  backward(s.loss());
  for (const auto& e : s.detector.params) EXPECT_FALSE(e.tensor.has_grad()) << e.name;
  for (const auto& e : s.selector.params) EXPECT_TRUE(e.tensor.has_grad()) << e.name;
}

TEST(GradientRouting, SelectorSeesBothBranches) {
  // Selector gradient of the full loss is the sum of the two branches taken
  // separately; the regularizer rides with the predictor branch.
  Triple s(5);
  s.detector.params.set_requires_grad(false);
  auto selector_grad = [&s] {
    Array g(s.selector.params.scalar_count());
    Index o = 0;
    for (const auto& e : s.selector.params) {
      g.segment(o, e.tensor.size()) = e.tensor.grad();
      o += e.tensor.size();
    }
    return g;
  };
  s.selector.params.zero_grad();
  backward(s.loss());
  const Array full = selector_grad();

  const Tensor map = s.selector.forward(s.x);
  const MaskPair m = make_masks(s.x, map, s.q);
  s.selector.params.zero_grad();
  backward(predictor_loss(s.predictor, m.masked_in, s.y) + 100.0 * sparsity_regularizer(map, 0.1));
  const Array pred_part = selector_grad();
  s.selector.params.zero_grad();
  backward(-5.0 * detector_loss(s.detector, m.masked_out, s.y));
  const Array det_part = selector_grad();

  EXPECT_GT(det_part.matrix().norm(), 0.0);
  EXPECT_GT(pred_part.matrix().norm(), 0.0);
  EXPECT_LT(relative_error(full, pred_part + det_part), 1e-12);
}

TEST(GradientRouting, SmallStepDescends) {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Triple s(seed);
    s.detector.params.set_requires_grad(false);
    const double before = s.loss().item();
    s.selector.params.zero_grad();
    s.predictor.params.zero_grad();
    backward(s.loss());
    Optimizer sel(1e-5, Optimizer::Mode::Sgd), pred(1e-5, Optimizer::Mode::Sgd);
    sel.step(s.selector.params);
    pred.step(s.predictor.params);
    const double after = s.loss().item();
    if (!(after < before)) ++failures;
  }
  EXPECT_LE(failures, 1);
}
