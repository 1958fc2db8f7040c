#include "comet/errors.hpp"
#include "comet/nets.hpp"
#include "comet/ops.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace comet;
using namespace comet::testing;

namespace {

ClassifierSpec small_classifier() {
  ClassifierSpec s;
  s.height = s.width = 16;
  s.conv_widths = {4, 6};
  s.hidden = 10;
  s.classes = 5;
  return s;
}

SelectorSpec small_selector() {
  SelectorSpec s;
  s.height = s.width = 16;
  s.widths = {4, 6, 6};
  return s;
}

Tensor images(Index n, Index h, Index w, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor({n, 3, h, w}, random_values(n * 3 * h * w, rng, 0.0, 1.0));
}

}  // namespace

TEST(Init, SameSeedIsBitIdentical) {
  EXPECT_TRUE(init_params(ClassifierSpec{}, 4).bitwise_equal(init_params(ClassifierSpec{}, 4)));
  EXPECT_TRUE(init_params(SelectorSpec{}, 4).bitwise_equal(init_params(SelectorSpec{}, 4)));
}

TEST(Init, DifferentSeedsDiffer) {
  EXPECT_FALSE(init_params(ClassifierSpec{}, 4).bitwise_equal(init_params(ClassifierSpec{}, 5)));
  EXPECT_FALSE(init_params(SelectorSpec{}, 4).bitwise_equal(init_params(SelectorSpec{}, 5)));
}

TEST(Init, FanInBound) {
  const ModelParams p = init_params(ClassifierSpec{}, 11);
  const Tensor& w = p.at("conv1.w");
  ASSERT_EQ(w.shape(), (Shape{8, 3, 3, 3}));
  const double bound = std::sqrt(1.0 / 27.0);
  EXPECT_LE(w.values().abs().maxCoeff(), bound);
  // Not degenerate: some weight uses most of the range.
  EXPECT_GT(w.values().abs().maxCoeff(), 0.8 * bound);
  for (const auto& e : p)
    if (e.name.ends_with(".b")) EXPECT_TRUE((e.tensor.values() == 0.0).all()) << e.name;
}

TEST(Init, SelectorOutputBiasIsLogitOfInitialMask) {
  SelectorSpec s;
  s.initial_mask = 0.1;
  const ModelParams p = init_params(s, 2);
  EXPECT_DOUBLE_EQ(p.at("out.b")[0], std::log(0.1 / 0.9));
  s.initial_mask = 1.0;
  EXPECT_THROW(init_params(s, 2), ConfigError);
  s.initial_mask = 0.0;
  EXPECT_THROW(init_params(s, 2), ConfigError);
}

TEST(Init, BadGeometry) {
  ClassifierSpec c;
  c.height = 30;
  EXPECT_THROW(init_params(c, 0), ConfigError);
  SelectorSpec s;
  s.width = 18;
  EXPECT_THROW(init_params(s, 0), ConfigError);
}

TEST(Selector, ShapeAndRange) {
  const SelectorNet net = SelectorNet::create(small_selector(), 3);
  const Tensor map = net.forward(images(3, 16, 16, 1));
  EXPECT_EQ(map.shape(), (Shape{3, 1, 16, 16}));
  EXPECT_GE(map.values().minCoeff(), 0.0);
  EXPECT_LE(map.values().maxCoeff(), 1.0);
  // Extreme inputs stay finite and in range.
  const Tensor wild = net.forward(Tensor::constant({1, 3, 16, 16}, 1e6));
  EXPECT_TRUE(wild.values().isFinite().all());
  EXPECT_GE(wild.values().minCoeff(), 0.0);
  EXPECT_LE(wild.values().maxCoeff(), 1.0);
}

TEST(Selector, ZeroFinalLayerGivesHalf) {
  SelectorNet net = SelectorNet::create(small_selector(), 3);
  net.params.at("out.w").mutable_values().setZero();
  net.params.at("out.b").mutable_values().setZero();
  EXPECT_TRUE((net.forward(images(2, 16, 16, 5)).values() == 0.5).all());
}

TEST(Selector, WrongInputShape) {
  const SelectorNet net = SelectorNet::create(small_selector(), 3);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 1, 16, 16})), DimensionError);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 3, 8, 8})), DimensionError);
}

TEST(Classifier, ShapeAndDeterminism) {
  const ClassifierNet net = ClassifierNet::create(small_classifier(), 8);
  const Tensor x = images(4, 16, 16, 2);
  const Tensor a = net.forward(x), b = net.forward(x);
  EXPECT_EQ(a.shape(), (Shape{4, 5}));
  EXPECT_TRUE((a.values() == b.values()).all());
}

TEST(Classifier, ZeroHeadGivesEqualLogits) {
  ClassifierNet net = ClassifierNet::create(small_classifier(), 8);
  net.params.at("head.w").mutable_values().setZero();
  EXPECT_TRUE((net.forward(images(3, 16, 16, 2)).values() == 0.0).all());
}

TEST(Classifier, StandardisationMatchesPreScaledInput) {
  ClassifierSpec plain = small_classifier();
  ClassifierSpec scaled = plain;
  scaled.input_mean = {0.4, 0.5, 0.6};
  scaled.input_std = {0.2, 0.25, 0.5};
  const ModelParams p = init_params(plain, 6);
  const Tensor x = images(2, 16, 16, 9);
  Array pre = x.values();
  for (Index s = 0; s < 2; ++s)
    for (Index c = 0; c < 3; ++c) {
      auto seg = pre.segment((s * 3 + c) * 256, 256);
      seg = (seg - scaled.input_mean[c]) / scaled.input_std[c];
    }
  const Tensor expect = classifier_forward(plain, p, Tensor(x.shape(), pre));
  const Tensor got = classifier_forward(scaled, p, x);
  for (Index i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);

  scaled.input_std = {0.2, 0.25};
  EXPECT_THROW(classifier_forward(scaled, p, x), DimensionError);
}

TEST(Classifier, DetectorAndPredictorHaveEqualParameterCounts) {
  const ClassifierNet predictor = ClassifierNet::create(ClassifierSpec{}, 1);
  const ClassifierNet detector = ClassifierNet::create(ClassifierSpec{}, 2);
  EXPECT_EQ(predictor.params.scalar_count(), detector.params.scalar_count());
  // 3*8*9+8 + 8*16*9+16 + 16*32*9+32 + 512*64+64 + 64*12+12
  EXPECT_EQ(predictor.params.scalar_count(), 224 + 1168 + 4640 + 32832 + 780);
}

TEST(Params, CloneSharesNoStorage) {
  ModelParams a = init_params(small_classifier(), 1);
  ModelParams b = a.clone();
  EXPECT_TRUE(a.bitwise_equal(b));
  b.at("fc.w").mutable_values()[0] += 1.0;
  EXPECT_FALSE(a.bitwise_equal(b));
  EXPECT_THROW(a.at("nope"), ContractError);
  EXPECT_THROW(a.add("fc.w", Tensor::zeros({1})), ContractError);
}

TEST(Optimizer, SgdStep) {
  ModelParams p;
  p.add("w", Tensor::parameter({1}, Array::Constant(1, 1.0)));
  backward(2.0 * sum(p.at("w")));
  Optimizer opt(0.1, Optimizer::Mode::Sgd);
  opt.step(p);
  EXPECT_NEAR(p.at("w")[0], 0.8, 1e-15);
}

TEST(Optimizer, ZeroGradientsLeaveParamsUnchanged) {
  ModelParams p;
  p.add("w", Tensor::parameter({3}, Array::Constant(3, 1.5)));
  Optimizer opt(0.01);
  // Build up momentum first.
  for (int i = 0; i < 5; ++i) {
    p.zero_grad();
    backward(sum(p.at("w") * p.at("w")));
    opt.step(p);
  }
  const Array before = p.at("w").values();
  p.zero_grad();
  backward(0.0 * sum(p.at("w")));
  opt.step(p);
  EXPECT_TRUE((p.at("w").values() == before).all());
  p.zero_grad();
  opt.step(p);
  EXPECT_TRUE((p.at("w").values() == before).all());
}

TEST(Optimizer, FrozenTensorsUntouched) {
  ModelParams p;
  p.add("w", Tensor::parameter({2}, Array::Constant(2, 1.0)));
  backward(sum(p.at("w")));
  p.set_requires_grad(false);
  Optimizer opt(0.1);
  opt.step(p);
  EXPECT_TRUE((p.at("w").values() == 1.0).all());
}

TEST(Optimizer, QuadraticBowl) {
  for (auto mode : {Optimizer::Mode::Sgd, Optimizer::Mode::Adam}) {
    ModelParams p;
    p.add("p", Tensor::parameter({1}, Array::Zero(1)));
    Optimizer opt(0.1, mode);
    for (int i = 0; i < 200; ++i) {
      p.zero_grad();
      const Tensor d = p.at("p") - 3.0;
      backward(sum(d * d));
      opt.step(p);
    }
    EXPECT_NEAR(p.at("p")[0], 3.0, 1e-2);
  }
}

TEST(Optimizer, BadLearningRate) {
  EXPECT_THROW(Optimizer(0.0), ConfigError);
  EXPECT_THROW(Optimizer(-1.0), ConfigError);
}

TEST(Optimizer, ShapeChangeIsContractError) {
  ModelParams p;
  p.add("w", Tensor::parameter({2}, Array::Ones(2)));
  Optimizer opt(0.1);
  backward(sum(p.at("w")));
  opt.step(p);
  ModelParams q;
  q.add("w", Tensor::parameter({3}, Array::Ones(3)));
  EXPECT_THROW(opt.step(q), ContractError);
}

TEST(Checkpoint, RoundTrip) {
  const ModelParams p = init_params(SelectorSpec{}, 21);
  const ModelParams back = deserialize_checkpoint(serialize_checkpoint(p));
  EXPECT_TRUE(p.bitwise_equal(back));
  const auto path = std::filesystem::temp_directory_path() / "comet_nets_test.cmtp";
  save_checkpoint(path, p);
  EXPECT_TRUE(p.bitwise_equal(load_checkpoint(path)));
  std::filesystem::remove(path);
}

TEST(Checkpoint, Layout) {
  ModelParams p;
  p.add("ab", Tensor::parameter({2}, Array::Constant(2, 1.0)));
  const std::string bytes = serialize_checkpoint(p);
  // magic, version, count, name length, name, rank, one dim, two doubles
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 2 + 4 + 8 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "CMTP");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes.substr(16, 2), "ab");
}

TEST(Checkpoint, MalformedInput) {
  const std::string good = serialize_checkpoint(init_params(small_classifier(), 1));
  EXPECT_THROW(deserialize_checkpoint("XXXX" + good.substr(4)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(good + "x"), FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.cmtp"), FormatError);
}
