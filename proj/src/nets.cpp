#include "comet/nets.hpp"

#include "comet/errors.hpp"
#include "comet/ops.hpp"
#include "comet/random.hpp"

#include <cmath>
#include <cstring>

namespace comet {

void ModelParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

Tensor& ModelParams::at(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("no parameter named " + std::string(name));
}

const Tensor& ModelParams::at(std::string_view name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

bool ModelParams::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

Index ModelParams::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& e : entries_) e.tensor.set_requires_grad(on);
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
  return out;
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.values().data(), b.tensor.values().data(),
                    sizeof(double) * static_cast<std::size_t>(a.tensor.size())) != 0)
      return false;
  }
  return true;
}

namespace {

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
Tensor uniform_weight(const Shape& shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
  return Tensor::parameter(shape, std::move(v));
}

void add_conv(ModelParams& p, const std::string& name, Index in, Index out, Index k, Rng& rng) {
  p.add(name + ".w", uniform_weight({out, in, k, k}, in * k * k, rng));
  p.add(name + ".b", Tensor::parameter({out}, Array::Zero(out)));
}

void add_dense(ModelParams& p, const std::string& name, Index in, Index out, Rng& rng) {
  p.add(name + ".w", uniform_weight({in, out}, in, rng));
  p.add(name + ".b", Tensor::parameter({out}, Array::Zero(out)));
}

Tensor conv(const ModelParams& p, const std::string& name, const Tensor& x, int pad) {
  return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), 1, pad);
}

Tensor dense(const ModelParams& p, const std::string& name, const Tensor& x) {
  return add_bias(matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

void check_input(const Tensor& x, Index c, Index h, Index w, const char* who) {
  if (x.rank() != 4 || x.dim(1) != c || x.dim(2) != h || x.dim(3) != w)
    throw DimensionError(std::string(who) + ": expected [N," + std::to_string(c) + "," +
                         std::to_string(h) + "," + std::to_string(w) + "], got " +
                         shape_str(x.shape()));
}

Tensor standardize(const Tensor& x, const std::vector<double>& mean, const std::vector<double>& stdv) {
  if (mean.empty() && stdv.empty()) return x;
  const Index c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (static_cast<Index>(mean.size()) != c || static_cast<Index>(stdv.size()) != c)
    throw DimensionError("input standardisation needs one mean and std per channel");
  Array shift(x.size()), scale(x.size());
  for (Index s = 0; s < x.dim(0); ++s)
    for (Index ch = 0; ch < c; ++ch) {
      const auto i = static_cast<std::size_t>(ch);
      if (!(stdv[i] > 0.0)) throw ConfigError("input std must be positive");
      shift.segment((s * c + ch) * plane, plane).setConstant(mean[i]);
      scale.segment((s * c + ch) * plane, plane).setConstant(1.0 / stdv[i]);
    }
  return (x - Tensor(x.shape(), std::move(shift))) * Tensor(x.shape(), std::move(scale));
}

}  // namespace

ModelParams init_params(const ClassifierSpec& spec, std::uint64_t seed) {
  const Index down = Index{1} << spec.conv_widths.size();
  if (spec.height % down || spec.width % down)
    throw ConfigError("classifier input size must be divisible by 2^blocks");
  if (spec.classes < 2) throw ConfigError("classifier needs at least 2 classes");
  Rng rng(seed);
  ModelParams p;
  Index in = spec.channels;
  for (std::size_t i = 0; i < spec.conv_widths.size(); ++i) {
    add_conv(p, "conv" + std::to_string(i + 1), in, spec.conv_widths[i], 3, rng);
    in = spec.conv_widths[i];
  }
  const Index flat = in * (spec.height / down) * (spec.width / down);
  add_dense(p, "fc", flat, spec.hidden, rng);
  add_dense(p, "head", spec.hidden, spec.classes, rng);
  return p;
}

ModelParams init_params(const SelectorSpec& spec, std::uint64_t seed) {
  if (spec.height % 4 || spec.width % 4) throw ConfigError("selector input size must be divisible by 4");
  Rng rng(seed);
  ModelParams p;
  const auto [w1, w2, w3] = spec.widths;
  add_conv(p, "enc1", spec.channels, w1, 3, rng);
  add_conv(p, "enc2", w1, w2, 3, rng);
  add_conv(p, "mid", w2, w3, 3, rng);
  add_conv(p, "dec1", w3, w2, 3, rng);
  add_conv(p, "dec2", w2, w1, 3, rng);
  add_conv(p, "out", w1, 1, 1, rng);
  if (!(spec.initial_mask > 0.0 && spec.initial_mask < 1.0)) throw ConfigError("initial_mask must lie in (0,1)");
  p.at("out.b").mutable_values().setConstant(std::log(spec.initial_mask / (1.0 - spec.initial_mask)));
  return p;
}

Tensor classifier_forward(const ClassifierSpec& spec, const ModelParams& params, const Tensor& x) {
  check_input(x, spec.channels, spec.height, spec.width, "classifier_forward");
  Tensor h = standardize(x, spec.input_mean, spec.input_std);
  for (std::size_t i = 0; i < spec.conv_widths.size(); ++i)
    h = avg_pool2(relu(conv(params, "conv" + std::to_string(i + 1), h, 1)));
  h = relu(dense(params, "fc", flatten(h)));
  return dense(params, "head", h);
}

Tensor selector_forward(const SelectorSpec& spec, const ModelParams& params, const Tensor& x) {
  check_input(x, spec.channels, spec.height, spec.width, "selector_forward");
  Tensor h = avg_pool2(relu(conv(params, "enc1", standardize(x, spec.input_mean, spec.input_std), 1)));
  h = avg_pool2(relu(conv(params, "enc2", h, 1)));
  h = relu(conv(params, "mid", h, 1));
  h = relu(conv(params, "dec1", upsample2(h, Upsample::Bilinear), 1));
  h = relu(conv(params, "dec2", upsample2(h, Upsample::Bilinear), 1));
  return sigmoid(conv(params, "out", h, 0));
}

Optimizer::Optimizer(double lr, Mode mode, double beta1, double beta2, double epsilon)
    : lr_(lr), mode_(mode), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(ModelParams& params) {
  if (shapes_.empty()) {
    for (const auto& e : params) {
      shapes_.push_back(e.tensor.shape());
      first_.push_back(Array::Zero(e.tensor.size()));
      second_.push_back(Array::Zero(e.tensor.size()));
    }
  }
  if (shapes_.size() != params.size())
    throw ContractError("optimizer: parameter count changed between steps");
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  std::size_t i = 0;
  for (auto& e : params) {
    const std::size_t slot = i++;
    if (e.tensor.shape() != shapes_[slot])
      throw ContractError("optimizer: shape of " + e.name + " changed");
    if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
    Array g = e.tensor.grad();
    if (g.size() != e.tensor.size()) throw ContractError("optimizer: gradient misaligned for " + e.name);
    if ((g == 0.0).all()) continue;
    Array& w = e.tensor.mutable_values();
    if (mode_ == Mode::Sgd) {
      w -= lr_ * g;
      continue;
    }
    first_[slot] = beta1_ * first_[slot] + (1.0 - beta1_) * g;
    second_[slot] = beta2_ * second_[slot] + (1.0 - beta2_) * g.square();
    w -= lr_ * (first_[slot] / bc1) / ((second_[slot] / bc2).sqrt() + epsilon_);
  }
}

}  // namespace comet
