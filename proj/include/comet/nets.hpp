#pragma once

#include "comet/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace comet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered collection of named parameter tensors for one network.
class ModelParams {
 public:
  void add(std::string name, Tensor tensor);

  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Total number of scalar parameters.
  Index scalar_count() const;
  void zero_grad();
  void set_requires_grad(bool on);
  /// Deep copy; the copy shares no storage with *this.
  ModelParams clone() const;
  /// Names, shapes and every value bit-for-bit equal.
  bool bitwise_equal(const ModelParams& other) const;

 private:
  std::vector<NamedTensor> entries_;
};

/// Conv blocks (conv3x3 + relu + 2x2 avg-pool), one hidden dense layer and a
/// K-way head. Used for both the predictor and the detector.
struct ClassifierSpec {
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  std::vector<Index> conv_widths{8, 16, 32};
  Index hidden = 64;
  Index classes = 12;
  // Per-channel (x - mean) / std applied before the first conv; empty = none.
  std::vector<double> input_mean, input_std;
};

/// Skip-free encoder-decoder: two conv+pool downsamplings, a bottleneck conv,
/// two bilinear upsample+conv stages, then a 1x1 conv and sigmoid producing a
/// one-channel map at input resolution.
struct SelectorSpec {
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  std::array<Index, 3> widths{8, 16, 16};
  double initial_mask = 0.5;  // output bias starts at logit(initial_mask)
  std::vector<double> input_mean, input_std;
};

ModelParams init_params(const ClassifierSpec& spec, std::uint64_t seed);
ModelParams init_params(const SelectorSpec& spec, std::uint64_t seed);

/// [N,C,H,W] images -> [N,K] logits.
Tensor classifier_forward(const ClassifierSpec& spec, const ModelParams& params, const Tensor& x);
/// [N,C,H,W] images -> [N,1,H,W] attribution maps in (0,1).
Tensor selector_forward(const SelectorSpec& spec, const ModelParams& params, const Tensor& x);

struct ClassifierNet {
  ClassifierSpec spec;
  ModelParams params;

  static ClassifierNet create(const ClassifierSpec& spec, std::uint64_t seed) {
    return {spec, init_params(spec, seed)};
  }
  Tensor forward(const Tensor& x) const { return classifier_forward(spec, params, x); }
  ClassifierNet clone() const { return {spec, params.clone()}; }
};

struct SelectorNet {
  SelectorSpec spec;
  ModelParams params;

  static SelectorNet create(const SelectorSpec& spec, std::uint64_t seed) {
    return {spec, init_params(spec, seed)};
  }
  Tensor forward(const Tensor& x) const { return selector_forward(spec, params, x); }
  SelectorNet clone() const { return {spec, params.clone()}; }
};

/// Adaptive-moment update, or plain SGD when `mode == Sgd`.
class Optimizer {
 public:
  enum class Mode { Adam, Sgd };

  explicit Optimizer(double lr = 5e-4, Mode mode = Mode::Adam, double beta1 = 0.9,
                     double beta2 = 0.999, double epsilon = 1e-8);

  /// Applies one update from the gradients accumulated on `params`.
  /// Tensors that are frozen, or whose gradient is absent or all zero, are
  /// left untouched along with their moment state.
  void step(ModelParams& params);

  std::int64_t steps() const { return steps_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  Mode mode_;
  double beta1_, beta2_, epsilon_;
  std::int64_t steps_ = 0;
  std::vector<Array> first_, second_;
  std::vector<Shape> shapes_;
};

// Checkpoint file: "CMTP", u32 version, u32 array count, then per array
// u32 name length + bytes, u32 rank, u64 dims, f64 data; all little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace comet
