#pragma once

#include "comet/losses.hpp"
#include "comet/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace comet {

/// Binary H x W mask, row-major.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Per-pixel importance in [0,1], H x W, row-major.
using AttributionMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// C x H x W image stored channel-major as 32-bit floats in [0,1].
using Image = Eigen::ArrayXf;

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct Sample {
  Image image;
  int label = 0;
  Split split = Split::Train;
  Mask gt_mask;  // discriminative pixels
  Mask fg_mask;  // whole object
  std::string meta;
  int scene_label = -1;  // only set by the dual-label generator
};

struct Dataset {
  int classes = 0;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  FillPixel q;  // per-channel mean of the train split
  std::vector<Sample> samples;
  int scene_classes = 0;

  std::vector<std::size_t> indices(Split split) const;
  Index pixels() const { return height * width; }
};

/// Stacks the selected samples into an [N,C,H,W] tensor.
Tensor to_batch(const Dataset& data, std::span<const std::size_t> idx);
std::vector<int> labels_of(const Dataset& data, std::span<const std::size_t> idx);
/// Per-channel mean over the train split, accumulated in double.
FillPixel train_mean(const Dataset& data);
/// Per-channel standard deviation over the train split around `mean`.
FillPixel train_std(const Dataset& data, const FillPixel& mean);

namespace synth {

inline constexpr int kFlowerColors = 6;
inline constexpr int kFlowerClasses = 2 * kFlowerColors;
inline constexpr int kShapeKinds = 6;
inline constexpr int kTexturePool = 12;

/// Flower-on-stem images: 12 classes = 6 colours x {flower, stem}. The
/// coloured part is the discriminative region; the other part is green.
/// Label = 2 * colour + part (part 0 = flower disc, 1 = stem).
Dataset gen_flower(std::uint64_t seed, int n_per_class);

/// K coloured polygon objects composited onto procedural textures. With
/// probability `bg_correlation` a sample's texture is its class's preferred
/// one, otherwise uniform over the pool; the label depends only on the object.
Dataset gen_fgbg(std::uint64_t seed, int n_per_class, int classes, double bg_correlation = 0.9);

/// Object label and scene label (= texture id) drawn independently. Every
/// (object, scene) pair appears `n_per_pair` times.
Dataset gen_dual_label(std::uint64_t seed, int n_per_pair, int object_classes = 4, int scene_classes = 4);

/// One instance of procedural texture `texture_id` (value noise over a
/// gradient field, never a solid colour).
Image render_texture(int texture_id, std::uint64_t seed, Index height, Index width);
/// Low-saturation background of the kind used by the flower generator.
Image render_flower_background(std::uint64_t seed, Index height, Index width);
/// A background of the same family as `sample`'s, drawn from a fresh seed.
Image alternate_background(const Dataset& data, const Sample& sample, std::uint64_t seed);

/// Sets exactly round(fraction * H * W) distinct, uniformly chosen pixel
/// positions to q in every channel.
Image perturb_remove_pixels(const Image& image, Index channels, Index height, Index width,
                            double fraction, std::span<const double> q, std::uint64_t seed);

/// Replaces every pixel outside fg_mask with `background`.
Sample swap_background(const Sample& sample, const Image& background);

/// Dual-label dataset viewed through its scene labels: label := scene label,
/// gt_mask = fg_mask := complement of the object mask.
Dataset scene_view(const Dataset& dual);

/// Labels shuffled uniformly at random across all samples.
Dataset permute_labels(const Dataset& data, std::uint64_t seed);

/// Image with pixels outside (keep_foreground) or inside the fg mask set to q.
Image composite_fill(const Sample& sample, Index channels, std::span<const double> q, bool keep_foreground);

}  // namespace synth

// Dataset file: "CMDS", u32 version, u32 K, u32 H, u32 W, u32 C, C x f64 q,
// u64 sample count; per sample u32 label, u8 split, C*H*W f32 image,
// gt and fg bitsets (row-major, LSB first), u32 meta length + bytes.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(const std::string& bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace comet
