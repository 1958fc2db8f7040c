#pragma once

#include "comet/data.hpp"
#include "comet/nets.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace comet {

struct PrecisionRecallPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

/// Pooled precision/recall at thresholds k / n_thresholds, k = n..0 (so recall
/// is non-decreasing along the returned sequence). A pixel is selected when
/// map >= threshold; precision of an empty selection is 1.
std::vector<PrecisionRecallPoint> precision_recall_curve(std::span<const AttributionMap> maps,
                                                         std::span<const Mask> gts, int n_thresholds = 20);

enum class PxapMode { Pooled, PerImage };

/// Area under the pixel precision-recall curve:
/// sum_k (Rec(tau_k) - Rec(tau_{k-1})) * Prec(tau_k) in order of increasing
/// recall, starting from recall 0. `PerImage` averages per-image values.
double pxap(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds = 20,
            PxapMode mode = PxapMode::Pooled);

/// Mean (over images) IoU of {map >= tau} against gt, for tau = k / n,
/// k = 0..n-1.
std::vector<double> iou_curve(std::span<const AttributionMap> maps, std::span<const Mask> gts,
                              int n_thresholds = 20);
/// Left-rectangle area under iou_curve on [0,1].
double iou_auc(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds = 20);

/// Batch of [N,C,H,W] images -> [N,K] logits.
using Pipeline = std::function<Tensor(const Tensor&)>;

Pipeline classifier_pipeline(const ClassifierNet& classifier);
/// Selector, masking with q, then the predictor on the masked-in image.
Pipeline comet_pipeline(const SelectorNet& selector, const ClassifierNet& predictor, FillPixel q);

std::vector<int> predict(const Pipeline& pipeline, const Dataset& data, std::span<const std::size_t> idx,
                         std::size_t batch = 64);
/// Predictions for explicit images (one C*H*W array each).
std::vector<int> predict_images(const Pipeline& pipeline, const Dataset& data, std::span<const Image> images,
                                std::size_t batch = 64);
double accuracy(const Pipeline& pipeline, const Dataset& data, std::span<const std::size_t> idx);
double accuracy_of(std::span<const int> predictions, std::span<const int> labels);

std::vector<AttributionMap> attribution_maps(const SelectorNet& selector, const Dataset& data,
                                             std::span<const std::size_t> idx);
std::vector<AttributionMap> maps_for_images(const SelectorNet& selector, const Dataset& data,
                                            std::span<const Image> images);
std::vector<Mask> gt_masks(const Dataset& data, std::span<const std::size_t> idx);

enum class TieBreak { RowMajor, Random };

struct FidelityOptions {
  TieBreak tie_break = TieBreak::RowMajor;
  std::uint64_t seed = 0;
};

struct FidelityPoint {
  double k_percent = 0.0;
  double accuracy = 0.0;
};

/// Replaces the top round(k% * H * W) attributed pixels of every image with
/// q and measures the pipeline's accuracy on the result, for each k.
std::vector<FidelityPoint> fidelity_curve(const Pipeline& pipeline, const Dataset& data,
                                          std::span<const std::size_t> idx, std::span<const AttributionMap> maps,
                                          std::span<const double> k_percents, FidelityOptions options = {});

enum class RobustnessMode { Noise, BackgroundSwap };

/// Regenerates maps on perturbed test images and scores them against the
/// original gt masks. `noise_fraction` applies to Noise mode.
double robustness_eval(const SelectorNet& selector, const Dataset& data, std::span<const std::size_t> idx,
                       RobustnessMode mode, std::uint64_t seed, double noise_fraction = 0.2,
                       int n_thresholds = 20);

struct SaliencyMap {
  AttributionMap map;
  bool degenerate = false;  // zero gradient everywhere; map is all zero
};

/// Max over channels of |d logit_y / dx|, min-max normalised per image.
std::vector<SaliencyMap> input_gradient_saliency(const ClassifierNet& classifier, const Tensor& x,
                                                 std::span<const int> labels);
std::vector<AttributionMap> gradient_saliency_maps(const ClassifierNet& classifier, const Dataset& data,
                                                   std::span<const std::size_t> idx);

/// One line of a metric report CSV (`metric,variant,dataset,value,seed`).
struct ReportRow {
  std::string metric;
  std::string variant;
  std::string dataset;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct MetricReport {
  std::string variant;
  std::string dataset;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double pxap = 0.0;
  double iou_auc = 0.0;
  std::vector<FidelityPoint> fidelity;
  double robust_noise = 0.0;
  double robust_bgswap = 0.0;

  std::vector<ReportRow> rows() const;
};

void write_report_csv(std::ostream& os, std::span<const ReportRow> rows);
void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report_csv(std::istream& is);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

/// Binary PGM ("P5", maxval 255) with value round(255 * map).
void write_pgm(const std::filesystem::path& path, const AttributionMap& map);
/// Reads a P5 file back as values in [0,1] (v / 255).
AttributionMap read_pgm(const std::filesystem::path& path);

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace comet
