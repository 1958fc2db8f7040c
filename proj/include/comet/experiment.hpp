#pragma once

#include "comet/data.hpp"
#include "comet/metrics.hpp"
#include "comet/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace comet {

struct ExperimentConfig {
  // dataset
  std::string generator = "flower";  // flower | fgbg | dual
  std::uint64_t data_seed = 0;
  int n_per_class = 40;  // per (object, scene) pair for dual
  int classes = 12;      // fgbg only
  double bg_correlation = 0.9;
  int object_classes = 4;
  int scene_classes = 4;
  std::string labels = "object";  // dual only: object | scene

  std::filesystem::path out_dir = "comet_out";
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};  // ablate

  // metrics
  int thresholds = 20;
  PxapMode pxap_mode = PxapMode::Pooled;
  int export_maps = 8;
  double noise_fraction = 0.2;
  std::vector<double> fidelity_ks{5.0, 10.0, 20.0};

  static const std::vector<std::string>& keys();
  /// Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// Reads `key = value` lines; '#' starts a comment.
  void read(std::istream& is);
  void read_file(const std::filesystem::path& path);
  /// Every key in keys() order, one `key = value` line each.
  std::string echo() const;
  void validate() const;
};

/// Output layout under out_dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset" / "data.cmds"; }
  std::filesystem::path checkpoint(std::string_view tag, std::string_view part) const;
  std::filesystem::path log(std::string_view tag) const;
  std::filesystem::path report(std::string_view name) const;
  std::filesystem::path map(std::string_view tag, std::size_t i) const;
  std::filesystem::path config_echo() const { return root / "config.txt"; }
  void create() const;
};

std::string run_tag(Variant variant, std::uint64_t seed);

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS; training reallocates the same sizes every batch. No-op off glibc.
void retain_heap();

Dataset generate_dataset(const ExperimentConfig& config);
/// Applies the label view (dual + labels=scene) to a loaded dataset.
Dataset dataset_view(const Dataset& data, const ExperimentConfig& config);
/// Builds the nets described by `config` for `data` and loads parameters,
/// rejecting shape mismatches.
ClassifierNet load_classifier(const std::filesystem::path& path, const ExperimentConfig& config, const Dataset& data);
SelectorNet load_selector(const std::filesystem::path& path, const ExperimentConfig& config, const Dataset& data);

/// Test-split metrics for a selector/predictor pair.
MetricReport evaluate_model(const SelectorNet& selector, const ClassifierNet& predictor, const Dataset& data,
                            const ExperimentConfig& config, Variant variant, std::uint64_t seed);
/// Input-gradient saliency of a full-image classifier on the test split.
/// Robustness fields are left at zero.
MetricReport evaluate_gradient_baseline(const ClassifierNet& classifier, const Dataset& data,
                                        const ExperimentConfig& config, std::uint64_t seed);

struct VariantRun {
  Variant variant = Variant::Comet;
  JointResult result;
  MetricReport report;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  ClassifierNet detector;
  double plain_accuracy = 0.0;  // detector on full test images
  std::vector<VariantRun> runs;
  std::optional<MetricReport> gradient_baseline;  // set when FP ran

  const VariantRun* find(Variant v) const;
};

/// Pre-trains the detector under `seed`, then trains and evaluates each
/// variant in order.
SeedOutcome run_seed(const Dataset& data, const ExperimentConfig& config, std::uint64_t seed,
                     std::span<const Variant> variants);

struct OrderingCheck {
  std::string name;
  int passed = 0;
  int required = 0;
  int total = 0;
  bool ok() const { return passed >= required; }
};

/// The ablation orderings; a check needs ceil(0.8 * seeds) passing seeds
/// unless it must hold for every seed.
std::vector<OrderingCheck> ordering_checks(std::span<const SeedOutcome> outcomes, const ExperimentConfig& config);

// Commands. Each returns a process exit code.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitOrdering = 3;

int cmd_gen_data(const ExperimentConfig& config, std::ostream& out);
int cmd_pretrain(const ExperimentConfig& config, std::ostream& out);
int cmd_train(const ExperimentConfig& config, std::ostream& out);
int cmd_eval(const ExperimentConfig& config, std::ostream& out);
int cmd_ablate(const ExperimentConfig& config, std::ostream& out);
int cmd_report(const ExperimentConfig& config, std::ostream& out);

}  // namespace comet
