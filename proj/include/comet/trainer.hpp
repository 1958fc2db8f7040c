#pragma once

#include "comet/data.hpp"
#include "comet/nets.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace comet {

enum class Variant {
  Comet,              // frozen pre-trained detector
  TrainableDetector,  // detector also trained on masked-out images
  NoDetector,         // a = 0
  FixedPredictor,     // predictor pre-trained on full images and frozen, a = 0
  DataRandomization,  // COMET on uniformly shuffled labels
};

std::string to_string(Variant v);
/// Accepts COMET, TD, NO_DETECTOR, FP, DR.
Variant parse_variant(std::string_view name);
bool needs_detector(Variant v);

struct TrainConfig {
  double a = 5.0;
  double b = 100.0;
  double t = 0.1;
  double lr = 5e-4;
  double lr_pretrain = 2e-3;  // full-image training (detector, FP predictor, probe)
  int epochs_pretrain = 30;
  int epochs_joint = 30;
  int batch_size = 32;
  int patience = 10;  // early stopping on validation accuracy; 0 disables
  std::uint64_t seed = 0;
  Variant variant = Variant::Comet;

  std::vector<Index> classifier_widths{8, 16, 32};
  Index classifier_hidden = 64;
  std::array<Index, 3> selector_widths{8, 16, 16};

  void validate() const;
  ClassifierSpec classifier_spec(const Dataset& data) const;
  SelectorSpec selector_spec(const Dataset& data) const;
};

struct EpochRecord {
  int epoch = 0;
  double l_p = 0.0;
  double l_d_out = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double mean_mask = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// Header `epoch,l_p,l_d_out,reg,total,train_acc,val_acc,mean_mask`.
  void write_csv(std::ostream& os) const;
  static TrainLog read_csv(std::istream& is);
};

/// Plain cross-entropy training on full images, early-stopped on validation
/// accuracy. Returns the trained network with gradients disabled.
ClassifierNet train_classifier(const Dataset& data, const TrainConfig& config, std::uint64_t init_seed,
                               TrainLog* log = nullptr);

/// Detector pre-training on full images; the result is frozen.
ClassifierNet pretrain_detector(const Dataset& data, const TrainConfig& config, TrainLog* log = nullptr);

struct JointResult {
  SelectorNet selector;
  ClassifierNet predictor;
  /// The detector the run ended with (frozen input for COMET, updated copy for
  /// TD, internally pre-trained one for DR). Empty for NO_DETECTOR and FP.
  std::optional<ClassifierNet> detector;
  /// FP only: the full-image predictor before the joint phase.
  std::optional<ClassifierNet> pretrained_predictor;
  TrainLog log;
};

/// Joint selector/predictor training for `config.variant`. `detector` is
/// required for COMET and TD and ignored otherwise.
JointResult train_joint(const Dataset& data, const TrainConfig& config, const ClassifierNet* detector);

/// Cross-entropy table for the foreground/background interlocking probe.
/// Index [input][fit] with 0 = foreground, 1 = background.
struct InterlockingTable {
  std::array<std::array<double, 2>, 2> loss{};
  std::array<std::array<double, 2>, 2> accuracy{};

  bool diagonal_dominant() const;
  bool foreground_minimum() const;
};

/// Trains one predictor on foreground-only composites and one on
/// background-only composites (the other region filled with q) and evaluates
/// both on held-out composites of each kind.
InterlockingTable interlocking_probe(const Dataset& data, const TrainConfig& config);

/// Mean cross-entropy of `classifier` over explicit images.
double mean_cross_entropy(const ClassifierNet& classifier, const Dataset& data, std::span<const Image> images,
                          std::span<const int> labels);

}  // namespace comet
