#include "comet/trainer.hpp"

#include "comet/errors.hpp"
#include "comet/losses.hpp"
#include "comet/metrics.hpp"
#include "comet/ops.hpp"
#include "comet/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace comet {

namespace {

// Seed streams; fixed so that runs are reproducible.
constexpr std::uint64_t kDetectorInit = 1;
constexpr std::uint64_t kPredictorInit = 2;
constexpr std::uint64_t kSelectorInit = 3;
constexpr std::uint64_t kLabelShuffle = 4;
constexpr std::uint64_t kProbeForeground = 5;
constexpr std::uint64_t kProbeBackground = 6;
constexpr std::uint64_t kBatchOrder = 1000;

void require_finite(double v, const std::string& what, int epoch) {
  if (!std::isfinite(v))
    throw NumericalError("non-finite " + what + " (" + std::to_string(v) + ") at epoch " + std::to_string(epoch));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> idx, int batch, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch))
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + static_cast<std::size_t>(batch))));
  return out;
}

struct EarlyStop {
  int patience;
  double best = -1.0;
  int since = 0;

  // Returns true when training should stop.
  bool update(double val_acc) {
    if (patience <= 0) return false;
    if (val_acc > best) {
      best = val_acc;
      since = 0;
      return false;
    }
    return ++since >= patience;
  }
};

void require_classes(const Dataset& data) {
  if (data.classes < 2) throw ConfigError("dataset must have at least 2 classes");
  if (data.indices(Split::Train).empty()) throw ConfigError("dataset has no training samples");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Comet: return "COMET";
    case Variant::TrainableDetector: return "TD";
    case Variant::NoDetector: return "NO_DETECTOR";
    case Variant::FixedPredictor: return "FP";
    case Variant::DataRandomization: return "DR";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "COMET") return Variant::Comet;
  if (name == "TD") return Variant::TrainableDetector;
  if (name == "NO_DETECTOR") return Variant::NoDetector;
  if (name == "FP") return Variant::FixedPredictor;
  if (name == "DR") return Variant::DataRandomization;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

bool needs_detector(Variant v) { return v == Variant::Comet || v == Variant::TrainableDetector; }

void TrainConfig::validate() const {
  if (a < 0.0 || b < 0.0) throw ConfigError("a and b must be non-negative");
  if (t < 0.0 || t > 1.0) throw ConfigError("t must lie in [0,1]");
  if (!(lr > 0.0) || !(lr_pretrain > 0.0)) throw ConfigError("learning rates must be positive");
  if (epochs_pretrain < 0 || epochs_joint < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
}

ClassifierSpec TrainConfig::classifier_spec(const Dataset& data) const {
  ClassifierSpec s;
  s.channels = data.channels;
  s.height = data.height;
  s.width = data.width;
  s.conv_widths = classifier_widths;
  s.hidden = classifier_hidden;
  s.classes = data.classes;
  s.input_mean = data.q;
  s.input_std = train_std(data, data.q);
  return s;
}

SelectorSpec TrainConfig::selector_spec(const Dataset& data) const {
  SelectorSpec s;
  s.channels = data.channels;
  s.height = data.height;
  s.width = data.width;
  s.widths = selector_widths;
  s.initial_mask = std::clamp(t, 0.01, 0.5);
  s.input_mean = data.q;
  s.input_std = train_std(data, data.q);
  return s;
}

void TrainLog::write_csv(std::ostream& os) const {
  os << "epoch,l_p,l_d_out,reg,total,train_acc,val_acc,mean_mask\n";
  for (const auto& e : epochs)
    os << e.epoch << ',' << format_double(e.l_p) << ',' << format_double(e.l_d_out) << ',' << format_double(e.reg)
       << ',' << format_double(e.total) << ',' << format_double(e.train_acc) << ',' << format_double(e.val_acc)
       << ',' << format_double(e.mean_mask) << '\n';
}

TrainLog TrainLog::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "epoch,l_p,l_d_out,reg,total,train_acc,val_acc,mean_mask")
    throw FormatError("train log header mismatch");
  TrainLog log;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      double d = 0.0;
      if (std::from_chars(cell.data(), cell.data() + cell.size(), d).ec != std::errc{})
        throw FormatError("bad number in train log: " + line);
      v.push_back(d);
    }
    if (v.size() != 8) throw FormatError("bad train log row: " + line);
    log.epochs.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return log;
}

ClassifierNet train_classifier(const Dataset& data, const TrainConfig& config, std::uint64_t init_seed,
                               TrainLog* log) {
  config.validate();
  require_classes(data);
  ClassifierNet net = ClassifierNet::create(config.classifier_spec(data), init_seed);
  const auto train = data.indices(Split::Train);
  const auto val = data.indices(Split::Val);
  Optimizer opt(config.lr_pretrain);
  EarlyStop stop{config.patience};
  for (int epoch = 0; epoch < config.epochs_pretrain; ++epoch) {
    double loss_sum = 0.0;
    std::size_t hits = 0, seen = 0;
    for (const auto& batch : epoch_batches(train, config.batch_size, derive_seed(init_seed, kBatchOrder + epoch))) {
      const auto y = labels_of(data, batch);
      net.params.zero_grad();
      const Tensor logits = net.forward(to_batch(data, batch));
      const Tensor loss = softmax_cross_entropy(logits, y);
      require_finite(loss.item(), "classifier loss", epoch);
      backward(loss);
      opt.step(net.params);
      loss_sum += loss.item() * static_cast<double>(batch.size());
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
      seen += batch.size();
    }
    const double val_acc = val.empty() ? 0.0 : accuracy(classifier_pipeline(net), data, val);
    if (log) {
      EpochRecord r;
      r.epoch = epoch + 1;
      r.l_p = loss_sum / static_cast<double>(seen);
      r.total = r.l_p;
      r.train_acc = static_cast<double>(hits) / static_cast<double>(seen);
      r.val_acc = val_acc;
      r.mean_mask = 1.0;
      log->epochs.push_back(r);
    }
    if (!val.empty() && stop.update(val_acc)) break;
  }
  net.params.set_requires_grad(false);
  net.params.zero_grad();
  return net;
}

ClassifierNet pretrain_detector(const Dataset& data, const TrainConfig& config, TrainLog* log) {
  return train_classifier(data, config, derive_seed(config.seed, kDetectorInit), log);
}

JointResult train_joint(const Dataset& input, const TrainConfig& config, const ClassifierNet* detector) {
  config.validate();
  require_classes(input);
  const Variant variant = config.variant;
  if (needs_detector(variant) && !detector)
    throw ConfigError("variant " + to_string(variant) + " requires a pre-trained detector");

  const Dataset* data = &input;
  Dataset shuffled;
  JointResult result{SelectorNet::create(config.selector_spec(input), derive_seed(config.seed, kSelectorInit)),
                     ClassifierNet::create(config.classifier_spec(input), derive_seed(config.seed, kPredictorInit)),
                     std::nullopt, std::nullopt, {}};

  double a = config.a;
  bool train_predictor = true;
  bool train_detector = false;
  switch (variant) {
    case Variant::Comet:
      result.detector = detector->clone();
      break;
    case Variant::TrainableDetector:
      result.detector = detector->clone();
      train_detector = true;
      break;
    case Variant::NoDetector:
      a = 0.0;
      break;
    case Variant::FixedPredictor:
      a = 0.0;
      train_predictor = false;
      result.predictor = train_classifier(input, config, derive_seed(config.seed, kPredictorInit));
      result.pretrained_predictor = result.predictor.clone();
      break;
    case Variant::DataRandomization:
      shuffled = synth::permute_labels(input, derive_seed(config.seed, kLabelShuffle));
      data = &shuffled;
      result.detector = pretrain_detector(shuffled, config);
      break;
  }
  const bool use_detector = result.detector.has_value() && a > 0.0;
  if (result.detector) result.detector->params.set_requires_grad(false);
  result.predictor.params.set_requires_grad(train_predictor);

  SelectorNet& selector = result.selector;
  ClassifierNet& predictor = result.predictor;
  Optimizer opt_selector(config.lr), opt_predictor(config.lr), opt_detector(config.lr);
  const auto train = data->indices(Split::Train);
  const auto val = data->indices(Split::Val);
  EarlyStop stop{config.patience};

  for (int epoch = 0; epoch < config.epochs_joint; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t hits = 0, seen = 0;
    double mask_sum = 0.0;
    for (const auto& batch :
         epoch_batches(train, config.batch_size, derive_seed(config.seed, kBatchOrder + epoch))) {
      const auto y = labels_of(*data, batch);
      const Tensor x = to_batch(*data, batch);
      selector.params.zero_grad();
      predictor.params.zero_grad();

      const Tensor map = selector.forward(x);
      const MaskPair masks = make_masks(x, map, data->q);
      const Tensor logits = predictor.forward(masks.masked_in);
      const Tensor l_p = softmax_cross_entropy(logits, y);
      const Tensor l_d = use_detector ? detector_loss(*result.detector, masks.masked_out, y) : Tensor::scalar(0.0);
      const Tensor reg = sparsity_regularizer(map, config.t);
      const Tensor total = composite_loss(l_p, l_d, reg, a, config.b);
      require_finite(total.item(), "joint loss", epoch);
      backward(total);
      opt_selector.step(selector.params);
      if (train_predictor) opt_predictor.step(predictor.params);

      if (train_detector) {
        ModelParams& dp = result.detector->params;
        dp.set_requires_grad(true);
        dp.zero_grad();
        const Tensor l_det = detector_loss(*result.detector, masks.masked_out.detach(), y);
        require_finite(l_det.item(), "detector loss", epoch);
        backward(l_det);
        opt_detector.step(dp);
        dp.set_requires_grad(false);
        dp.zero_grad();
      }

      const double n = static_cast<double>(batch.size());
      const LossBreakdown parts = selector_loss(l_p.item(), use_detector ? l_d.item() : 0.0, reg.item(), a, config.b,
                                                config.t);
      rec.l_p += parts.l_p * n;
      rec.l_d_out += parts.l_d_out * n;
      rec.reg += parts.reg * n;
      rec.total += parts.total * n;
      mask_sum += map.values().sum() / static_cast<double>(data->pixels());
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
      seen += batch.size();
    }
    const double n = static_cast<double>(seen);
    rec.l_p /= n;
    rec.l_d_out /= n;
    rec.reg /= n;
    rec.total /= n;
    rec.train_acc = static_cast<double>(hits) / n;
    rec.mean_mask = mask_sum / n;
    rec.val_acc = val.empty() ? 0.0 : accuracy(comet_pipeline(selector, predictor, data->q), *data, val);
    result.log.epochs.push_back(rec);
    if (!val.empty() && stop.update(rec.val_acc)) break;
  }
  selector.params.set_requires_grad(false);
  selector.params.zero_grad();
  predictor.params.set_requires_grad(false);
  predictor.params.zero_grad();
  return result;
}

bool InterlockingTable::diagonal_dominant() const {
  const double diag_max = std::max(loss[0][0], loss[1][1]);
  const double off_min = std::min(loss[0][1], loss[1][0]);
  return diag_max < off_min;
}

bool InterlockingTable::foreground_minimum() const {
  return loss[0][0] < loss[0][1] && loss[0][0] < loss[1][0] && loss[0][0] < loss[1][1];
}

double mean_cross_entropy(const ClassifierNet& classifier, const Dataset& data, std::span<const Image> images,
                          std::span<const int> labels) {
  NoGradGuard no_grad;
  if (images.size() != labels.size() || images.empty()) throw DimensionError("images/labels mismatch");
  const Index per = data.channels * data.height * data.width;
  double total = 0.0;
  constexpr std::size_t batch = 64;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t n = std::min(batch, images.size() - start);
    Array v(static_cast<Index>(n) * per);
    for (std::size_t k = 0; k < n; ++k) v.segment(static_cast<Index>(k) * per, per) = images[start + k].cast<double>();
    const Tensor x({static_cast<Index>(n), data.channels, data.height, data.width}, std::move(v));
    total += softmax_cross_entropy(classifier.forward(x), labels.subspan(start, n)).item() * static_cast<double>(n);
  }
  return total / static_cast<double>(images.size());
}

InterlockingTable interlocking_probe(const Dataset& data, const TrainConfig& config) {
  require_classes(data);
  Dataset fg = data, bg = data;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    fg.samples[i].image = synth::composite_fill(data.samples[i], data.channels, data.q, true);
    bg.samples[i].image = synth::composite_fill(data.samples[i], data.channels, data.q, false);
  }
  const std::array<ClassifierNet, 2> fitted{
      train_classifier(fg, config, derive_seed(config.seed, kProbeForeground)),
      train_classifier(bg, config, derive_seed(config.seed, kProbeBackground))};
  const auto test = data.indices(Split::Test);
  if (test.empty()) throw ConfigError("interlocking probe needs a test split");
  const auto labels = labels_of(data, test);
  std::array<std::vector<Image>, 2> inputs;
  for (std::size_t i : test) {
    inputs[0].push_back(fg.samples[i].image);
    inputs[1].push_back(bg.samples[i].image);
  }
  InterlockingTable table;
  for (std::size_t in = 0; in < 2; ++in)
    for (std::size_t fit = 0; fit < 2; ++fit) {
      table.loss[in][fit] = mean_cross_entropy(fitted[fit], data, inputs[in], labels);
      const auto pred = predict_images(classifier_pipeline(fitted[fit]), data, inputs[in]);
      table.accuracy[in][fit] = accuracy_of(pred, labels);
    }
  return table;
}

}  // namespace comet
