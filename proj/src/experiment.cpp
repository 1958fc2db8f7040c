#include "comet/experiment.hpp"

#include "comet/errors.hpp"
#include "comet/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace comet {

namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("bad value '" + s + "' for key '" + std::string(key) + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  std::string s(text);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("empty list for key '" + std::string(key) + "'");
  return out;
}

template <class T>
std::string join(const T& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
      out += format_double(v);
    else
      out += std::to_string(v);
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string dataset_name(const ExperimentConfig& c) {
  return c.generator == "dual" && c.labels == "scene" ? "dual-scene" : c.generator;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
}

void write_log(const fs::path& path, const TrainLog& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  log.write_csv(os);
}

void export_maps(const SelectorNet& selector, const Dataset& data, const ExperimentConfig& config,
                 const Layout& layout, const std::string& tag) {
  auto idx = data.indices(Split::Test);
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(std::max(config.export_maps, 0))));
  if (idx.empty()) return;
  const auto maps = attribution_maps(selector, data, idx);
  for (std::size_t i = 0; i < maps.size(); ++i) write_pgm(layout.map(tag, i), maps[i]);
}

Dataset load_or_generate(const ExperimentConfig& config, const Layout& layout, std::ostream& out) {
  if (!fs::exists(layout.dataset())) {
    out << "dataset missing, generating " << layout.dataset().string() << "\n";
    save_dataset(layout.dataset(), generate_dataset(config));
  }
  return dataset_view(load_dataset(layout.dataset()), config);
}

Dataset load_existing(const Layout& layout, const ExperimentConfig& config) {
  if (!fs::exists(layout.dataset()))
    throw ConfigError("dataset file " + layout.dataset().string() + " not found; run gen-data first");
  return dataset_view(load_dataset(layout.dataset()), config);
}

void check_shapes(const ModelParams& expected, const ModelParams& loaded, const fs::path& path) {
  if (expected.size() != loaded.size())
    throw DimensionError(path.string() + ": expected " + std::to_string(expected.size()) + " arrays, found " +
                         std::to_string(loaded.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected.begin()[static_cast<std::ptrdiff_t>(i)];
    const auto& l = loaded.begin()[static_cast<std::ptrdiff_t>(i)];
    if (e.name != l.name || e.tensor.shape() != l.tensor.shape())
      throw DimensionError(path.string() + ": array '" + l.name + "' " + shape_str(l.tensor.shape()) +
                           " does not match '" + e.name + "' " + shape_str(e.tensor.shape()));
  }
}

const FidelityPoint* fidelity_at(const MetricReport& r, double k) {
  for (const auto& f : r.fidelity)
    if (f.k_percent == k) return &f;
  return nullptr;
}

constexpr std::uint64_t kNoiseStream = 7;
constexpr std::uint64_t kSwapStream = 8;

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k{
      "generator",      "data_seed",      "n_per_class", "classes",          "bg_correlation",
      "object_classes", "scene_classes",  "labels",      "out_dir",          "variant",
      "seed",           "seeds",          "a",           "b",                "t",
      "lr",             "lr_pretrain",    "epochs_pretrain", "epochs_joint", "batch_size",     "patience",
      "classifier_widths", "classifier_hidden", "selector_widths", "thresholds", "pxap_mode",
      "export_maps",    "noise_fraction", "fidelity_ks"};
  return k;
}

void ExperimentConfig::set(std::string_view key, std::string_view raw) {
  const std::string v = trim(raw);
  if (key == "generator") generator = v;
  else if (key == "data_seed") data_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "n_per_class") n_per_class = parse_number<int>(key, v);
  else if (key == "classes") classes = parse_number<int>(key, v);
  else if (key == "bg_correlation") bg_correlation = parse_number<double>(key, v);
  else if (key == "object_classes") object_classes = parse_number<int>(key, v);
  else if (key == "scene_classes") scene_classes = parse_number<int>(key, v);
  else if (key == "labels") labels = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "variant") train.variant = parse_variant(v);
  else if (key == "seed") train.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "seeds") seeds = parse_list<std::uint64_t>(key, v);
  else if (key == "a") train.a = parse_number<double>(key, v);
  else if (key == "b") train.b = parse_number<double>(key, v);
  else if (key == "t") train.t = parse_number<double>(key, v);
  else if (key == "lr") train.lr = parse_number<double>(key, v);
  else if (key == "lr_pretrain") train.lr_pretrain = parse_number<double>(key, v);
  else if (key == "epochs_pretrain") train.epochs_pretrain = parse_number<int>(key, v);
  else if (key == "epochs_joint") train.epochs_joint = parse_number<int>(key, v);
  else if (key == "batch_size") train.batch_size = parse_number<int>(key, v);
  else if (key == "patience") train.patience = parse_number<int>(key, v);
  else if (key == "classifier_widths") train.classifier_widths = parse_list<Index>(key, v);
  else if (key == "classifier_hidden") train.classifier_hidden = parse_number<Index>(key, v);
  else if (key == "selector_widths") {
    const auto w = parse_list<Index>(key, v);
    if (w.size() != 3) throw ConfigError("selector_widths needs exactly 3 values");
    std::copy(w.begin(), w.end(), train.selector_widths.begin());
  } else if (key == "thresholds") thresholds = parse_number<int>(key, v);
  else if (key == "pxap_mode") {
    if (v == "pooled") pxap_mode = PxapMode::Pooled;
    else if (v == "per_image") pxap_mode = PxapMode::PerImage;
    else throw ConfigError("pxap_mode must be pooled or per_image");
  } else if (key == "export_maps") export_maps = parse_number<int>(key, v);
  else if (key == "noise_fraction") noise_fraction = parse_number<double>(key, v);
  else if (key == "fidelity_ks") fidelity_ks = parse_list<double>(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string ExperimentConfig::get(std::string_view key) const {
  if (key == "generator") return generator;
  if (key == "data_seed") return std::to_string(data_seed);
  if (key == "n_per_class") return std::to_string(n_per_class);
  if (key == "classes") return std::to_string(classes);
  if (key == "bg_correlation") return format_double(bg_correlation);
  if (key == "object_classes") return std::to_string(object_classes);
  if (key == "scene_classes") return std::to_string(scene_classes);
  if (key == "labels") return labels;
  if (key == "out_dir") return out_dir.string();
  if (key == "variant") return to_string(train.variant);
  if (key == "seed") return std::to_string(train.seed);
  if (key == "seeds") return join(seeds);
  if (key == "a") return format_double(train.a);
  if (key == "b") return format_double(train.b);
  if (key == "t") return format_double(train.t);
  if (key == "lr") return format_double(train.lr);
  if (key == "lr_pretrain") return format_double(train.lr_pretrain);
  if (key == "epochs_pretrain") return std::to_string(train.epochs_pretrain);
  if (key == "epochs_joint") return std::to_string(train.epochs_joint);
  if (key == "batch_size") return std::to_string(train.batch_size);
  if (key == "patience") return std::to_string(train.patience);
  if (key == "classifier_widths") return join(train.classifier_widths);
  if (key == "classifier_hidden") return std::to_string(train.classifier_hidden);
  if (key == "selector_widths") return join(train.selector_widths);
  if (key == "thresholds") return std::to_string(thresholds);
  if (key == "pxap_mode") return pxap_mode == PxapMode::Pooled ? "pooled" : "per_image";
  if (key == "export_maps") return std::to_string(export_maps);
  if (key == "noise_fraction") return format_double(noise_fraction);
  if (key == "fidelity_ks") return join(fidelity_ks);
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::read(std::istream& is) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
  }
}

void ExperimentConfig::read_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  read(is);
}

std::string ExperimentConfig::echo() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (generator != "flower" && generator != "fgbg" && generator != "dual")
    throw ConfigError("generator must be flower, fgbg or dual, got '" + generator + "'");
  if (labels != "object" && labels != "scene") throw ConfigError("labels must be object or scene");
  if (labels == "scene" && generator != "dual") throw ConfigError("labels = scene needs the dual generator");
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  if (classes < 2 || object_classes < 2 || scene_classes < 2) throw ConfigError("class counts must be >= 2");
  if (bg_correlation < 0.0 || bg_correlation > 1.0) throw ConfigError("bg_correlation must lie in [0,1]");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (thresholds < 1) throw ConfigError("thresholds must be >= 1");
  if (noise_fraction < 0.0 || noise_fraction > 1.0) throw ConfigError("noise_fraction must lie in [0,1]");
  for (double k : fidelity_ks)
    if (k < 0.0 || k > 100.0) throw ConfigError("fidelity_ks must lie in [0,100]");
}

fs::path Layout::checkpoint(std::string_view tag, std::string_view part) const {
  return root / "checkpoints" / (std::string(tag) + "_" + std::string(part) + ".cmtp");
}
fs::path Layout::log(std::string_view tag) const { return root / "logs" / (std::string(tag) + ".csv"); }
fs::path Layout::report(std::string_view name) const { return root / "reports" / (std::string(name) + ".csv"); }
fs::path Layout::map(std::string_view tag, std::size_t i) const {
  return root / "maps" / (std::string(tag) + "_" + std::to_string(i) + ".pgm");
}

void Layout::create() const {
  for (const char* sub : {"dataset", "checkpoints", "logs", "reports", "maps"}) fs::create_directories(root / sub);
}

std::string run_tag(Variant variant, std::uint64_t seed) {
  return lower(to_string(variant)) + "_s" + std::to_string(seed);
}

void retain_heap() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

Dataset generate_dataset(const ExperimentConfig& c) {
  if (c.generator == "flower") return synth::gen_flower(c.data_seed, c.n_per_class);
  if (c.generator == "fgbg") return synth::gen_fgbg(c.data_seed, c.n_per_class, c.classes, c.bg_correlation);
  if (c.generator == "dual") return synth::gen_dual_label(c.data_seed, c.n_per_class, c.object_classes, c.scene_classes);
  throw ConfigError("unknown generator '" + c.generator + "'");
}

Dataset dataset_view(const Dataset& data, const ExperimentConfig& config) {
  if (config.labels != "scene") return data;
  if (data.scene_classes < 2) throw ConfigError("labels = scene but the dataset has no scene labels");
  return synth::scene_view(data);
}

ClassifierNet load_classifier(const fs::path& path, const ExperimentConfig& config, const Dataset& data) {
  ClassifierNet net = ClassifierNet::create(config.train.classifier_spec(data), 0);
  ModelParams loaded = load_checkpoint(path);
  check_shapes(net.params, loaded, path);
  loaded.set_requires_grad(false);
  net.params = std::move(loaded);
  return net;
}

SelectorNet load_selector(const fs::path& path, const ExperimentConfig& config, const Dataset& data) {
  SelectorNet net = SelectorNet::create(config.train.selector_spec(data), 0);
  ModelParams loaded = load_checkpoint(path);
  check_shapes(net.params, loaded, path);
  loaded.set_requires_grad(false);
  net.params = std::move(loaded);
  return net;
}

MetricReport evaluate_model(const SelectorNet& selector, const ClassifierNet& predictor, const Dataset& data,
                            const ExperimentConfig& config, Variant variant, std::uint64_t seed) {
  const auto idx = data.indices(Split::Test);
  if (idx.empty()) throw ConfigError("dataset has no test split");
  MetricReport r;
  r.variant = to_string(variant);
  r.dataset = dataset_name(config);
  r.seed = seed;
  const auto maps = attribution_maps(selector, data, idx);
  const auto gts = gt_masks(data, idx);
  const Pipeline pipeline = comet_pipeline(selector, predictor, data.q);
  r.accuracy = accuracy(pipeline, data, idx);
  r.pxap = pxap(maps, gts, config.thresholds, config.pxap_mode);
  r.iou_auc = iou_auc(maps, gts, config.thresholds);
  r.fidelity = fidelity_curve(pipeline, data, idx, maps, config.fidelity_ks, {TieBreak::RowMajor, seed});
  r.robust_noise = robustness_eval(selector, data, idx, RobustnessMode::Noise, derive_seed(seed, kNoiseStream),
                                   config.noise_fraction, config.thresholds);
  r.robust_bgswap = robustness_eval(selector, data, idx, RobustnessMode::BackgroundSwap,
                                    derive_seed(seed, kSwapStream), config.noise_fraction, config.thresholds);
  return r;
}

MetricReport evaluate_gradient_baseline(const ClassifierNet& classifier, const Dataset& data,
                                        const ExperimentConfig& config, std::uint64_t seed) {
  const auto idx = data.indices(Split::Test);
  if (idx.empty()) throw ConfigError("dataset has no test split");
  MetricReport r;
  r.variant = "GRAD_FP";
  r.dataset = dataset_name(config);
  r.seed = seed;
  const auto maps = gradient_saliency_maps(classifier, data, idx);
  const auto gts = gt_masks(data, idx);
  const Pipeline pipeline = classifier_pipeline(classifier);
  r.accuracy = accuracy(pipeline, data, idx);
  r.pxap = pxap(maps, gts, config.thresholds, config.pxap_mode);
  r.iou_auc = iou_auc(maps, gts, config.thresholds);
  r.fidelity = fidelity_curve(pipeline, data, idx, maps, config.fidelity_ks, {TieBreak::RowMajor, seed});
  return r;
}

const VariantRun* SeedOutcome::find(Variant v) const {
  for (const auto& r : runs)
    if (r.variant == v) return &r;
  return nullptr;
}

SeedOutcome run_seed(const Dataset& data, const ExperimentConfig& config, std::uint64_t seed,
                     std::span<const Variant> variants) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  SeedOutcome out{seed, pretrain_detector(data, tc), 0.0, {}, std::nullopt};
  out.plain_accuracy = accuracy(classifier_pipeline(out.detector), data, data.indices(Split::Test));
  for (Variant v : variants) {
    tc.variant = v;
    JointResult r = train_joint(data, tc, &out.detector);
    MetricReport report = evaluate_model(r.selector, r.predictor, data, config, v, seed);
    if (v == Variant::FixedPredictor)
      out.gradient_baseline = evaluate_gradient_baseline(*r.pretrained_predictor, data, config, seed);
    out.runs.push_back({v, std::move(r), std::move(report)});
  }
  return out;
}

std::vector<OrderingCheck> ordering_checks(std::span<const SeedOutcome> outcomes, const ExperimentConfig& config) {
  const int n = static_cast<int>(outcomes.size());
  const int most = (4 * n + 4) / 5;  // ceil(0.8 n)
  std::vector<OrderingCheck> checks;
  auto tally = [&](std::string name, bool every_seed, auto&& holds) {
    OrderingCheck c{std::move(name), 0, every_seed ? n : most, 0};
    for (const auto& o : outcomes) {
      const std::optional<bool> h = holds(o);
      if (!h) return;  // variant missing from this run
      ++c.total;
      c.passed += *h;
    }
    checks.push_back(c);
  };
  using Opt = std::optional<bool>;

  tally("pxap COMET > NO_DETECTOR", false, [](const SeedOutcome& o) -> Opt {
    const auto *c = o.find(Variant::Comet), *d = o.find(Variant::NoDetector);
    if (!c || !d) return std::nullopt;
    return c->report.pxap > d->report.pxap;
  });
  tally("pxap COMET > gradient saliency on FP predictor", false, [](const SeedOutcome& o) -> Opt {
    const auto* c = o.find(Variant::Comet);
    if (!c || !o.gradient_baseline) return std::nullopt;
    return c->report.pxap > o.gradient_baseline->pxap;
  });
  tally("iou_auc COMET >= 2 x DR", true, [](const SeedOutcome& o) -> Opt {
    const auto *c = o.find(Variant::Comet), *d = o.find(Variant::DataRandomization);
    if (!c || !d) return std::nullopt;
    return c->report.iou_auc >= 2.0 * d->report.iou_auc;
  });
  tally("fidelity k=20 COMET < gradient saliency", false, [](const SeedOutcome& o) -> Opt {
    const auto* c = o.find(Variant::Comet);
    if (!c || !o.gradient_baseline) return std::nullopt;
    const auto *a = fidelity_at(c->report, 20.0), *b = fidelity_at(*o.gradient_baseline, 20.0);
    if (!a || !b) return std::nullopt;
    return a->accuracy < b->accuracy;
  });
  tally("fidelity COMET acc(20%) <= acc(5%)", false, [](const SeedOutcome& o) -> Opt {
    const auto* c = o.find(Variant::Comet);
    if (!c) return std::nullopt;
    const auto *a = fidelity_at(c->report, 20.0), *b = fidelity_at(c->report, 5.0);
    if (!a || !b) return std::nullopt;
    return a->accuracy <= b->accuracy;
  });
  const double t = config.train.t;
  tally("COMET mean mask <= t + 0.05", true, [t](const SeedOutcome& o) -> Opt {
    const auto* c = o.find(Variant::Comet);
    if (!c || c->result.log.epochs.empty()) return std::nullopt;
    return c->result.log.epochs.back().mean_mask <= t + 0.05;
  });
  tally("COMET robust pxap >= 0.8 x clean", false, [](const SeedOutcome& o) -> Opt {
    const auto* c = o.find(Variant::Comet);
    if (!c) return std::nullopt;
    return c->report.robust_noise >= 0.8 * c->report.pxap;
  });
  tally("robust pxap COMET > NO_DETECTOR", false, [](const SeedOutcome& o) -> Opt {
    const auto *c = o.find(Variant::Comet), *d = o.find(Variant::NoDetector);
    if (!c || !d) return std::nullopt;
    return c->report.robust_noise > d->report.robust_noise;
  });

  // Accuracy is compared on the seed average.
  double comet_acc = 0.0, plain_acc = 0.0;
  int seen = 0;
  for (const auto& o : outcomes)
    if (const auto* c = o.find(Variant::Comet)) {
      comet_acc += c->report.accuracy;
      plain_acc += o.plain_accuracy;
      ++seen;
    }
  if (seen > 0 && seen == n)
    checks.push_back({"mean accuracy COMET >= plain classifier - 0.02",
                      comet_acc / seen >= plain_acc / seen - 0.02 ? 1 : 0, 1, 1});
  return checks;
}

int cmd_gen_data(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const Layout layout{config.out_dir};
  layout.create();
  write_text(layout.config_echo(), config.echo());
  const Dataset data = generate_dataset(config);
  save_dataset(layout.dataset(), data);
  out << "wrote " << layout.dataset().string() << "\n"
      << "classes " << data.classes << "\n"
      << "train " << data.indices(Split::Train).size() << " val " << data.indices(Split::Val).size() << " test "
      << data.indices(Split::Test).size() << "\n"
      << "q " << join(data.q) << "\n";
  return kExitOk;
}

int cmd_pretrain(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const Layout layout{config.out_dir};
  layout.create();
  write_text(layout.config_echo(), config.echo());
  const Dataset data = load_existing(layout, config);
  TrainLog log;
  const ClassifierNet det = pretrain_detector(data, config.train, &log);
  const std::string tag = "pretrained_s" + std::to_string(config.train.seed);
  save_checkpoint(layout.checkpoint(tag, "detector"), det.params);
  write_log(layout.log(tag), log);
  out << "detector val accuracy "
      << format_double(accuracy(classifier_pipeline(det), data, data.indices(Split::Val))) << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const Layout layout{config.out_dir};
  layout.create();
  write_text(layout.config_echo(), config.echo());
  const Dataset data = load_existing(layout, config);
  const TrainConfig& tc = config.train;
  std::optional<ClassifierNet> detector;
  if (needs_detector(tc.variant)) {
    const std::string tag = "pretrained_s" + std::to_string(tc.seed);
    const fs::path path = layout.checkpoint(tag, "detector");
    if (fs::exists(path)) {
      detector = load_classifier(path, config, data);
    } else {
      TrainLog log;
      detector = pretrain_detector(data, tc, &log);
      save_checkpoint(path, detector->params);
      write_log(layout.log(tag), log);
    }
  }
  const JointResult r = train_joint(data, tc, detector ? &*detector : nullptr);
  const std::string tag = run_tag(tc.variant, tc.seed);
  save_checkpoint(layout.checkpoint(tag, "selector"), r.selector.params);
  save_checkpoint(layout.checkpoint(tag, "predictor"), r.predictor.params);
  if (r.detector) save_checkpoint(layout.checkpoint(tag, "detector"), r.detector->params);
  write_log(layout.log(tag), r.log);
  const auto& last = r.log.epochs.back();
  out << tag << ": " << r.log.epochs.size() << " epochs, val_acc " << format_double(last.val_acc) << ", mean_mask "
      << format_double(last.mean_mask) << "\n";
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const Layout layout{config.out_dir};
  layout.create();
  const Dataset data = load_existing(layout, config);
  const std::string tag = run_tag(config.train.variant, config.train.seed);
  const SelectorNet selector = load_selector(layout.checkpoint(tag, "selector"), config, data);
  const ClassifierNet predictor = load_classifier(layout.checkpoint(tag, "predictor"), config, data);
  const MetricReport report = evaluate_model(selector, predictor, data, config, config.train.variant, config.train.seed);
  const auto rows = report.rows();
  write_report_csv(layout.report(tag), rows);
  export_maps(selector, data, config, layout, tag);
  write_report_csv(out, rows);
  return kExitOk;
}

int cmd_ablate(const ExperimentConfig& config, std::ostream& out) {
  config.validate();
  const Layout layout{config.out_dir};
  layout.create();
  write_text(layout.config_echo(), config.echo());
  const Dataset data = load_or_generate(config, layout, out);
  const std::vector<Variant> variants{Variant::Comet, Variant::TrainableDetector, Variant::NoDetector,
                                      Variant::FixedPredictor, Variant::DataRandomization};
  std::vector<SeedOutcome> outcomes;
  std::vector<ReportRow> rows, baseline_rows;
  for (std::uint64_t seed : config.seeds) {
    out << "seed " << seed << "\n" << std::flush;
    SeedOutcome o = run_seed(data, config, seed, variants);
    for (const auto& run : o.runs) {
      const std::string tag = run_tag(run.variant, seed);
      save_checkpoint(layout.checkpoint(tag, "selector"), run.result.selector.params);
      save_checkpoint(layout.checkpoint(tag, "predictor"), run.result.predictor.params);
      if (run.result.detector) save_checkpoint(layout.checkpoint(tag, "detector"), run.result.detector->params);
      write_log(layout.log(tag), run.result.log);
      export_maps(run.result.selector, data, config, layout, tag);
      for (auto& r : run.report.rows()) rows.push_back(std::move(r));
    }
    baseline_rows.push_back({"accuracy", "PLAIN", dataset_name(config), o.plain_accuracy, seed});
    if (o.gradient_baseline) {
      for (auto& r : o.gradient_baseline->rows())
        if (r.metric.rfind("robust", 0) != 0) baseline_rows.push_back(std::move(r));
    }
    outcomes.push_back(std::move(o));
  }
  write_report_csv(layout.report("ablate"), rows);
  write_report_csv(layout.report("baselines"), baseline_rows);

  std::vector<OrderingCheck> checks = ordering_checks(outcomes, config);
  if (config.generator == "fgbg") {
    std::ostringstream table;
    table << "seed,input,fit,loss,accuracy\n";
    OrderingCheck c{"interlocking: diagonal < off-diagonal and F/F minimal", 0,
                    (4 * static_cast<int>(config.seeds.size()) + 4) / 5, 0};
    const char* names[2] = {"F", "B"};
    for (std::uint64_t seed : config.seeds) {
      TrainConfig tc = config.train;
      tc.seed = seed;
      const InterlockingTable t = interlocking_probe(data, tc);
      for (int i = 0; i < 2; ++i)
        for (int f = 0; f < 2; ++f)
          table << seed << ',' << names[i] << ',' << names[f] << ',' << format_double(t.loss[i][f]) << ','
                << format_double(t.accuracy[i][f]) << '\n';
      ++c.total;
      c.passed += t.diagonal_dominant() && t.foreground_minimum();
    }
    write_text(layout.report("interlocking"), table.str());
    checks.push_back(c);
  }

  std::ostringstream summary;
  bool all_ok = true;
  for (const auto& c : checks) {
    summary << (c.ok() ? "ok   " : "FAIL ") << c.name << " (" << c.passed << "/" << c.total << ", need "
            << c.required << ")\n";
    all_ok = all_ok && c.ok();
  }
  write_text(layout.root / "reports" / "ordering.txt", summary.str());
  out << summary.str();
  return all_ok ? kExitOk : kExitOrdering;
}

int cmd_report(const ExperimentConfig& config, std::ostream& out) {
  const Layout layout{config.out_dir};
  const fs::path path = layout.report("ablate");
  if (!fs::exists(path)) throw ConfigError(path.string() + " not found; run ablate first");
  auto rows = read_report_csv(path);
  if (fs::exists(layout.report("baselines")))
    for (auto& r : read_report_csv(layout.report("baselines"))) rows.push_back(std::move(r));
  // (metric, variant) -> values, in first-seen order.
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.metric, r.variant);
    if (!values.count(key)) order.push_back(key);
    values[key].push_back(r.value);
  }
  out << "metric,variant,mean,std,n\n";
  for (const auto& key : order) {
    const auto& v = values[key];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    out << key.first << ',' << key.second << ',' << format_double(mean) << ',' << format_double(sd) << ','
        << v.size() << '\n';
  }
  const fs::path ordering = layout.root / "reports" / "ordering.txt";
  if (fs::exists(ordering)) {
    std::ifstream is(ordering);
    out << is.rdbuf();
  }
  return kExitOk;
}

}  // namespace comet
