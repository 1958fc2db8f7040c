#include "comet/metrics.hpp"

#include "comet/errors.hpp"
#include "comet/losses.hpp"
#include "comet/ops.hpp"
#include "comet/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace comet {

namespace {

void check_aligned(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds) {
  if (maps.size() != gts.size()) throw ContractError("maps and gt masks are not aligned");
  if (maps.empty()) throw ContractError("no maps to evaluate");
  if (n_thresholds < 1) throw ContractError("need at least one threshold");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].rows() != gts[i].rows() || maps[i].cols() != gts[i].cols())
      throw ContractError("map " + std::to_string(i) + " and its gt mask differ in shape");
    if (maps[i].size() && (maps[i].minCoeff() < 0.0 || maps[i].maxCoeff() > 1.0))
      throw ContractError("attribution map values must lie in [0,1]");
  }
}

// Index of the highest threshold k / n that v reaches.
int threshold_bin(double v, int n) {
  int k = std::clamp(static_cast<int>(std::floor(v * n)), 0, n);
  while (k < n && v >= static_cast<double>(k + 1) / n) ++k;
  while (k > 0 && v < static_cast<double>(k) / n) --k;
  return k;
}

struct BinCounts {
  std::vector<long long> all, pos;
  long long gt_total = 0;
};

void add_to_bins(const AttributionMap& map, const Mask& gt, int n, BinCounts& bins) {
  for (Index i = 0; i < map.size(); ++i) {
    const int b = threshold_bin(map.data()[i], n);
    ++bins.all[static_cast<std::size_t>(b)];
    if (gt.data()[i]) {
      ++bins.pos[static_cast<std::size_t>(b)];
      ++bins.gt_total;
    }
  }
}

std::vector<PrecisionRecallPoint> curve_from_bins(const BinCounts& bins, int n) {
  if (bins.gt_total == 0) throw ContractError("ground truth is empty: recall undefined");
  std::vector<PrecisionRecallPoint> out;
  long long sel = 0, tp = 0;
  for (int k = n; k >= 0; --k) {
    sel += bins.all[static_cast<std::size_t>(k)];
    tp += bins.pos[static_cast<std::size_t>(k)];
    PrecisionRecallPoint p;
    p.threshold = static_cast<double>(k) / n;
    p.precision = sel ? static_cast<double>(tp) / static_cast<double>(sel) : 1.0;
    p.recall = static_cast<double>(tp) / static_cast<double>(bins.gt_total);
    out.push_back(p);
  }
  return out;
}

double area(const std::vector<PrecisionRecallPoint>& curve) {
  double prev = 0.0, total = 0.0;
  for (const auto& p : curve) {
    total += (p.recall - prev) * p.precision;
    prev = p.recall;
  }
  return total;
}

BinCounts empty_bins(int n) {
  return {std::vector<long long>(static_cast<std::size_t>(n + 1), 0),
          std::vector<long long>(static_cast<std::size_t>(n + 1), 0), 0};
}

AttributionMap plane_of(const Tensor& maps, Index s) {
  const Index h = maps.dim(2), w = maps.dim(3);
  AttributionMap m(h, w);
  std::copy_n(maps.values().data() + s * h * w, h * w, m.data());
  return m;
}

Tensor batch_of_images(const Dataset& data, std::span<const Image> images) {
  const Index per = data.channels * data.height * data.width;
  Array v(static_cast<Index>(images.size()) * per);
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].size() != per) throw DimensionError("image size mismatch");
    v.segment(static_cast<Index>(k) * per, per) = images[k].cast<double>();
  }
  return Tensor({static_cast<Index>(images.size()), data.channels, data.height, data.width}, std::move(v));
}

std::vector<Image> images_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Image> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.samples.at(i).image);
  return out;
}

}  // namespace

std::vector<PrecisionRecallPoint> precision_recall_curve(std::span<const AttributionMap> maps,
                                                         std::span<const Mask> gts, int n_thresholds) {
  check_aligned(maps, gts, n_thresholds);
  BinCounts bins = empty_bins(n_thresholds);
  for (std::size_t i = 0; i < maps.size(); ++i) add_to_bins(maps[i], gts[i], n_thresholds, bins);
  return curve_from_bins(bins, n_thresholds);
}

double pxap(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds, PxapMode mode) {
  if (mode == PxapMode::Pooled) return area(precision_recall_curve(maps, gts, n_thresholds));
  check_aligned(maps, gts, n_thresholds);
  double total = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    BinCounts bins = empty_bins(n_thresholds);
    add_to_bins(maps[i], gts[i], n_thresholds, bins);
    total += area(curve_from_bins(bins, n_thresholds));
  }
  return total / static_cast<double>(maps.size());
}

std::vector<double> iou_curve(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds) {
  check_aligned(maps, gts, n_thresholds);
  long long gt_any = 0;
  for (const auto& g : gts) gt_any += g.count();
  if (gt_any == 0) throw ContractError("ground truth is empty: recall undefined");
  std::vector<double> curve(static_cast<std::size_t>(n_thresholds), 0.0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    BinCounts bins = empty_bins(n_thresholds);
    add_to_bins(maps[i], gts[i], n_thresholds, bins);
    long long sel = 0, inter = 0;
    // Accumulate from the top bin down; record thresholds 0..n-1.
    for (int k = n_thresholds; k >= 0; --k) {
      sel += bins.all[static_cast<std::size_t>(k)];
      inter += bins.pos[static_cast<std::size_t>(k)];
      if (k == n_thresholds) continue;
      const long long uni = sel + bins.gt_total - inter;
      curve[static_cast<std::size_t>(k)] += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    }
  }
  for (auto& v : curve) v /= static_cast<double>(maps.size());
  return curve;
}

double iou_auc(std::span<const AttributionMap> maps, std::span<const Mask> gts, int n_thresholds) {
  const auto curve = iou_curve(maps, gts, n_thresholds);
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(n_thresholds);
}

Pipeline classifier_pipeline(const ClassifierNet& classifier) {
  return [&classifier](const Tensor& x) { return classifier.forward(x); };
}

Pipeline comet_pipeline(const SelectorNet& selector, const ClassifierNet& predictor, FillPixel q) {
  return [&selector, &predictor, q = std::move(q)](const Tensor& x) {
    const MaskPair masks = make_masks(x, selector.forward(x), q);
    return predictor.forward(masks.masked_in);
  };
}

std::vector<int> predict(const Pipeline& pipeline, const Dataset& data, std::span<const std::size_t> idx,
                         std::size_t batch) {
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const auto chunk = idx.subspan(start, std::min(batch, idx.size() - start));
    const auto pred = argmax_rows(pipeline(to_batch(data, chunk)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

std::vector<int> predict_images(const Pipeline& pipeline, const Dataset& data, std::span<const Image> images,
                                std::size_t batch) {
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const auto chunk = images.subspan(start, std::min(batch, images.size() - start));
    const auto pred = argmax_rows(pipeline(batch_of_images(data, chunk)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double accuracy_of(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("prediction/label count mismatch");
  if (labels.empty()) throw ContractError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const Pipeline& pipeline, const Dataset& data, std::span<const std::size_t> idx) {
  const auto pred = predict(pipeline, data, idx);
  return accuracy_of(pred, labels_of(data, idx));
}

std::vector<AttributionMap> maps_for_images(const SelectorNet& selector, const Dataset& data,
                                            std::span<const Image> images) {
  NoGradGuard no_grad;
  std::vector<AttributionMap> out;
  out.reserve(images.size());
  constexpr std::size_t batch = 64;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const auto chunk = images.subspan(start, std::min(batch, images.size() - start));
    const Tensor maps = selector.forward(batch_of_images(data, chunk));
    for (Index s = 0; s < maps.dim(0); ++s) out.push_back(plane_of(maps, s));
  }
  return out;
}

std::vector<AttributionMap> attribution_maps(const SelectorNet& selector, const Dataset& data,
                                             std::span<const std::size_t> idx) {
  const auto images = images_of(data, idx);
  return maps_for_images(selector, data, images);
}

std::vector<Mask> gt_masks(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Mask> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.samples.at(i).gt_mask);
  return out;
}

std::vector<FidelityPoint> fidelity_curve(const Pipeline& pipeline, const Dataset& data,
                                          std::span<const std::size_t> idx, std::span<const AttributionMap> maps,
                                          std::span<const double> k_percents, FidelityOptions options) {
  if (maps.size() != idx.size()) throw DimensionError("fidelity: maps not aligned with samples");
  const Index plane = data.pixels();
  // Pixel ranking per image, most important first.
  std::vector<std::vector<Index>> order(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const AttributionMap& m = maps[i];
    if (m.size() != plane) throw DimensionError("fidelity: map size mismatch");
    auto& ord = order[i];
    ord.resize(static_cast<std::size_t>(plane));
    std::iota(ord.begin(), ord.end(), Index{0});
    std::vector<Index> tie(static_cast<std::size_t>(plane));
    std::iota(tie.begin(), tie.end(), Index{0});
    if (options.tie_break == TieBreak::Random) {
      Rng rng(derive_seed(options.seed, i));
      rng.shuffle(std::span<Index>(tie));
    }
    std::sort(ord.begin(), ord.end(), [&](Index a, Index b) {
      const double va = m.data()[a], vb = m.data()[b];
      if (va != vb) return va > vb;
      return tie[static_cast<std::size_t>(a)] < tie[static_cast<std::size_t>(b)];
    });
  }
  const auto labels = labels_of(data, idx);
  std::vector<FidelityPoint> out;
  for (double k : k_percents) {
    if (k < 0.0 || k > 100.0) throw ContractError("fidelity: k must lie in [0,100]");
    const auto count = static_cast<Index>(std::llround(k / 100.0 * static_cast<double>(plane)));
    std::vector<Image> perturbed;
    perturbed.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Image img = data.samples.at(idx[i]).image;
      for (Index r = 0; r < count; ++r)
        for (Index c = 0; c < data.channels; ++c)
          img[c * plane + order[i][static_cast<std::size_t>(r)]] =
              static_cast<float>(data.q[static_cast<std::size_t>(c)]);
      perturbed.push_back(std::move(img));
    }
    out.push_back({k, accuracy_of(predict_images(pipeline, data, perturbed), labels)});
  }
  return out;
}

double robustness_eval(const SelectorNet& selector, const Dataset& data, std::span<const std::size_t> idx,
                       RobustnessMode mode, std::uint64_t seed, double noise_fraction, int n_thresholds) {
  std::vector<Image> perturbed;
  perturbed.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Sample& s = data.samples.at(idx[k]);
    const std::uint64_t sample_seed = derive_seed(seed, idx[k]);
    if (mode == RobustnessMode::Noise)
      perturbed.push_back(synth::perturb_remove_pixels(s.image, data.channels, data.height, data.width,
                                                       noise_fraction, data.q, sample_seed));
    else
      perturbed.push_back(synth::swap_background(s, synth::alternate_background(data, s, sample_seed)).image);
  }
  const auto maps = maps_for_images(selector, data, perturbed);
  const auto gts = gt_masks(data, idx);
  return pxap(maps, gts, n_thresholds);
}

std::vector<SaliencyMap> input_gradient_saliency(const ClassifierNet& classifier, const Tensor& x,
                                                 std::span<const int> labels) {
  if (x.rank() != 4) throw DimensionError("saliency expects an NCHW batch");
  Tensor input(x.shape(), x.values(), true);
  const Tensor logits = classifier.forward(input);
  // Samples are independent, so d(sum of picked logits)/dx_i = d logit_i / dx_i.
  backward(sum(pick(logits, labels)));
  const Array g = input.grad();
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), plane = h * w;
  std::vector<SaliencyMap> out(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) {
    AttributionMap m = AttributionMap::Zero(h, w);
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < plane; ++p)
        m.data()[p] = std::max(m.data()[p], std::abs(g[(s * c + ch) * plane + p]));
    const double lo = m.minCoeff(), hi = m.maxCoeff();
    auto& res = out[static_cast<std::size_t>(s)];
    if (hi > lo) {
      res.map = (m - lo) / (hi - lo);
    } else {
      res.map = AttributionMap::Zero(h, w);
      res.degenerate = true;
    }
  }
  return out;
}

std::vector<AttributionMap> gradient_saliency_maps(const ClassifierNet& classifier, const Dataset& data,
                                                   std::span<const std::size_t> idx) {
  std::vector<AttributionMap> out;
  out.reserve(idx.size());
  constexpr std::size_t batch = 64;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const auto chunk = idx.subspan(start, std::min(batch, idx.size() - start));
    const auto labels = labels_of(data, chunk);
    for (auto& s : input_gradient_saliency(classifier, to_batch(data, chunk), labels))
      out.push_back(std::move(s.map));
  }
  return out;
}

std::vector<ReportRow> MetricReport::rows() const {
  std::vector<ReportRow> out;
  auto add = [&](std::string metric, double v) { out.push_back({std::move(metric), variant, dataset, v, seed}); };
  add("accuracy", accuracy);
  add("pxap", pxap);
  add("iou_auc", iou_auc);
  for (const auto& f : fidelity) add("fidelity_k" + format_double(f.k_percent), f.accuracy);
  add("robust_noise20", robust_noise);
  add("robust_bgswap", robust_bgswap);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_report_csv(std::ostream& os, std::span<const ReportRow> rows) {
  os << "metric,variant,dataset,value,seed\n";
  for (const auto& r : rows)
    os << r.metric << ',' << r.variant << ',' << r.dataset << ',' << format_double(r.value) << ',' << r.seed << '\n';
}

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  write_report_csv(os, rows);
}

std::vector<ReportRow> read_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "metric,variant,dataset,value,seed")
    throw FormatError("report CSV header mismatch");
  std::vector<ReportRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError("bad report row: " + line);
    ReportRow r{f[0], f[1], f[2], 0.0, 0};
    if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), r.value).ec != std::errc{} ||
        std::from_chars(f[4].data(), f[4].data() + f[4].size(), r.seed).ec != std::errc{})
      throw FormatError("bad number in report row: " + line);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_report_csv(is);
}

void write_pgm(const std::filesystem::path& path, const AttributionMap& map) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  for (Index i = 0; i < map.size(); ++i) {
    const double v = std::clamp(map.data()[i], 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

AttributionMap read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::string magic;
  Index w = 0, h = 0;
  int maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw FormatError("not an 8-bit P5 file");
  is.get();
  AttributionMap m(h, w);
  for (Index i = 0; i < m.size(); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("truncated PGM");
    m.data()[i] = static_cast<double>(c) / 255.0;
  }
  return m;
}

}  // namespace comet
