#include "comet/data.hpp"

#include "comet/errors.hpp"
#include "comet/random.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace comet {

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

Tensor to_batch(const Dataset& data, std::span<const std::size_t> idx) {
  const Index per = data.channels * data.height * data.width;
  Array v(static_cast<Index>(idx.size()) * per);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Image& img = data.samples.at(idx[k]).image;
    if (img.size() != per) throw DimensionError("sample image has wrong size");
    v.segment(static_cast<Index>(k) * per, per) = img.cast<double>();
  }
  return Tensor({static_cast<Index>(idx.size()), data.channels, data.height, data.width}, std::move(v));
}

std::vector<int> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.samples.at(i).label);
  return out;
}

FillPixel train_mean(const Dataset& data) {
  const Index plane = data.pixels();
  std::vector<double> sums(static_cast<std::size_t>(data.channels), 0.0);
  std::size_t count = 0;
  for (const auto& s : data.samples) {
    if (s.split != Split::Train) continue;
    ++count;
    for (Index c = 0; c < data.channels; ++c)
      sums[static_cast<std::size_t>(c)] += s.image.segment(c * plane, plane).cast<double>().sum();
  }
  if (count == 0) throw ContractError("dataset has no training samples");
  for (auto& v : sums) v /= static_cast<double>(count) * static_cast<double>(plane);
  return sums;
}

FillPixel train_std(const Dataset& data, const FillPixel& mean) {
  if (static_cast<Index>(mean.size()) != data.channels)
    throw DimensionError("train_std: mean has " + std::to_string(mean.size()) + " channels");
  const Index plane = data.pixels();
  std::vector<double> sums(static_cast<std::size_t>(data.channels), 0.0);
  std::size_t count = 0;
  for (const auto& s : data.samples) {
    if (s.split != Split::Train) continue;
    ++count;
    for (Index c = 0; c < data.channels; ++c) {
      const auto i = static_cast<std::size_t>(c);
      sums[i] += (s.image.segment(c * plane, plane).cast<double>() - mean[i]).square().sum();
    }
  }
  if (count == 0) throw ContractError("dataset has no training samples");
  for (auto& v : sums) v = std::sqrt(v / (static_cast<double>(count) * static_cast<double>(plane)));
  return sums;
}

namespace synth {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, kFlowerColors> kFlowerPalette{{
    {0.90, 0.10, 0.10},  // red
    {0.12, 0.22, 0.92},  // blue
    {0.95, 0.88, 0.10},  // yellow
    {0.88, 0.12, 0.85},  // magenta
    {0.10, 0.85, 0.90},  // cyan
    {1.00, 0.55, 0.05},  // orange
}};
constexpr Rgb kGreen{0.15, 0.65, 0.20};

Rgb hsv(double hue_deg, double s, double v) {
  const double h = std::fmod(hue_deg, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Two palette colours blended by value noise plus a linear gradient, with
// fine per-pixel grain.
Image textured(const Rgb& c0, const Rgb& c1, Index spacing, Rng& rng, Index h, Index w) {
  const Index gh = h / spacing + 2, gw = w / spacing + 2;
  Eigen::ArrayXXd lattice(gh, gw);
  for (Index y = 0; y < gh; ++y)
    for (Index x = 0; x < gw; ++x) lattice(y, x) = rng.uniform();
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  Image img(3 * h * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(spacing);
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(spacing);
      const Index iy = static_cast<Index>(fy), ix = static_cast<Index>(fx);
      const double ty = fy - static_cast<double>(iy), tx = fx - static_cast<double>(ix);
      const double noise = (1 - ty) * ((1 - tx) * lattice(iy, ix) + tx * lattice(iy, ix + 1)) +
                           ty * ((1 - tx) * lattice(iy + 1, ix) + tx * lattice(iy + 1, ix + 1));
      const double u = (static_cast<double>(x) / static_cast<double>(w) - 0.5) * dx +
                       (static_cast<double>(y) / static_cast<double>(h) - 0.5) * dy + 0.5;
      const double mix = std::clamp(0.65 * noise + 0.35 * u, 0.0, 1.0);
      for (Index c = 0; c < 3; ++c) {
        const auto ch = static_cast<std::size_t>(c);
        const double grain = rng.uniform(-0.03, 0.03);
        img[(c * h + y) * w + x] = clamp01((1 - mix) * c0[ch] + mix * c1[ch] + grain);
      }
    }
  return img;
}

void paint(Image& img, const Mask& m, const Rgb& color, Index h, Index w) {
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      if (m(y, x))
        for (Index c = 0; c < 3; ++c) img[(c * h + y) * w + x] = clamp01(color[static_cast<std::size_t>(c)]);
}

Rgb jitter(const Rgb& c, Rng& rng, double amount) {
  return {c[0] + rng.uniform(-amount, amount), c[1] + rng.uniform(-amount, amount),
          c[2] + rng.uniform(-amount, amount)};
}

Split split_for(int i, int n) {
  const int held = n / 5;
  const int train = n - 2 * held;
  if (i < train) return Split::Train;
  return i < train + held ? Split::Val : Split::Test;
}

std::string meta_value(const std::string& meta, const std::string& key) {
  const std::string probe = key + "=";
  std::size_t pos = 0;
  while (pos < meta.size()) {
    std::size_t end = meta.find(';', pos);
    if (end == std::string::npos) end = meta.size();
    if (meta.compare(pos, probe.size(), probe) == 0) return meta.substr(pos + probe.size(), end - pos - probe.size());
    pos = end + 1;
  }
  return {};
}

// Shape rasterization for the polygon objects.
bool inside_polygon(double px, double py, const std::vector<std::array<double, 2>>& v) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const auto& a = v[i];
    const auto& b = v[j];
    if ((a[1] > py) != (b[1] > py) && px < (b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

double shape_area_coefficient(int kind) {
  switch (kind) {
    case 0: return std::numbers::pi;
    case 1: return 2.0;
    case 2: return 3.0 * std::sqrt(3.0) / 4.0;
    case 3: return 2.5 * std::sin(2.0 * std::numbers::pi / 5.0);
    case 4: return 3.0 * std::sqrt(3.0) / 2.0;
    default: return 20.0 / 9.0;
  }
}

Mask rasterize_shape(int kind, double cx, double cy, double radius, double rot, Index h, Index w) {
  Mask m = Mask::Constant(h, w, false);
  std::vector<std::array<double, 2>> verts;
  const int sides[] = {0, 4, 3, 5, 6, 0};
  if (kind >= 1 && kind <= 4) {
    for (int k = 0; k < sides[kind]; ++k) {
      const double a = rot + 2.0 * std::numbers::pi * k / sides[kind];
      verts.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
    }
  }
  const double cr = std::cos(rot), sr = std::sin(rot);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool in = false;
      if (kind == 0) {
        in = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius;
      } else if (kind == 5) {
        const double u = std::abs(cr * (px - cx) + sr * (py - cy));
        const double v = std::abs(-sr * (px - cx) + cr * (py - cy));
        const double arm = radius / 3.0;
        in = (u <= radius && v <= arm) || (u <= arm && v <= radius);
      } else {
        in = inside_polygon(px, py, verts);
      }
      m(y, x) = in;
    }
  return m;
}

Rgb object_color(int label, int classes) { return hsv(360.0 * label / classes, 0.9, 0.92); }

Rgb texture_color(int texture_id, int which) {
  const double hue = 30.0 * texture_id + (which ? 20.0 : 0.0);
  const double value = (texture_id % 2 ? 0.62 : 0.45) - (which ? 0.18 : 0.0);
  return hsv(hue, 0.32, value);
}

// Places one polygon object with area inside [0.08, 0.30] of the image.
Mask place_object(int kind, Rng& rng, Index h, Index w) {
  const double pixels = static_cast<double>(h * w);
  for (int attempt = 0;; ++attempt) {
    const double area = rng.uniform(0.10, 0.20) * pixels;
    const double radius = std::sqrt(area / shape_area_coefficient(kind));
    const double lo = radius + 1.0;
    const double hi_x = static_cast<double>(w) - radius - 1.0;
    const double hi_y = static_cast<double>(h) - radius - 1.0;
    const double cx = hi_x > lo ? rng.uniform(lo, hi_x) : static_cast<double>(w) / 2.0;
    const double cy = hi_y > lo ? rng.uniform(lo, hi_y) : static_cast<double>(h) / 2.0;
    const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Mask m = rasterize_shape(kind, cx, cy, radius, rot, h, w);
    const double frac = static_cast<double>(m.count()) / pixels;
    if ((frac >= 0.08 && frac <= 0.30) || attempt > 50) return m;
  }
}

Dataset finish(Dataset d) {
  d.q = train_mean(d);
  return d;
}

}  // namespace

Image render_texture(int texture_id, std::uint64_t seed, Index height, Index width) {
  Rng rng(seed);
  const Index spacing = texture_id % 3 == 0 ? 4 : (texture_id % 3 == 1 ? 8 : 16);
  return textured(texture_color(texture_id, 0), texture_color(texture_id, 1), spacing, rng, height, width);
}

Image render_flower_background(std::uint64_t seed, Index height, Index width) {
  Rng rng(seed);
  auto neutral = [&rng] {
    const double v = rng.uniform(0.28, 0.62);
    return Rgb{v + rng.uniform(-0.06, 0.06), v + rng.uniform(-0.06, 0.06), v + rng.uniform(-0.06, 0.06)};
  };
  const Rgb c0 = neutral();
  const Rgb c1 = neutral();
  const Index spacing = rng.below(2) ? 4 : 8;
  return textured(c0, c1, spacing, rng, height, width);
}

Dataset gen_flower(std::uint64_t seed, int n_per_class) {
  if (n_per_class < 1) throw ConfigError("gen_flower: n_per_class must be >= 1");
  Dataset d;
  d.classes = kFlowerClasses;
  const Index h = d.height, w = d.width;
  for (int i = 0; i < n_per_class; ++i)
    for (int label = 0; label < kFlowerClasses; ++label) {
      const std::uint64_t index = static_cast<std::uint64_t>(i) * kFlowerClasses + label;
      Rng rng(derive_seed(seed, index));
      const int color = label / 2;
      const int part = label % 2;
      const std::uint64_t bg_seed = rng.next();
      Sample s;
      s.image = render_flower_background(bg_seed, h, w);

      const double r = rng.uniform(3.6, 5.4);
      const double cx = rng.uniform(8.0, 24.0);
      const double cy = rng.uniform(6.5, 13.0);
      const double stem_half = rng.below(2) ? 1.5 : 2.0;
      const double stem_len = rng.uniform(11.0, 16.0);
      Mask disc = Mask::Constant(h, w, false);
      Mask stem = Mask::Constant(h, w, false);
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
          const bool in_disc = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
          const bool in_rect = std::abs(px - cx) <= stem_half && py >= cy && py <= cy + stem_len;
          disc(y, x) = in_disc;
          stem(y, x) = in_rect && !in_disc;
        }
      const Rgb colored = jitter(kFlowerPalette[static_cast<std::size_t>(color)], rng, 0.05);
      const Rgb green = jitter(kGreen, rng, 0.05);
      paint(s.image, disc, part == 0 ? colored : green, h, w);
      paint(s.image, stem, part == 1 ? colored : green, h, w);
      s.label = label;
      s.split = split_for(i, n_per_class);
      s.gt_mask = part == 0 ? disc : stem;
      s.fg_mask = disc || stem;
      s.meta = "gen=flower;seed=" + std::to_string(seed) + ";index=" + std::to_string(index) +
               ";color=" + std::to_string(color) + ";part=" + std::to_string(part) +
               ";bgseed=" + std::to_string(bg_seed);
      d.samples.push_back(std::move(s));
    }
  return finish(std::move(d));
}

Dataset gen_fgbg(std::uint64_t seed, int n_per_class, int classes, double bg_correlation) {
  if (classes < 2) throw ConfigError("gen_fgbg: need at least 2 classes");
  if (n_per_class < 1) throw ConfigError("gen_fgbg: n_per_class must be >= 1");
  if (bg_correlation < 0.0 || bg_correlation > 1.0) throw ConfigError("gen_fgbg: bg_correlation outside [0,1]");
  const int pool = std::max(kTexturePool, classes);
  Dataset d;
  d.classes = classes;
  const Index h = d.height, w = d.width;
  for (int i = 0; i < n_per_class; ++i)
    for (int label = 0; label < classes; ++label) {
      const std::uint64_t index = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(classes) + label;
      Rng rng(derive_seed(seed, index));
      const int texture = rng.uniform() < bg_correlation ? label % pool : rng.below(pool);
      const std::uint64_t bg_seed = rng.next();
      Sample s;
      s.image = render_texture(texture, bg_seed, h, w);
      const int kind = label % kShapeKinds;
      s.fg_mask = place_object(kind, rng, h, w);
      s.gt_mask = s.fg_mask;
      paint(s.image, s.fg_mask, jitter(object_color(label, classes), rng, 0.04), h, w);
      s.label = label;
      s.split = split_for(i, n_per_class);
      s.meta = "gen=fgbg;seed=" + std::to_string(seed) + ";index=" + std::to_string(index) +
               ";bg=" + std::to_string(texture) + ";bgseed=" + std::to_string(bg_seed) +
               ";pool=" + std::to_string(pool);
      d.samples.push_back(std::move(s));
    }
  return finish(std::move(d));
}

Dataset gen_dual_label(std::uint64_t seed, int n_per_pair, int object_classes, int scene_classes) {
  if (object_classes < 2 || scene_classes < 2) throw ConfigError("gen_dual_label: need >= 2 classes per label");
  if (scene_classes > kTexturePool) throw ConfigError("gen_dual_label: too many scene classes");
  if (n_per_pair < 1) throw ConfigError("gen_dual_label: n_per_pair must be >= 1");
  Dataset d;
  d.classes = object_classes;
  d.scene_classes = scene_classes;
  const Index h = d.height, w = d.width;
  // Scenes use every (pool / scene_classes)-th texture so they stay far apart.
  const int stride = kTexturePool / scene_classes;
  std::uint64_t index = 0;
  for (int i = 0; i < n_per_pair; ++i)
    for (int obj = 0; obj < object_classes; ++obj)
      for (int scene = 0; scene < scene_classes; ++scene, ++index) {
        Rng rng(derive_seed(seed, index));
        const int texture = scene * stride;
        const std::uint64_t bg_seed = rng.next();
        Sample s;
        s.image = render_texture(texture, bg_seed, h, w);
        s.fg_mask = place_object(obj % kShapeKinds, rng, h, w);
        s.gt_mask = s.fg_mask;
        paint(s.image, s.fg_mask, jitter(object_color(obj, object_classes), rng, 0.04), h, w);
        s.label = obj;
        s.scene_label = scene;
        s.split = split_for(i, n_per_pair);
        s.meta = "gen=dual;seed=" + std::to_string(seed) + ";index=" + std::to_string(index) +
                 ";bg=" + std::to_string(texture) + ";bgseed=" + std::to_string(bg_seed) +
                 ";scene=" + std::to_string(scene) + ";scenes=" + std::to_string(scene_classes);
        d.samples.push_back(std::move(s));
      }
  return finish(std::move(d));
}

Image alternate_background(const Dataset& data, const Sample& sample, std::uint64_t seed) {
  const std::string gen = meta_value(sample.meta, "gen");
  if (gen == "flower") return render_flower_background(seed, data.height, data.width);
  if (gen == "fgbg" || gen == "dual") {
    Rng rng(seed);
    const std::string cur = meta_value(sample.meta, "bg");
    const int original = cur.empty() ? -1 : std::stoi(cur);
    int texture = rng.below(kTexturePool);
    if (texture == original) texture = (texture + 1 + rng.below(kTexturePool - 1)) % kTexturePool;
    return render_texture(texture, rng.next(), data.height, data.width);
  }
  throw ContractError("sample has no known background family: " + sample.meta);
}

Image perturb_remove_pixels(const Image& image, Index channels, Index height, Index width,
                            double fraction, std::span<const double> q, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ContractError("removal fraction must lie in [0,1]");
  if (static_cast<Index>(q.size()) != channels) throw DimensionError("fill pixel channel mismatch");
  if (image.size() != channels * height * width) throw DimensionError("image size mismatch");
  const Index plane = height * width;
  const auto count = static_cast<Index>(std::llround(fraction * static_cast<double>(plane)));
  std::vector<Index> pos(static_cast<std::size_t>(plane));
  for (Index i = 0; i < plane; ++i) pos[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(plane - i)));
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
  }
  Image out = image;
  for (Index i = 0; i < count; ++i)
    for (Index c = 0; c < channels; ++c)
      out[c * plane + pos[static_cast<std::size_t>(i)]] = static_cast<float>(q[static_cast<std::size_t>(c)]);
  return out;
}

Sample swap_background(const Sample& sample, const Image& background) {
  if (background.size() != sample.image.size()) throw DimensionError("background size mismatch");
  const Index plane = sample.fg_mask.size();
  const Index channels = sample.image.size() / plane;
  Sample out = sample;
  for (Index c = 0; c < channels; ++c)
    for (Index p = 0; p < plane; ++p)
      if (!sample.fg_mask.data()[p]) out.image[c * plane + p] = background[c * plane + p];
  return out;
}

Dataset scene_view(const Dataset& dual) {
  if (dual.scene_classes < 2) throw ContractError("scene_view needs a dual-label dataset");
  Dataset out = dual;
  out.classes = dual.scene_classes;
  for (auto& s : out.samples) {
    if (s.scene_label < 0) throw ContractError("sample without scene label");
    s.label = s.scene_label;
    s.gt_mask = !s.fg_mask;
    s.fg_mask = s.gt_mask;
  }
  return out;
}

Dataset permute_labels(const Dataset& data, std::uint64_t seed) {
  Dataset out = data;
  std::vector<int> labels;
  labels.reserve(out.samples.size());
  for (const auto& s : out.samples) labels.push_back(s.label);
  Rng rng(seed);
  rng.shuffle(std::span<int>(labels));
  for (std::size_t i = 0; i < labels.size(); ++i) out.samples[i].label = labels[i];
  return out;
}

Image composite_fill(const Sample& sample, Index channels, std::span<const double> q, bool keep_foreground) {
  const Index plane = sample.fg_mask.size();
  Image out = sample.image;
  for (Index c = 0; c < channels; ++c)
    for (Index p = 0; p < plane; ++p)
      if (sample.fg_mask.data()[p] != keep_foreground)
        out[c * plane + p] = static_cast<float>(q[static_cast<std::size_t>(c)]);
  return out;
}

}  // namespace synth
}  // namespace comet
