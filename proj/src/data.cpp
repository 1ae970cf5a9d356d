#include "ltx/data.hpp"

#include <algorithm>
#include <cmath>

#include "ltx/serial.hpp"
#include "ltx/text.hpp"

namespace ltx {

void Dataset::fill_normalized(std::span<const int64_t> idx,
                              Tensor<float>& out) const {
  const int64_t C = channels(), H = height(), W = width();
  const int64_t img = C * H * W;
  const Shape want{static_cast<int64_t>(idx.size()), C, H, W};
  if (out.shape() != want) out = Tensor<float>(want);
  for (size_t b = 0; b < idx.size(); ++b) {
    const int64_t i = idx[b];
    if (i < 0 || i >= size())
      throw contract_error("dataset index out of range: " + std::to_string(i));
    const uint8_t* src = pixels.data() + i * img;
    float* dst = out.data() + static_cast<int64_t>(b) * img;
    for (int64_t c = 0; c < C; ++c) {
      const float m = mean[static_cast<size_t>(c)];
      const float inv = 1.0f / std[static_cast<size_t>(c)];
      for (int64_t p = 0; p < H * W; ++p)
        dst[c * H * W + p] =
            (static_cast<float>(src[c * H * W + p]) * (1.0f / 255.0f) - m) *
            inv;
    }
  }
}

std::vector<int> Dataset::gather_labels(std::span<const int64_t> idx) const {
  std::vector<int> out(idx.size());
  for (size_t b = 0; b < idx.size(); ++b)
    out[b] = labels[static_cast<size_t>(idx[b])];
  return out;
}

void validate_dataset(const Dataset& d, const char* what) {
  if (d.pixels.rank() != 4)
    throw contract_error(std::string(what) + ": pixels must be (N,C,H,W)");
  if (d.size() <= 0) throw contract_error(std::string(what) + ": empty dataset");
  if (static_cast<int64_t>(d.labels.size()) != d.size())
    throw contract_error(std::string(what) + ": one label per image required");
  if (d.num_classes < 2)
    throw contract_error(std::string(what) + ": need at least 2 classes");
  for (int v : d.labels)
    if (v < 0 || v >= d.num_classes)
      throw contract_error(std::string(what) +
                           ": label out of range: " + std::to_string(v));
  if (static_cast<int64_t>(d.mean.size()) != d.channels() ||
      static_cast<int64_t>(d.std.size()) != d.channels())
    throw contract_error(std::string(what) +
                         ": per-channel stats do not match channel count");
  for (float s : d.std)
    if (!(s > 0.0f))
      throw contract_error(std::string(what) + ": non-positive channel std");
}

void validate_task(const TaskSpec& t) {
  validate_dataset(t.train, "train split");
  validate_dataset(t.val, "val split");
  validate_dataset(t.test, "test split");
  if (t.train.num_classes != t.num_classes ||
      t.val.num_classes != t.num_classes ||
      t.test.num_classes != t.num_classes)
    throw contract_error("task splits disagree on class count");
  std::vector<char> seen(static_cast<size_t>(t.num_classes), 0);
  for (int v : t.train.labels) seen[static_cast<size_t>(v)] = 1;
  for (int64_t k = 0; k < t.num_classes; ++k)
    if (!seen[static_cast<size_t>(k)])
      throw contract_error("class " + std::to_string(k) +
                           " absent from the train split");
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

constexpr double kBg = 32.0, kFg = 224.0;

void check_spec(const SynthSpec& s) {
  if (s.num_classes < 2) throw config_error("synthetic: need >= 2 classes");
  if (s.height < 8 || s.width < 8)
    throw config_error("synthetic: shape must be at least 8x8");
  if (s.channels < 1) throw config_error("synthetic: need >= 1 channel");
  if (s.train_per_class < 1)
    throw config_error("synthetic: need >= 1 train sample per class");
  if (s.noise < 0.0) throw config_error("synthetic: noise must be >= 0");
}

// Binary motif mask for one class: bars, crosses, disks, checkers; the
// variant index rotates or rescales so every class is distinct.
std::vector<float> motif_mask(int64_t klass, int64_t H, int64_t W) {
  std::vector<float> mask(static_cast<size_t>(H * W), 0.0f);
  const int64_t m = klass % 4;
  const auto v = static_cast<double>(klass / 4);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double scale = static_cast<double>(std::min(H, W));
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      const double y = static_cast<double>(r) - cy;
      const double x = static_cast<double>(c) - cx;
      bool on = false;
      switch (m) {
        case 0: {  // bar at angle v*22.5 deg
          const double th = v * 0.39269908169872414;  // pi/8
          const double d = std::abs(-std::sin(th) * x + std::cos(th) * y);
          on = d <= scale / 6.0;
          break;
        }
        case 1: {  // cross: two perpendicular bars, offset angle family
          const double th = v * 0.39269908169872414 + 0.2617993877991494;
          const double d1 = std::abs(-std::sin(th) * x + std::cos(th) * y);
          const double d2 = std::abs(std::cos(th) * x + std::sin(th) * y);
          on = d1 <= scale / 7.0 || d2 <= scale / 7.0;
          break;
        }
        case 2: {  // disk (even variant) or ring (odd variant)
          const double rad = std::sqrt(x * x + y * y);
          const double r_out = scale * (0.24 + 0.05 * v);
          on = (static_cast<int64_t>(v) % 2 == 0)
                   ? rad <= r_out
                   : (rad <= r_out && rad >= r_out - scale / 7.0);
          break;
        }
        default: {  // checkerboard, growing cell size
          const auto cell = static_cast<int64_t>(2 + v);
          on = ((r / cell) + (c / cell)) % 2 == 0;
          break;
        }
      }
      if (on) mask[static_cast<size_t>(r * W + c)] = 1.0f;
    }
  }
  return mask;
}

// Channel intensity weights give classes distinct colors when C > 1; the
// pattern is never all-off.
double channel_weight(int64_t klass, int64_t channel, int64_t channels) {
  if (channels == 1) return 1.0;
  const int64_t bits = std::min<int64_t>(channels, 3);
  const int64_t pattern = (klass % ((1 << bits) - 1)) + 1;
  return ((pattern >> (channel % bits)) & 1) ? 1.0 : 0.45;
}

}  // namespace

Tensor<uint8_t> synth_template(const SynthSpec& spec, int64_t klass) {
  check_spec(spec);
  if (klass < 0 || klass >= spec.num_classes)
    throw contract_error("synthetic class out of range: " +
                         std::to_string(klass));
  const auto mask = motif_mask(klass, spec.height, spec.width);
  Tensor<uint8_t> img(Shape{spec.channels, spec.height, spec.width});
  const int64_t hw = spec.height * spec.width;
  for (int64_t c = 0; c < spec.channels; ++c) {
    const double w = channel_weight(klass, c, spec.channels);
    for (int64_t p = 0; p < hw; ++p) {
      const double val = kBg + mask[static_cast<size_t>(p)] * (kFg - kBg) * w;
      img.data()[c * hw + p] = static_cast<uint8_t>(std::lround(val));
    }
  }
  return img;
}

int64_t nearest_template_class(const SynthSpec& spec,
                               const Tensor<uint8_t>& image) {
  int64_t best = -1;
  double best_d = 0.0;
  for (int64_t k = 0; k < spec.num_classes; ++k) {
    const auto tpl = synth_template(spec, k);
    require_same_shape_generic(tpl.shape(), image.shape(),
                               "nearest_template_class");
    double d = 0.0;
    for (int64_t i = 0; i < tpl.numel(); ++i) {
      const double diff = static_cast<double>(tpl.data()[i]) -
                          static_cast<double>(image.data()[i]);
      d += diff * diff;
    }
    if (best < 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

namespace {

// One sample: template shifted by a jitter offset (background fill), then
// per-pixel gaussian noise. Draw order: dy, dx, then pixels flat.
void render_sample(const SynthSpec& spec, const Tensor<uint8_t>& tpl,
                   Rng rng, uint8_t* out) {
  const int64_t C = spec.channels, H = spec.height, W = spec.width;
  const auto jitter = static_cast<int64_t>(std::lround(4.0 * spec.noise));
  int64_t dy = 0, dx = 0;
  if (jitter > 0) {
    dy = static_cast<int64_t>(rng.uniform_int(2 * jitter + 1)) - jitter;
    dx = static_cast<int64_t>(rng.uniform_int(2 * jitter + 1)) - jitter;
  }
  const double sigma = 51.0 * spec.noise;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t r = 0; r < H; ++r) {
      for (int64_t x = 0; x < W; ++x) {
        const int64_t sr = r - dy, sc = x - dx;
        double val = kBg;
        if (sr >= 0 && sr < H && sc >= 0 && sc < W)
          val = static_cast<double>(tpl.data()[(c * H + sr) * W + sc]);
        if (sigma > 0.0) val += rng.normal() * sigma;
        out[(c * H + r) * W + x] = static_cast<uint8_t>(
            std::clamp<long>(std::lround(val), 0, 255));
      }
    }
  }
}

Dataset make_split(const SynthSpec& spec, uint64_t seed, const char* tag_label,
                   SplitTag tag, int64_t per_class,
                   const std::vector<Tensor<uint8_t>>& templates) {
  const int64_t K = spec.num_classes;
  const int64_t N = K * per_class;
  const int64_t img = spec.channels * spec.height * spec.width;
  Dataset d;
  d.pixels = Tensor<uint8_t>(Shape{N, spec.channels, spec.height, spec.width});
  d.labels.resize(static_cast<size_t>(N));
  d.num_classes = K;
  d.tag = tag;
  const Rng split_rng = Rng(seed).child(tag_label);
  int64_t row = 0;
  for (int64_t k = 0; k < K; ++k) {
    for (int64_t i = 0; i < per_class; ++i, ++row) {
      render_sample(spec, templates[static_cast<size_t>(k)],
                    split_rng.child("sample", static_cast<uint64_t>(k),
                                    static_cast<uint64_t>(i)),
                    d.pixels.data() + row * img);
      d.labels[static_cast<size_t>(row)] = static_cast<int>(k);
    }
  }
  // Deterministic shuffle so unshuffled iteration is not class-blocked.
  Rng shuffle_rng = split_rng.child("shuffle");
  std::vector<uint8_t> tmp(static_cast<size_t>(img));
  for (int64_t i = N - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(
        shuffle_rng.uniform_int(static_cast<uint64_t>(i + 1)));
    if (j == i) continue;
    uint8_t* a = d.pixels.data() + i * img;
    uint8_t* b = d.pixels.data() + j * img;
    std::copy(a, a + img, tmp.data());
    std::copy(b, b + img, a);
    std::copy(tmp.data(), tmp.data() + img, b);
    std::swap(d.labels[static_cast<size_t>(i)], d.labels[static_cast<size_t>(j)]);
  }
  return d;
}

}  // namespace

std::pair<std::vector<float>, std::vector<float>> channel_stats(
    const Dataset& d) {
  const int64_t C = d.channels(), N = d.size();
  const int64_t hw = d.height() * d.width();
  std::vector<float> mean(static_cast<size_t>(C)), sd(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const uint8_t* px = d.pixels.data() + (n * C + c) * hw;
      for (int64_t p = 0; p < hw; ++p)
        s += static_cast<double>(px[p]) / 255.0;
    }
    const double mu = s / static_cast<double>(N * hw);
    double v = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const uint8_t* px = d.pixels.data() + (n * C + c) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        const double diff = static_cast<double>(px[p]) / 255.0 - mu;
        v += diff * diff;
      }
    }
    mean[static_cast<size_t>(c)] = static_cast<float>(mu);
    sd[static_cast<size_t>(c)] = static_cast<float>(
        std::max(std::sqrt(v / static_cast<double>(N * hw)), 1e-6));
  }
  return {mean, sd};
}

TaskSpec generate_synthetic(const SynthSpec& spec, uint64_t seed) {
  check_spec(spec);
  const int64_t val_pc = spec.val_per_class > 0
                             ? spec.val_per_class
                             : std::max<int64_t>(1, spec.train_per_class / 8);
  const int64_t test_pc = spec.test_per_class > 0
                              ? spec.test_per_class
                              : std::max<int64_t>(1, spec.train_per_class / 4);
  std::vector<Tensor<uint8_t>> templates;
  templates.reserve(static_cast<size_t>(spec.num_classes));
  for (int64_t k = 0; k < spec.num_classes; ++k)
    templates.push_back(synth_template(spec, k));

  TaskSpec task;
  task.num_classes = spec.num_classes;
  task.train = make_split(spec, seed, "train", SplitTag::train,
                          spec.train_per_class, templates);
  task.val = make_split(spec, seed, "val", SplitTag::val, val_pc, templates);
  task.test =
      make_split(spec, seed, "test", SplitTag::test, test_pc, templates);

  const auto [mean, sd] = channel_stats(task.train);
  task.train.mean = task.val.mean = task.test.mean = mean;
  task.train.std = task.val.std = task.test.std = sd;
  task.name = "synthetic-k" + std::to_string(spec.num_classes) + "-" +
              std::to_string(spec.channels) + "x" +
              std::to_string(spec.height) + "x" + std::to_string(spec.width) +
              "-n" + text::fmt_float(spec.noise);
  validate_task(task);
  return task;
}

// ---------------------------------------------------------------------------
// transforms

std::pair<Dataset, Dataset> split(const Dataset& d, double val_fraction,
                                  uint64_t seed) {
  validate_dataset(d, "split input");
  if (!(val_fraction > 0.0 && val_fraction < 0.5))
    throw contract_error("val fraction must lie in (0, 0.5)");
  std::vector<std::vector<int64_t>> by_class(
      static_cast<size_t>(d.num_classes));
  for (int64_t i = 0; i < d.size(); ++i)
    by_class[static_cast<size_t>(d.labels[static_cast<size_t>(i)])].push_back(i);

  std::vector<int64_t> val_idx, train_idx;
  for (int64_t k = 0; k < d.num_classes; ++k) {
    auto& idx = by_class[static_cast<size_t>(k)];
    if (idx.size() < 2)
      throw contract_error("class " + std::to_string(k) +
                           " has fewer than 2 samples; cannot split");
    Rng rng = Rng(seed).child("split-class", static_cast<uint64_t>(k));
    for (size_t i = idx.size() - 1; i > 0; --i) {
      const auto j = static_cast<size_t>(rng.uniform_int(i + 1));
      std::swap(idx[i], idx[j]);
    }
    const auto n_val = std::max<size_t>(
        1, static_cast<size_t>(std::floor(val_fraction *
                                          static_cast<double>(idx.size()))));
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(idx[i]);
  }
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  auto gather = [&](const std::vector<int64_t>& idx, SplitTag tag) {
    Dataset out;
    out.pixels = Tensor<uint8_t>(Shape{static_cast<int64_t>(idx.size()),
                                       d.channels(), d.height(), d.width()});
    const int64_t img = d.channels() * d.height() * d.width();
    out.labels.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      const uint8_t* src = d.pixels.data() + idx[i] * img;
      std::copy(src, src + img,
                out.pixels.data() + static_cast<int64_t>(i) * img);
      out.labels[i] = d.labels[static_cast<size_t>(idx[i])];
    }
    out.num_classes = d.num_classes;
    out.mean = d.mean;
    out.std = d.std;
    out.tag = tag;
    return out;
  };
  return {gather(train_idx, SplitTag::train), gather(val_idx, SplitTag::val)};
}

void augment_inplace(Tensor<float>& batch, Rng& rng) {
  if (batch.rank() != 4)
    throw contract_error("augment: batch must be (N,C,H,W)");
  const int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2),
                W = batch.dim(3);
  std::vector<float> tmp(static_cast<size_t>(C * H * W));
  for (int64_t n = 0; n < N; ++n) {
    const bool flip = rng.bernoulli(0.5);
    const auto oy = static_cast<int64_t>(rng.uniform_int(9));
    const auto ox = static_cast<int64_t>(rng.uniform_int(9));
    if (!flip && oy == 4 && ox == 4) continue;  // identity transform
    float* img = batch.data() + n * C * H * W;
    for (int64_t c = 0; c < C; ++c) {
      const float* src = img + c * H * W;
      float* dst = tmp.data() + c * H * W;
      for (int64_t r = 0; r < H; ++r) {
        const int64_t sr = r + oy - 4;
        for (int64_t x = 0; x < W; ++x) {
          int64_t sc = x + ox - 4;
          if (flip) sc = W - 1 - sc;
          dst[r * W + x] = (sr >= 0 && sr < H && sc >= 0 && sc < W)
                               ? src[sr * W + sc]
                               : 0.0f;
        }
      }
    }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

Tensor<float> augment(const Tensor<float>& batch, uint64_t seed) {
  Tensor<float> out = batch;
  Rng rng(seed);
  augment_inplace(out, rng);
  return out;
}

Dataset replicate_channels(const Dataset& d, int64_t target_channels) {
  if (d.channels() == target_channels) return d;
  if (d.channels() != 1)
    throw config_error("cannot adapt " + std::to_string(d.channels()) +
                       "-channel data to " + std::to_string(target_channels) +
                       " channels (only 1->C replication is supported)");
  Dataset out;
  out.pixels = Tensor<uint8_t>(
      Shape{d.size(), target_channels, d.height(), d.width()});
  const int64_t hw = d.height() * d.width();
  for (int64_t n = 0; n < d.size(); ++n) {
    const uint8_t* src = d.pixels.data() + n * hw;
    for (int64_t c = 0; c < target_channels; ++c)
      std::copy(src, src + hw, out.pixels.data() + (n * target_channels + c) * hw);
  }
  out.labels = d.labels;
  out.num_classes = d.num_classes;
  out.mean.assign(static_cast<size_t>(target_channels), d.mean[0]);
  out.std.assign(static_cast<size_t>(target_channels), d.std[0]);
  out.tag = d.tag;
  return out;
}

TaskSpec replicate_channels(const TaskSpec& t, int64_t target_channels) {
  if (t.train.channels() == target_channels) return t;
  TaskSpec out = t;
  out.train = replicate_channels(t.train, target_channels);
  out.val = replicate_channels(t.val, target_channels);
  out.test = replicate_channels(t.test, target_channels);
  return out;
}

// ---------------------------------------------------------------------------
// LTDS

namespace {
constexpr uint16_t kDatasetVersion = 1;
}

void save_dataset(const std::string& path, const Dataset& d) {
  validate_dataset(d, "save_dataset");
  serial::atomic_write_file(path, [&](std::ostream& os) {
    serial::write_magic(os, "LTDS");
    serial::write_le<uint16_t>(os, kDatasetVersion);
    serial::write_le<uint32_t>(os, static_cast<uint32_t>(d.size()));
    serial::write_le<uint8_t>(os, static_cast<uint8_t>(d.channels()));
    serial::write_le<uint16_t>(os, static_cast<uint16_t>(d.height()));
    serial::write_le<uint16_t>(os, static_cast<uint16_t>(d.width()));
    serial::write_le<uint16_t>(os, static_cast<uint16_t>(d.num_classes));
    for (float m : d.mean) serial::write_le<float>(os, m);
    for (float s : d.std) serial::write_le<float>(os, s);
    serial::write_bytes(os, d.pixels.data(),
                        static_cast<size_t>(d.pixels.numel()));
    for (int v : d.labels)
      serial::write_le<uint16_t>(os, static_cast<uint16_t>(v));
  });
}

Dataset load_dataset(const std::string& path) {
  auto is = serial::open_input(path);
  serial::expect_magic(is, "LTDS", "dataset");
  const auto version = serial::read_le<uint16_t>(is, "dataset version");
  if (version != kDatasetVersion)
    throw io_error(io_error::Kind::bad_version,
                   "unsupported dataset version " + std::to_string(version));
  const auto n = serial::read_le<uint32_t>(is, "sample count");
  const auto c = serial::read_le<uint8_t>(is, "channel count");
  const auto h = serial::read_le<uint16_t>(is, "height");
  const auto w = serial::read_le<uint16_t>(is, "width");
  const auto classes = serial::read_le<uint16_t>(is, "class count");
  if (n == 0 || c == 0 || h == 0 || w == 0)
    throw io_error(io_error::Kind::bad_value, "degenerate dataset header");
  Dataset d;
  d.num_classes = classes;
  d.mean.resize(c);
  d.std.resize(c);
  for (auto& m : d.mean) m = serial::read_le<float>(is, "channel mean");
  for (auto& s : d.std) s = serial::read_le<float>(is, "channel std");
  d.pixels = Tensor<uint8_t>(Shape{n, c, h, w});
  serial::read_bytes(is, d.pixels.data(), static_cast<size_t>(d.pixels.numel()),
                     "pixel payload");
  d.labels.resize(n);
  for (auto& v : d.labels) {
    const auto raw = serial::read_le<uint16_t>(is, "labels");
    if (raw >= classes)
      throw io_error(io_error::Kind::bad_value,
                     "label out of range: " + std::to_string(raw));
    v = raw;
  }
  validate_dataset(d, path.c_str());
  return d;
}

}  // namespace ltx
