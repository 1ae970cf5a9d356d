#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltx/rng.hpp"
#include "ltx/tensor.hpp"

namespace ltx {

enum class SplitTag : uint8_t { train, val, test };

// Images stay in raw u8 form; normalization to float happens at batch
// assembly with the stored per-channel statistics (always the train split's).
struct Dataset {
  Tensor<uint8_t> pixels;  // (N, C, H, W)
  std::vector<int> labels;
  int64_t num_classes = 0;
  std::vector<float> mean, std;  // per channel, in [0,1] pixel space
  SplitTag tag = SplitTag::train;

  int64_t size() const { return pixels.rank() == 4 ? pixels.dim(0) : 0; }
  int64_t channels() const { return pixels.dim(1); }
  int64_t height() const { return pixels.dim(2); }
  int64_t width() const { return pixels.dim(3); }

  // (p/255 - mean_c) / std_c for the selected images, in index order.
  void fill_normalized(std::span<const int64_t> idx, Tensor<float>& out) const;
  std::vector<int> gather_labels(std::span<const int64_t> idx) const;
};

void validate_dataset(const Dataset& d, const char* what);

struct TaskSpec {
  std::string name;
  Dataset train, val, test;
  int64_t num_classes = 0;
  bool augment = true;
};

void validate_task(const TaskSpec& t);

// ---------------------------------------------------------------------------
// synthetic generator

// Class-conditional geometric motifs (bars / crosses / disks / checkers at
// class-specific orientations and colors). `noise` drives both pixel noise
// (sigma = 51*noise on the u8 scale) and translation jitter (uniform integer
// offsets in [-round(4*noise), +round(4*noise)]); at noise=0 every sample
// equals its class template exactly.
struct SynthSpec {
  int64_t num_classes = 10;
  int64_t channels = 3;
  int64_t height = 16;
  int64_t width = 16;
  int64_t train_per_class = 200;
  int64_t val_per_class = 0;   // 0: max(1, train_per_class/8)
  int64_t test_per_class = 0;  // 0: max(1, train_per_class/4)
  double noise = 0.5;
};

TaskSpec generate_synthetic(const SynthSpec& spec, uint64_t seed);

// The noiseless class image the generator perturbs.
Tensor<uint8_t> synth_template(const SynthSpec& spec, int64_t klass);

// Nearest-template classification by L2 distance on raw pixels; the oracle
// the generator is tested against (100% at noise=0 by construction).
int64_t nearest_template_class(const SynthSpec& spec,
                               const Tensor<uint8_t>& image);

// ---------------------------------------------------------------------------
// transforms

// Stratified, seed-deterministic split; per class: max(1, floor(frac*n))
// samples go to the second return (val), the rest stay in the first (train).
std::pair<Dataset, Dataset> split(const Dataset& d, double val_fraction,
                                  uint64_t seed);

// Horizontal flip with probability 0.5, then zero-pad 4 pixels a side and
// crop back at a uniform offset in [0,8]^2 (offset (4,4) without flip is the
// identity). Operates on normalized batches; zero fill = channel mean.
void augment_inplace(Tensor<float>& batch, Rng& rng);
Tensor<float> augment(const Tensor<float>& batch, uint64_t seed);

// Grayscale-to-RGB style adaptation: repeats channel 0 to `target_channels`
// (stats replicated too). Identity when counts already match.
Dataset replicate_channels(const Dataset& d, int64_t target_channels);
TaskSpec replicate_channels(const TaskSpec& t, int64_t target_channels);

// Per-channel mean/std of a split, in [0,1] pixel space (population sigma,
// floored at 1e-6). Stamps of the generator and of LTDS writers.
std::pair<std::vector<float>, std::vector<float>> channel_stats(
    const Dataset& d);

// ---------------------------------------------------------------------------
// LTDS file format (little-endian): magic "LTDS", version u16, N u32, C u8,
// H u16, W u16, num_classes u16, mean f32 x C, std f32 x C,
// pixels u8 N*C*H*W row-major, labels u16 x N.

void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace ltx
