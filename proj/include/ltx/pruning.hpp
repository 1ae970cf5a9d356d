#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltx/params.hpp"
#include "ltx/tensor.hpp"

namespace ltx {

// Binary masks over the prunable tensors of one architecture. Values are
// exactly 0 or 1; a mask may never zero out an entire layer.
using Mask = Tensor<uint8_t>;

struct MaskEntry {
  std::string name;
  Mask mask;
};

class MaskSet {
 public:
  void add(std::string name, Mask mask) {
    if (index_.count(name))
      throw contract_error("duplicate mask tensor: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(mask)});
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Mask& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw contract_error("no mask tensor named " + name);
    return entries_[it->second].mask;
  }
  Mask& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw contract_error("no mask tensor named " + name);
    return entries_[it->second].mask;
  }
  const std::vector<MaskEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<MaskEntry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

inline bool bit_equal(const MaskSet& a, const MaskSet& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].name != b.entries()[i].name) return false;
    if (!bit_equal(a.entries()[i].mask, b.entries()[i].mask)) return false;
  }
  return true;
}

inline int64_t ones_count(const Mask& m) {
  int64_t n = 0;
  for (int64_t i = 0; i < m.numel(); ++i) n += m.data()[i];
  return n;
}

inline int64_t mask_ones(const MaskSet& masks) {
  int64_t n = 0;
  for (const auto& e : masks.entries()) n += ones_count(e.mask);
  return n;
}

inline int64_t mask_total(const MaskSet& masks) {
  int64_t n = 0;
  for (const auto& e : masks.entries()) n += e.mask.numel();
  return n;
}

// Fraction of ones over prunable coordinates only.
inline double prunable_density(const MaskSet& masks) {
  const int64_t total = mask_total(masks);
  if (total == 0) throw contract_error("density of an empty mask set");
  return static_cast<double>(mask_ones(masks)) / static_cast<double>(total);
}

// Fraction of surviving parameters over the whole model: non-prunable
// tensors always count as present.
template <typename T>
double whole_model_density(const MaskSet& masks, const ParameterSet<T>& params) {
  const int64_t total = params.total_params();
  const int64_t pruned = mask_total(masks) - mask_ones(masks);
  return static_cast<double>(total - pruned) / static_cast<double>(total);
}

// All-ones masks over the prunable tensors; empty (and still valid) when
// the architecture has nothing prunable, e.g. flat baseline classifiers.
template <typename T>
MaskSet ones_like(const ParameterSet<T>& params) {
  MaskSet out;
  for (const auto& e : params.entries()) {
    if (!e.flags.prunable) continue;
    Mask m(e.value.shape());
    m.fill(1);
    out.add(e.name, std::move(m));
  }
  return out;
}

// Checks the MaskSet invariants against its owning parameters: exact
// coverage of prunable tensors, matching shapes, {0,1} values, and no
// fully-pruned layer.
template <typename T>
void validate_masks(const MaskSet& masks, const ParameterSet<T>& params) {
  size_t prunable = 0;
  for (const auto& e : params.entries()) {
    if (!e.flags.prunable) {
      if (masks.has(e.name))
        throw contract_error("mask covers non-prunable tensor " + e.name);
      continue;
    }
    ++prunable;
    if (!masks.has(e.name))
      throw contract_error("mask missing for prunable tensor " + e.name);
    const Mask& m = masks.at(e.name);
    if (m.shape() != e.value.shape())
      throw contract_error("mask shape mismatch for " + e.name);
    int64_t ones = 0;
    for (int64_t i = 0; i < m.numel(); ++i) {
      if (m.data()[i] > 1)
        throw contract_error("mask value outside {0,1} in " + e.name);
      ones += m.data()[i];
    }
    if (ones == 0)
      throw contract_error("degenerate layer: all weights pruned in " + e.name);
  }
  if (prunable != masks.size())
    throw contract_error("mask set has tensors the model does not");
}

namespace detail {

// Shared ranking core: orders candidate coordinates by ascending |w|, ties
// by position, and zeroes the first `to_prune` of them.
struct PruneRef {
  double mag;
  int64_t tensor;  // ordinal within the candidate group
  int64_t index;   // flat index within the tensor
};

inline void prune_smallest(std::vector<PruneRef>& cand, int64_t to_prune,
                           const std::vector<Mask*>& targets) {
  std::sort(cand.begin(), cand.end(), [](const PruneRef& a, const PruneRef& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.index < b.index;
  });
  for (int64_t i = 0; i < to_prune; ++i)
    targets[static_cast<size_t>(cand[static_cast<size_t>(i)].tensor)]
        ->data()[cand[static_cast<size_t>(i)].index] = 0;
}

}  // namespace detail

// One magnitude-pruning pass over a single tensor: zeroes the
// floor(rate * n_unmasked) smallest-|w| surviving entries. Already-masked
// entries stay masked; ties prune the lowest flat index first.
template <typename T>
Mask magnitude_prune_layer(const Tensor<T>& weights, const Mask& mask,
                           double rate) {
  require_same_shape_generic(weights.shape(), mask.shape(),
                             "magnitude_prune_layer");
  if (rate < 0.0 || rate >= 1.0)
    throw contract_error("prune rate must lie in [0, 1): " +
                         std::to_string(rate));
  Mask out = mask;
  if (rate == 0.0) return out;
  std::vector<detail::PruneRef> cand;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask.data()[i])
      cand.push_back({std::abs(static_cast<double>(weights.data()[i])), 0, i});
  if (cand.empty())
    throw contract_error("degenerate layer: no unmasked weights to prune");
  const auto to_prune =
      static_cast<int64_t>(std::floor(rate * static_cast<double>(cand.size())));
  std::vector<Mask*> targets{&out};
  detail::prune_smallest(cand, to_prune, targets);
  if (ones_count(out) == 0)
    throw contract_error("degenerate layer: all weights pruned");
  return out;
}

struct PruneSchedule {
  enum class Mode { iterative, one_shot };
  Mode mode = Mode::iterative;
  // Per-round prune fraction by tensor kind (iterative mode).
  double conv_rate = 0.20;
  double dense_rate = 0.0;
  int rounds = 1;
  double target_density = 1.0;  // one-shot mode
  // Rank magnitudes across all tensors of a kind instead of per layer.
  bool global_ranking = false;
};

namespace detail {

inline double rate_for(const PruneSchedule& s, TensorRole role) {
  switch (role) {
    case TensorRole::conv_weight: return s.conv_rate;
    case TensorRole::dense_weight: return s.dense_rate;
    default:
      throw contract_error("non-weight tensor marked prunable");
  }
}

}  // namespace detail

// One iterative round: each prunable tensor pruned at its kind's rate.
// With global_ranking, tensors of one kind pool their magnitudes and the
// floor(rate * n_unmasked) smallest across the pool are dropped.
template <typename T>
MaskSet prune_round(const ParameterSet<T>& params, const MaskSet& masks,
                    const PruneSchedule& schedule) {
  validate_masks(masks, params);
  MaskSet out;
  for (const auto& e : masks.entries()) out.add(e.name, e.mask);

  if (!schedule.global_ranking) {
    for (const auto& e : masks.entries()) {
      const auto& p = params.entry(e.name);
      const double rate = detail::rate_for(schedule, p.flags.role);
      out.at(e.name) = magnitude_prune_layer(p.value, e.mask, rate);
    }
    return out;
  }

  for (TensorRole role : {TensorRole::conv_weight, TensorRole::dense_weight}) {
    const double rate = detail::rate_for(schedule, role);
    if (rate < 0.0 || rate >= 1.0)
      throw contract_error("prune rate must lie in [0, 1): " +
                           std::to_string(rate));
    if (rate == 0.0) continue;
    std::vector<Mask*> targets;
    std::vector<detail::PruneRef> cand;
    std::vector<std::string> names;
    for (const auto& e : masks.entries()) {
      const auto& p = params.entry(e.name);
      if (p.flags.role != role) continue;
      const auto tensor_ord = static_cast<int64_t>(targets.size());
      targets.push_back(&out.at(e.name));
      names.push_back(e.name);
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask.data()[i])
          cand.push_back(
              {std::abs(static_cast<double>(p.value.data()[i])), tensor_ord, i});
    }
    if (targets.empty()) continue;
    const auto to_prune = static_cast<int64_t>(
        std::floor(rate * static_cast<double>(cand.size())));
    detail::prune_smallest(cand, to_prune, targets);
    for (size_t t = 0; t < targets.size(); ++t)
      if (ones_count(*targets[t]) == 0)
        throw contract_error("degenerate layer: all weights pruned in " +
                             names[t]);
  }
  return out;
}

// Single pass straight to the target density: ceil(density * n) survivors
// per prunable layer (or over the whole prunable pool with global_ranking).
template <typename T>
MaskSet one_shot_prune(const ParameterSet<T>& params, const MaskSet& masks,
                       double target_density, bool global_ranking = false) {
  validate_masks(masks, params);
  if (target_density <= 0.0 || target_density > 1.0)
    throw contract_error("target density must lie in (0, 1]: " +
                         std::to_string(target_density));
  const double current = prunable_density(masks);
  if (target_density > current + 1e-12)
    throw contract_error("target density " + std::to_string(target_density) +
                         " above current density " + std::to_string(current));
  MaskSet out;
  for (const auto& e : masks.entries()) out.add(e.name, e.mask);

  if (!global_ranking) {
    for (const auto& e : masks.entries()) {
      const auto& p = params.entry(e.name);
      std::vector<detail::PruneRef> cand;
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask.data()[i])
          cand.push_back(
              {std::abs(static_cast<double>(p.value.data()[i])), 0, i});
      const auto survivors = static_cast<int64_t>(std::ceil(
          target_density * static_cast<double>(e.mask.numel())));
      const auto to_prune = static_cast<int64_t>(cand.size()) - survivors;
      if (to_prune < 0)
        throw contract_error("one-shot target above current density in " +
                             e.name);
      std::vector<Mask*> targets{&out.at(e.name)};
      detail::prune_smallest(cand, to_prune, targets);
    }
    return out;
  }

  std::vector<Mask*> targets;
  std::vector<std::string> names;
  std::vector<detail::PruneRef> cand;
  int64_t total = 0;
  for (const auto& e : masks.entries()) {
    const auto& p = params.entry(e.name);
    const auto tensor_ord = static_cast<int64_t>(targets.size());
    targets.push_back(&out.at(e.name));
    names.push_back(e.name);
    total += e.mask.numel();
    for (int64_t i = 0; i < e.mask.numel(); ++i)
      if (e.mask.data()[i])
        cand.push_back(
            {std::abs(static_cast<double>(p.value.data()[i])), tensor_ord, i});
  }
  const auto survivors = static_cast<int64_t>(
      std::ceil(target_density * static_cast<double>(total)));
  const auto to_prune = static_cast<int64_t>(cand.size()) - survivors;
  if (to_prune < 0)
    throw contract_error("one-shot target above current density");
  detail::prune_smallest(cand, to_prune, targets);
  for (size_t t = 0; t < targets.size(); ++t)
    if (ones_count(*targets[t]) == 0)
      throw contract_error("degenerate layer: all weights pruned in " +
                           names[t]);
  return out;
}

// Masked coordinates become exactly zero; everything else is bit-identical.
template <typename T>
void apply_mask_inplace(ParameterSet<T>& params, const MaskSet& masks) {
  for (const auto& e : masks.entries()) {
    Tensor<T>& w = params.at(e.name);
    require_same_shape_generic(w.shape(), e.mask.shape(), "apply_mask");
    for (int64_t i = 0; i < w.numel(); ++i)
      if (!e.mask.data()[i]) w.data()[i] = T{};
  }
}

template <typename T>
ParameterSet<T> apply_mask(const ParameterSet<T>& params, const MaskSet& masks) {
  ParameterSet<T> out = params;
  apply_mask_inplace(out, masks);
  return out;
}

// LTMK file format (little-endian): magic "LTMK", version u16, count u32,
// then per tensor: name (u16 length + UTF-8), rank u8, extents u32 each,
// mask bits packed LSB-first and padded to a byte boundary.
void save_masks(const std::string& path, const MaskSet& masks);
MaskSet load_masks(const std::string& path);

}  // namespace ltx
