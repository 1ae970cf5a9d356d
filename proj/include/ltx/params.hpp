#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltx/tensor.hpp"

namespace ltx {

enum class TensorRole : uint8_t {
  conv_weight,
  dense_weight,
  bias,
  bn_gamma,
  bn_beta,
  bn_running_mean,
  bn_running_var,
};

struct ParamFlags {
  TensorRole role = TensorRole::dense_weight;
  bool trainable = true;
  bool prunable = false;
};

inline bool is_weight_role(TensorRole r) {
  return r == TensorRole::conv_weight || r == TensorRole::dense_weight;
}

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  ParamFlags flags;
};

// Ordered, named tensor collection: the model parameters theta. Iteration
// order is the architecture's declaration order and is part of the
// serialization contract.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> value, ParamFlags flags) {
    if (index_.count(name))
      throw contract_error("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), flags});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw contract_error("unknown parameter: " + name);
    return entries_[it->second];
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw contract_error("unknown parameter: " + name);
    return entries_[it->second];
  }

  Tensor<T>& at(const std::string& name) { return entry(name).value; }
  const Tensor<T>& at(const std::string& name) const {
    return entry(name).value;
  }

  size_t count() const { return entries_.size(); }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  int64_t trainable_params() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.flags.trainable) n += e.value.numel();
    return n;
  }

  int64_t prunable_params() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.flags.prunable) n += e.value.numel();
    return n;
  }

  // Same structure, all tensors zero (gradients, momentum buffers).
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& e : entries_)
      out.add(e.name, Tensor<T>(e.value.shape()), e.flags);
    return out;
  }

  void fill_zero() {
    for (auto& e : entries_) e.value.fill(T{});
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_)
      out.add(e.name, e.value.template cast<U>(), e.flags);
    return out;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

template <typename T>
inline bool bit_equal(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  if (a.count() != b.count()) return false;
  for (size_t i = 0; i < a.count(); ++i) {
    if (a.entries()[i].name != b.entries()[i].name) return false;
    if (!bit_equal(a.entries()[i].value, b.entries()[i].value)) return false;
  }
  return true;
}

}  // namespace ltx
