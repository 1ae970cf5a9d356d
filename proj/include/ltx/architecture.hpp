#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ltx/params.hpp"
#include "ltx/tensor.hpp"

namespace ltx {

enum class LayerKind : uint8_t {
  dense,
  conv2d,
  maxpool,
  avgpool,
  relu,
  batchnorm,
  residual_block,
  flatten,
  softmax_xent,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::residual_block: return "residual-block";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_xent: return "softmax-xent";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  std::string name;

  // conv2d / residual_block
  int64_t in_ch = 0, out_ch = 0;
  int kernel = 0, stride = 1, pad = 0;
  bool bias = true;  // conv2d only; residual blocks are always bias-free

  // dense
  int64_t in_dim = 0, out_dim = 0;

  // avgpool: kernel == 0 means global average pooling
  bool prunable = false;  // dense/conv2d weight kernel participates in masks
};

inline LayerSpec conv_layer(std::string name, int64_t in_ch, int64_t out_ch,
                            int kernel, int stride, int pad, bool bias,
                            bool prunable = true) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.name = std::move(name);
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.bias = bias;
  s.prunable = prunable;
  return s;
}

inline LayerSpec bn_layer(std::string name, int64_t channels) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.name = std::move(name);
  s.in_ch = s.out_ch = channels;
  return s;
}

inline LayerSpec relu_layer(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.name = std::move(name);
  return s;
}

inline LayerSpec maxpool_layer(std::string name, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.name = std::move(name);
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

inline LayerSpec global_avgpool_layer(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::avgpool;
  s.name = std::move(name);
  s.kernel = 0;
  return s;
}

inline LayerSpec residual_layer(std::string name, int64_t in_ch,
                                int64_t out_ch, int stride) {
  LayerSpec s;
  s.kind = LayerKind::residual_block;
  s.name = std::move(name);
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.stride = stride;
  s.prunable = true;
  return s;
}

inline LayerSpec flatten_layer(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  s.name = std::move(name);
  return s;
}

inline LayerSpec dense_layer(std::string name, int64_t in_dim, int64_t out_dim,
                             bool prunable) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.name = std::move(name);
  s.in_dim = in_dim;
  s.out_dim = out_dim;
  s.prunable = prunable;
  return s;
}

inline LayerSpec softmax_xent_layer(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::softmax_xent;
  s.name = std::move(name);
  return s;
}

struct InputShape {
  int64_t c = 0, h = 0, w = 0;
};

// A model: a body (feature stack) followed by a fully-connected head that
// ends in softmax-xent. Head tensors are never prunable; masks cover the
// body's conv/dense weight kernels only.
struct Architecture {
  std::string name;
  std::vector<LayerSpec> layers;  // body
  std::vector<LayerSpec> head;    // output stack, ends with softmax_xent
  InputShape input;
  int64_t num_classes = 0;

  size_t total_layer_count() const { return layers.size() + head.size(); }
  const LayerSpec& layer_at(size_t i) const {
    return i < layers.size() ? layers[i] : head[i - layers.size()];
  }
  bool in_head(size_t i) const { return i >= layers.size(); }
};

struct ParamDecl {
  std::string name;
  Shape shape;
  ParamFlags flags;
};

namespace detail {

struct ShapeCHW {
  int64_t c = 0, h = 0, w = 0;  // w==0, h==0 means flat vector of size c
  bool flat() const { return h == 0; }
  int64_t numel() const { return flat() ? c : c * h * w; }
};

inline int64_t pooled_extent(int64_t in, int kernel, int stride,
                             const std::string& layer) {
  if (in < kernel)
    throw config_error("invalid architecture: pool window larger than input in " +
                       layer);
  return (in - kernel) / stride + 1;
}

inline int64_t conv_extent(int64_t in, int kernel, int stride, int pad,
                           const std::string& layer) {
  const int64_t padded = in + 2 * pad;
  if (padded < kernel)
    throw config_error("invalid architecture: kernel larger than input in " +
                       layer);
  return (padded - kernel) / stride + 1;
}

}  // namespace detail

// Walks shapes through every layer; throws config_error on inconsistency.
// Returns the per-layer output shapes (body then head), aligned with
// Architecture::layer_at indices.
std::vector<detail::ShapeCHW> validate_architecture(const Architecture& arch);

// Declares every parameter tensor of the architecture in canonical order.
std::vector<ParamDecl> param_layout(const Architecture& arch);

int64_t total_param_count(const Architecture& arch);
int64_t trainable_param_count(const Architecture& arch);
int64_t conv_weight_count(const Architecture& arch);

// Feature dimension entering the head (after flatten/global pool).
int64_t head_input_dim(const Architecture& arch);

// Architecture presets addressable by name: fc-small, fc-large, micro-resnet,
// micro-vgg. See README for the exact layer tables.
Architecture make_preset(std::string_view preset, InputShape input,
                         int64_t num_classes);

// Same body, new input shape; revalidates.
Architecture with_input_shape(const Architecture& arch, InputShape input);

struct HeadSpec {
  enum class Kind { linear, fc2 };
  Kind kind = Kind::linear;
  int64_t hidden = 96;
};

// Builds the head layer stack for the given feature dimension.
std::vector<LayerSpec> make_head(const HeadSpec& spec, int64_t feature_dim,
                                 int64_t num_classes);

}  // namespace ltx
