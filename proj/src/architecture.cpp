#include "ltx/architecture.hpp"

#include <string>

namespace ltx {

using detail::ShapeCHW;

namespace {

ShapeCHW apply_layer(const LayerSpec& l, const ShapeCHW& in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      if (in.flat())
        throw config_error("invalid architecture: conv2d after flatten (" +
                           l.name + ")");
      if (in.c != l.in_ch)
        throw config_error("invalid architecture: " + l.name + " expects " +
                           std::to_string(l.in_ch) + " channels, got " +
                           std::to_string(in.c));
      return {l.out_ch,
              detail::conv_extent(in.h, l.kernel, l.stride, l.pad, l.name),
              detail::conv_extent(in.w, l.kernel, l.stride, l.pad, l.name)};
    }
    case LayerKind::residual_block: {
      if (in.flat() || in.c != l.in_ch)
        throw config_error("invalid architecture: residual block " + l.name +
                           " channel mismatch");
      // Two 3x3 convs, pad 1; spatial size divides by stride.
      ShapeCHW mid{l.out_ch, detail::conv_extent(in.h, 3, l.stride, 1, l.name),
                   detail::conv_extent(in.w, 3, l.stride, 1, l.name)};
      return mid;
    }
    case LayerKind::maxpool:
      if (in.flat())
        throw config_error("invalid architecture: pool after flatten (" +
                           l.name + ")");
      return {in.c, detail::pooled_extent(in.h, l.kernel, l.stride, l.name),
              detail::pooled_extent(in.w, l.kernel, l.stride, l.name)};
    case LayerKind::avgpool:
      if (in.flat())
        throw config_error("invalid architecture: pool after flatten (" +
                           l.name + ")");
      if (l.kernel == 0) return {in.c, 0, 0};  // global: flattens to channels
      return {in.c, detail::pooled_extent(in.h, l.kernel, l.stride, l.name),
              detail::pooled_extent(in.w, l.kernel, l.stride, l.name)};
    case LayerKind::relu:
    case LayerKind::batchnorm:
      if (l.kind == LayerKind::batchnorm && (in.flat() || in.c != l.in_ch))
        throw config_error("invalid architecture: batchnorm " + l.name +
                           " channel mismatch");
      return in;
    case LayerKind::flatten:
      return {in.numel(), 0, 0};
    case LayerKind::dense:
      if (!in.flat())
        throw config_error(
            "invalid architecture: dense layer " + l.name +
            " needs a flat input (insert flatten or global avgpool)");
      if (in.c != l.in_dim)
        throw config_error("invalid architecture: " + l.name + " expects " +
                           std::to_string(l.in_dim) + " inputs, got " +
                           std::to_string(in.c));
      return {l.out_dim, 0, 0};
    case LayerKind::softmax_xent:
      if (!in.flat())
        throw config_error("invalid architecture: softmax-xent needs logits");
      return in;
  }
  throw config_error("invalid architecture: unknown layer kind");
}

}  // namespace

std::vector<ShapeCHW> validate_architecture(const Architecture& arch) {
  if (arch.input.c <= 0 || arch.input.h <= 0 || arch.input.w <= 0)
    throw config_error("invalid architecture: bad input shape");
  if (arch.num_classes < 2)
    throw config_error("invalid architecture: need at least 2 classes");
  if (arch.head.empty() || arch.head.back().kind != LayerKind::softmax_xent)
    throw config_error("invalid architecture: head must end in softmax-xent");

  std::vector<ShapeCHW> out;
  out.reserve(arch.total_layer_count());
  ShapeCHW cur{arch.input.c, arch.input.h, arch.input.w};
  for (size_t i = 0; i < arch.total_layer_count(); ++i) {
    cur = apply_layer(arch.layer_at(i), cur);
    out.push_back(cur);
  }

  // Final logits dimension must match num_classes (softmax-xent preserves it).
  if (out.back().c != arch.num_classes || !out.back().flat())
    throw config_error("invalid architecture: head output dim " +
                       std::to_string(out.back().c) + " != num_classes " +
                       std::to_string(arch.num_classes));
  for (const auto& l : arch.head)
    if (l.prunable)
      throw config_error("invalid architecture: head layers are not prunable");
  return out;
}

namespace {

void declare_conv(std::vector<ParamDecl>& out, const std::string& prefix,
                  int64_t in_ch, int64_t out_ch, int kernel, bool bias,
                  bool prunable) {
  out.push_back({prefix + ".weight",
                 Shape{out_ch, in_ch, kernel, kernel},
                 {TensorRole::conv_weight, true, prunable}});
  if (bias)
    out.push_back(
        {prefix + ".bias", Shape{out_ch}, {TensorRole::bias, true, false}});
}

void declare_bn(std::vector<ParamDecl>& out, const std::string& prefix,
                int64_t ch) {
  out.push_back(
      {prefix + ".gamma", Shape{ch}, {TensorRole::bn_gamma, true, false}});
  out.push_back(
      {prefix + ".beta", Shape{ch}, {TensorRole::bn_beta, true, false}});
  out.push_back({prefix + ".running_mean",
                 Shape{ch},
                 {TensorRole::bn_running_mean, false, false}});
  out.push_back({prefix + ".running_var",
                 Shape{ch},
                 {TensorRole::bn_running_var, false, false}});
}

}  // namespace

std::vector<ParamDecl> param_layout(const Architecture& arch) {
  std::vector<ParamDecl> out;
  for (size_t i = 0; i < arch.total_layer_count(); ++i) {
    const LayerSpec& l = arch.layer_at(i);
    switch (l.kind) {
      case LayerKind::conv2d:
        declare_conv(out, l.name, l.in_ch, l.out_ch, l.kernel, l.bias,
                     l.prunable);
        break;
      case LayerKind::batchnorm:
        declare_bn(out, l.name, l.in_ch);
        break;
      case LayerKind::dense:
        out.push_back({l.name + ".weight",
                       Shape{l.out_dim, l.in_dim},
                       {TensorRole::dense_weight, true, l.prunable}});
        out.push_back(
            {l.name + ".bias", Shape{l.out_dim}, {TensorRole::bias, true, false}});
        break;
      case LayerKind::residual_block: {
        declare_conv(out, l.name + ".conv1", l.in_ch, l.out_ch, 3, false,
                     l.prunable);
        declare_bn(out, l.name + ".bn1", l.out_ch);
        declare_conv(out, l.name + ".conv2", l.out_ch, l.out_ch, 3, false,
                     l.prunable);
        declare_bn(out, l.name + ".bn2", l.out_ch);
        if (l.stride != 1 || l.in_ch != l.out_ch) {
          declare_conv(out, l.name + ".shortcut", l.in_ch, l.out_ch, 1, false,
                       l.prunable);
          declare_bn(out, l.name + ".shortcut_bn", l.out_ch);
        }
        break;
      }
      default:
        break;  // parameter-free layers
    }
  }
  return out;
}

int64_t total_param_count(const Architecture& arch) {
  int64_t n = 0;
  for (const auto& d : param_layout(arch)) n += shape_numel(d.shape);
  return n;
}

int64_t trainable_param_count(const Architecture& arch) {
  int64_t n = 0;
  for (const auto& d : param_layout(arch))
    if (d.flags.trainable) n += shape_numel(d.shape);
  return n;
}

int64_t conv_weight_count(const Architecture& arch) {
  int64_t n = 0;
  for (const auto& d : param_layout(arch))
    if (d.flags.role == TensorRole::conv_weight) n += shape_numel(d.shape);
  return n;
}

int64_t head_input_dim(const Architecture& arch) {
  auto shapes = validate_architecture(arch);
  if (arch.layers.empty()) {
    ShapeCHW in{arch.input.c, arch.input.h, arch.input.w};
    return in.numel();
  }
  const auto& s = shapes[arch.layers.size() - 1];
  return s.numel();
}

std::vector<LayerSpec> make_head(const HeadSpec& spec, int64_t feature_dim,
                                 int64_t num_classes) {
  if (spec.kind == HeadSpec::Kind::fc2 && spec.hidden <= 0)
    throw contract_error("fc2 head: hidden width must be positive");
  std::vector<LayerSpec> head;
  if (spec.kind == HeadSpec::Kind::linear) {
    head.push_back(dense_layer("head.fc", feature_dim, num_classes, false));
  } else {
    head.push_back(dense_layer("head.fc1", feature_dim, spec.hidden, false));
    head.push_back(relu_layer("head.relu"));
    head.push_back(dense_layer("head.fc2", spec.hidden, num_classes, false));
  }
  head.push_back(softmax_xent_layer("head.loss"));
  return head;
}

namespace {

// CIFAR-style residual stack: stem conv 16, then 3 stages of 3 blocks at
// 16/32/64 channels, stride 2 between stages, global average pool.
Architecture micro_resnet(InputShape input, int64_t classes) {
  Architecture a;
  a.name = "micro-resnet";
  a.input = input;
  a.num_classes = classes;
  a.layers.push_back(conv_layer("stem.conv", input.c, 16, 3, 1, 1, false));
  a.layers.push_back(bn_layer("stem.bn", 16));
  a.layers.push_back(relu_layer("stem.relu"));
  const int64_t widths[3] = {16, 32, 64};
  int64_t in_ch = 16;
  for (int stage = 0; stage < 3; ++stage) {
    for (int block = 0; block < 3; ++block) {
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      std::string name =
          "s" + std::to_string(stage + 1) + "b" + std::to_string(block + 1);
      a.layers.push_back(residual_layer(name, in_ch, widths[stage], stride));
      in_ch = widths[stage];
    }
  }
  a.layers.push_back(global_avgpool_layer("avgpool"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, in_ch, classes);
  return a;
}

// Six 3x3 convs (32,32 / 64,64 / 128,128) with 2x2 max pools between pairs,
// batchnorm after every conv, global average pool before the head.
Architecture micro_vgg(InputShape input, int64_t classes) {
  Architecture a;
  a.name = "micro-vgg";
  a.input = input;
  a.num_classes = classes;
  const int64_t widths[3] = {32, 64, 128};
  int64_t in_ch = input.c;
  int idx = 0;
  for (int group = 0; group < 3; ++group) {
    for (int k = 0; k < 2; ++k) {
      std::string c = "c" + std::to_string(idx);
      a.layers.push_back(conv_layer(c, in_ch, widths[group], 3, 1, 1, false));
      a.layers.push_back(bn_layer("bn" + std::to_string(idx), widths[group]));
      a.layers.push_back(relu_layer("relu" + std::to_string(idx)));
      in_ch = widths[group];
      ++idx;
    }
    if (group < 2)
      a.layers.push_back(
          maxpool_layer("pool" + std::to_string(group), 2, 2));
  }
  a.layers.push_back(global_avgpool_layer("avgpool"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, in_ch, classes);
  return a;
}

Architecture fc_net(std::string name, InputShape input, int64_t classes,
                    std::vector<int64_t> hidden) {
  Architecture a;
  a.name = std::move(name);
  a.input = input;
  a.num_classes = classes;
  const int64_t flat = input.c * input.h * input.w;
  a.layers.push_back(flatten_layer("flatten"));
  int64_t in_dim = flat;
  for (size_t i = 0; i < hidden.size(); ++i) {
    std::string n = "fc" + std::to_string(i);
    a.layers.push_back(dense_layer(n, in_dim, hidden[i], true));
    a.layers.push_back(relu_layer("relu" + std::to_string(i)));
    in_dim = hidden[i];
  }
  a.head = make_head({HeadSpec::Kind::linear, 0}, in_dim, classes);
  return a;
}

}  // namespace

Architecture make_preset(std::string_view preset, InputShape input,
                         int64_t num_classes) {
  Architecture a;
  if (preset == "micro-resnet") {
    a = micro_resnet(input, num_classes);
  } else if (preset == "micro-vgg") {
    a = micro_vgg(input, num_classes);
  } else if (preset == "fc-small") {
    a = fc_net("fc-small", input, num_classes, {1024});
  } else if (preset == "fc-large") {
    a = fc_net("fc-large", input, num_classes, {1024, 100});
  } else {
    throw config_error("unknown architecture preset: " + std::string(preset));
  }
  validate_architecture(a);
  return a;
}

Architecture with_input_shape(const Architecture& arch, InputShape input) {
  if (input.c != arch.input.c)
    throw config_error(
        "input channel count is fixed by the trained stack; adapt the data "
        "(channel replication) instead");
  Architecture out = arch;
  out.input = input;
  validate_architecture(out);
  return out;
}

}  // namespace ltx
