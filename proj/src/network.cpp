#include "ltx/network.hpp"

#include <unordered_map>

namespace ltx::detail {

namespace {

struct Builder {
  CompiledNet net;
  std::unordered_map<std::string, int> param_index;
  ShapeCHW cur;
  int cur_slot = 0;

  int new_slot() { return net.num_slots++; }

  int pidx(const std::string& name) const {
    auto it = param_index.find(name);
    if (it == param_index.end())
      throw contract_error("compile: no parameter named " + name);
    return it->second;
  }

  Instr& push(OpKind op, std::string name, int in0, const ShapeCHW& in,
              const ShapeCHW& out) {
    Instr ins;
    ins.op = op;
    ins.name = std::move(name);
    ins.in0 = in0;
    ins.out = new_slot();
    ins.in_c = in.c;
    ins.in_h = in.h;
    ins.in_w = in.w;
    ins.out_c = out.c;
    ins.out_h = out.h;
    ins.out_w = out.w;
    net.instrs.push_back(std::move(ins));
    return net.instrs.back();
  }

  int conv(const std::string& name, int in0, const ShapeCHW& in, int64_t out_ch,
           int kernel, int stride, int pad, bool bias, ShapeCHW& out) {
    out = {out_ch, conv_extent(in.h, kernel, stride, pad, name),
           conv_extent(in.w, kernel, stride, pad, name)};
    Instr& ins = push(OpKind::conv, name, in0, in, out);
    ins.kernel = kernel;
    ins.stride = stride;
    ins.pad = pad;
    ins.weight = pidx(name + ".weight");
    if (bias) ins.bias = pidx(name + ".bias");
    return ins.out;
  }

  int bn(const std::string& name, int in0, const ShapeCHW& s) {
    Instr& ins = push(OpKind::batchnorm, name, in0, s, s);
    ins.gamma = pidx(name + ".gamma");
    ins.beta = pidx(name + ".beta");
    ins.rmean = pidx(name + ".running_mean");
    ins.rvar = pidx(name + ".running_var");
    return ins.out;
  }

  int relu(const std::string& name, int in0, const ShapeCHW& s) {
    return push(OpKind::relu, name, in0, s, s).out;
  }
};

}  // namespace

CompiledNet compile_network(const Architecture& arch) {
  validate_architecture(arch);
  Builder b;
  b.net.layout = param_layout(arch);
  for (size_t i = 0; i < b.net.layout.size(); ++i)
    b.param_index.emplace(b.net.layout[i].name, static_cast<int>(i));
  b.net.num_slots = 1;  // slot 0: input batch
  b.cur = {arch.input.c, arch.input.h, arch.input.w};
  b.cur_slot = 0;

  for (size_t li = 0; li < arch.total_layer_count(); ++li) {
    const LayerSpec& l = arch.layer_at(li);
    switch (l.kind) {
      case LayerKind::conv2d: {
        ShapeCHW out;
        b.cur_slot = b.conv(l.name, b.cur_slot, b.cur, l.out_ch, l.kernel,
                            l.stride, l.pad, l.bias, out);
        b.cur = out;
        break;
      }
      case LayerKind::batchnorm:
        b.cur_slot = b.bn(l.name, b.cur_slot, b.cur);
        break;
      case LayerKind::relu:
        b.cur_slot = b.relu(l.name, b.cur_slot, b.cur);
        break;
      case LayerKind::maxpool: {
        ShapeCHW out{b.cur.c,
                     pooled_extent(b.cur.h, l.kernel, l.stride, l.name),
                     pooled_extent(b.cur.w, l.kernel, l.stride, l.name)};
        Instr& ins = b.push(OpKind::maxpool, l.name, b.cur_slot, b.cur, out);
        ins.kernel = l.kernel;
        ins.stride = l.stride;
        b.cur_slot = ins.out;
        b.cur = out;
        break;
      }
      case LayerKind::avgpool: {
        ShapeCHW out;
        if (l.kernel == 0) {
          out = {b.cur.c, 0, 0};
        } else {
          out = {b.cur.c, pooled_extent(b.cur.h, l.kernel, l.stride, l.name),
                 pooled_extent(b.cur.w, l.kernel, l.stride, l.name)};
        }
        Instr& ins = b.push(OpKind::avgpool, l.name, b.cur_slot, b.cur, out);
        ins.kernel = l.kernel;
        ins.stride = l.stride;
        ins.global_pool = (l.kernel == 0);
        b.cur_slot = ins.out;
        b.cur = out;
        break;
      }
      case LayerKind::flatten: {
        ShapeCHW out{b.cur.numel(), 0, 0};
        b.cur_slot = b.push(OpKind::flatten, l.name, b.cur_slot, b.cur, out).out;
        b.cur = out;
        break;
      }
      case LayerKind::dense: {
        ShapeCHW out{l.out_dim, 0, 0};
        Instr& ins = b.push(OpKind::dense, l.name, b.cur_slot, b.cur, out);
        ins.weight = b.pidx(l.name + ".weight");
        ins.bias = b.pidx(l.name + ".bias");
        b.cur_slot = ins.out;
        b.cur = out;
        break;
      }
      case LayerKind::residual_block: {
        // conv1/bn1/relu -> conv2/bn2, plus identity or projected shortcut,
        // summed and passed through a final relu.
        const int block_in = b.cur_slot;
        const ShapeCHW in = b.cur;
        ShapeCHW mid;
        int s = b.conv(l.name + ".conv1", block_in, in, l.out_ch, 3, l.stride,
                       1, false, mid);
        s = b.bn(l.name + ".bn1", s, mid);
        s = b.relu(l.name + ".relu1", s, mid);
        ShapeCHW mid2;
        s = b.conv(l.name + ".conv2", s, mid, l.out_ch, 3, 1, 1, false, mid2);
        s = b.bn(l.name + ".bn2", s, mid2);
        int shortcut = block_in;
        if (l.stride != 1 || l.in_ch != l.out_ch) {
          ShapeCHW sc;
          shortcut = b.conv(l.name + ".shortcut", block_in, in, l.out_ch, 1,
                            l.stride, 0, false, sc);
          shortcut = b.bn(l.name + ".shortcut_bn", shortcut, sc);
        }
        Instr& add = b.push(OpKind::add, l.name + ".add", s, mid2, mid2);
        add.in1 = shortcut;
        s = add.out;
        b.cur_slot = b.relu(l.name + ".relu2", s, mid2);
        b.cur = mid2;
        break;
      }
      case LayerKind::softmax_xent: {
        b.net.logits_slot = b.cur_slot;
        Instr ins;
        ins.op = OpKind::softmax_xent;
        ins.name = l.name;
        ins.in0 = b.cur_slot;
        ins.in_c = b.cur.c;
        ins.out_c = b.cur.c;
        b.net.instrs.push_back(std::move(ins));
        break;
      }
    }
  }
  if (b.net.logits_slot < 0)
    throw contract_error("compile: architecture has no softmax-xent layer");
  return b.net;
}

}  // namespace ltx::detail
