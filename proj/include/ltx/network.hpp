#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ltx/architecture.hpp"
#include "ltx/kernels.hpp"
#include "ltx/params.hpp"
#include "ltx/tensor.hpp"

namespace ltx {

using FrozenSet = std::unordered_set<std::string>;

enum class Mode { train, eval };

namespace detail {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

enum class OpKind : uint8_t {
  conv,
  dense,
  relu,
  maxpool,
  avgpool,
  batchnorm,
  flatten,
  add,
  softmax_xent,
};

// One primitive step of the compiled plan. Residual blocks lower to
// conv/bn/relu/add chains, so forward and backward stay uniform.
struct Instr {
  OpKind op;
  int in0 = -1, in1 = -1, out = -1;  // activation slot ids
  int weight = -1, bias = -1;        // ParameterSet entry indices, -1 if none
  int gamma = -1, beta = -1, rmean = -1, rvar = -1;
  int kernel = 0, stride = 1, pad = 0;
  bool global_pool = false;
  // Per-image geometry (batch dim excluded). Flat slots use h == w == 0.
  int64_t in_c = 0, in_h = 0, in_w = 0;
  int64_t out_c = 0, out_h = 0, out_w = 0;
  std::string name;

  int64_t in_numel() const { return in_h ? in_c * in_h * in_w : in_c; }
  int64_t out_numel() const { return out_h ? out_c * out_h * out_w : out_c; }
};

struct CompiledNet {
  std::vector<Instr> instrs;
  int num_slots = 0;
  int logits_slot = -1;
  std::vector<ParamDecl> layout;
};

CompiledNet compile_network(const Architecture& arch);

}  // namespace detail

template <typename T>
struct BnCache {
  bool used_batch_stats = false;
  std::vector<T> mean, inv_std;
  std::vector<T> new_running_mean, new_running_var;
};

// Per-call activation and cache storage; reusable across steps of a run.
template <typename T>
struct RunCtx {
  std::vector<Tensor<T>> slots;
  std::vector<BnCache<T>> bn;                // per instr
  std::vector<std::vector<int32_t>> argmax;  // per instr (maxpool)
  Tensor<T> probs;                           // softmax output
  std::vector<int> labels;
  int64_t batch = 0;
  double loss = 0.0;
  std::vector<T> scratch_a, scratch_b;  // im2col buffers
};

template <typename T>
struct ForwardOut {
  double loss = 0.0;
  const Tensor<T>* logits = nullptr;
};

// Executes an architecture: forward with loss, analytic backward. One
// instance per thread; distinct instances are independent.
template <typename T>
class Network {
 public:
  explicit Network(const Architecture& arch)
      : arch_(&arch), plan_(detail::compile_network(arch)) {}

  const std::vector<ParamDecl>& layout() const { return plan_.layout; }
  const Architecture& arch() const { return *arch_; }

  // `frozen` (tensor names) switches frozen batchnorm layers to running
  // statistics even in train mode and suppresses their staged updates.
  ForwardOut<T> forward(const ParameterSet<T>& params, const Tensor<T>& batch,
                        std::span<const int> labels, Mode mode, RunCtx<T>& ctx,
                        const FrozenSet* frozen = nullptr) const;

  // Applies the batchnorm running-stat updates staged by the last train-mode
  // forward. Separate so forward stays pure for gradient checking.
  void commit_bn_updates(ParameterSet<T>& params, const RunCtx<T>& ctx) const;

  // Analytic gradients into `grads` (accumulated; caller zeroes). Gradients
  // are produced for trainable, unfrozen tensors; everything else stays
  // untouched. Requires a preceding forward on the same ctx.
  void backward(const ParameterSet<T>& params, RunCtx<T>& ctx,
                ParameterSet<T>& grads, const FrozenSet* frozen = nullptr) const;

 private:
  void ensure_ctx(RunCtx<T>& ctx, int64_t batch) const;
  bool tensor_updatable(const ParameterSet<T>& params, int idx,
                        const FrozenSet* frozen) const {
    if (idx < 0) return false;
    const auto& e = params.entries()[static_cast<size_t>(idx)];
    if (!e.flags.trainable) return false;
    return !(frozen && frozen->count(e.name));
  }

  const Architecture* arch_;
  detail::CompiledNet plan_;
};

// ---------------------------------------------------------------------------
// implementation

namespace detail {

template <typename T>
void conv_forward(const Instr& op, const T* x, const T* w, const T* b, T* y,
                  int64_t batch, std::vector<T>& col) {
  const int64_t k_dim = op.in_c * op.kernel * op.kernel;
  const int64_t ohow = op.out_h * op.out_w;
  col.resize(static_cast<size_t>(k_dim * ohow));
  const int64_t in_sz = op.in_numel();
  const int64_t out_sz = op.out_numel();
  for (int64_t n = 0; n < batch; ++n) {
    im2col(x + n * in_sz, op.in_c, op.in_h, op.in_w, op.kernel, op.stride,
           op.pad, op.out_h, op.out_w, col.data(), ohow);
    T* yn = y + n * out_sz;
    std::fill(yn, yn + out_sz, T{});
    gemm_acc(w, col.data(), yn, op.out_c, k_dim, ohow);
    if (b) {
      for (int64_t o = 0; o < op.out_c; ++o) {
        T* row = yn + o * ohow;
        const T bo = b[o];
        for (int64_t j = 0; j < ohow; ++j) row[j] += bo;
      }
    }
  }
}

template <typename T>
void conv_backward(const Instr& op, const T* x, const T* w, const T* dy,
                   T* dx, T* dw, T* db, int64_t batch, std::vector<T>& col,
                   std::vector<T>& dcol) {
  const int64_t k_dim = op.in_c * op.kernel * op.kernel;
  const int64_t ohow = op.out_h * op.out_w;
  col.resize(static_cast<size_t>(k_dim * ohow));
  if (dx) dcol.resize(static_cast<size_t>(k_dim * ohow));
  const int64_t in_sz = op.in_numel();
  const int64_t out_sz = op.out_numel();
  for (int64_t n = 0; n < batch; ++n) {
    const T* dyn = dy + n * out_sz;
    if (db) {
      for (int64_t o = 0; o < op.out_c; ++o) {
        const T* row = dyn + o * ohow;
        T s{};
        for (int64_t j = 0; j < ohow; ++j) s += row[j];
        db[o] += s;
      }
    }
    if (dw) {
      im2col(x + n * in_sz, op.in_c, op.in_h, op.in_w, op.kernel, op.stride,
             op.pad, op.out_h, op.out_w, col.data(), ohow);
      gemm_abt_acc(dyn, col.data(), dw, op.out_c, ohow, k_dim);
    }
    if (dx) {
      std::fill(dcol.begin(), dcol.end(), T{});
      gemm_atb_acc(w, dyn, dcol.data(), op.out_c, k_dim, ohow);
      col2im_acc(dcol.data(), op.in_c, op.in_h, op.in_w, op.kernel, op.stride,
                 op.pad, op.out_h, op.out_w, dx + n * in_sz, ohow);
    }
  }
}

}  // namespace detail

template <typename T>
void Network<T>::ensure_ctx(RunCtx<T>& ctx, int64_t batch) const {
  const auto& plan = plan_;
  if (ctx.batch == batch &&
      ctx.slots.size() == static_cast<size_t>(plan.num_slots))
    return;
  ctx.batch = batch;
  ctx.slots.assign(static_cast<size_t>(plan.num_slots), Tensor<T>{});
  ctx.slots[0] = Tensor<T>(
      Shape{batch, arch_->input.c, arch_->input.h, arch_->input.w});
  for (const auto& op : plan.instrs) {
    if (op.out < 0) continue;
    Shape s = op.out_h ? Shape{batch, op.out_c, op.out_h, op.out_w}
                       : Shape{batch, op.out_c};
    ctx.slots[static_cast<size_t>(op.out)] = Tensor<T>(std::move(s));
  }
  ctx.bn.assign(plan.instrs.size(), BnCache<T>{});
  ctx.argmax.assign(plan.instrs.size(), {});
}

template <typename T>
ForwardOut<T> Network<T>::forward(const ParameterSet<T>& params,
                                  const Tensor<T>& batch,
                                  std::span<const int> labels, Mode mode,
                                  RunCtx<T>& ctx,
                                  const FrozenSet* frozen) const {
  if (batch.rank() != 4)
    throw contract_error("forward: batch must be (N,C,H,W)");
  const int64_t n = batch.dim(0);
  if (batch.dim(1) != arch_->input.c || batch.dim(2) != arch_->input.h ||
      batch.dim(3) != arch_->input.w)
    throw contract_error("forward: batch shape " + shape_str(batch.shape()) +
                         " does not match input " +
                         std::to_string(arch_->input.c) + "x" +
                         std::to_string(arch_->input.h) + "x" +
                         std::to_string(arch_->input.w));
  if (static_cast<int64_t>(labels.size()) != n)
    throw contract_error("forward: need one label per image");
  ensure_ctx(ctx, n);
  ctx.labels.assign(labels.begin(), labels.end());
  std::copy(batch.data(), batch.data() + batch.numel(), ctx.slots[0].data());

  const auto& entries = params.entries();
  auto tensor = [&](int idx) -> const Tensor<T>& {
    return entries[static_cast<size_t>(idx)].value;
  };

  for (size_t ii = 0; ii < plan_.instrs.size(); ++ii) {
    const auto& op = plan_.instrs[ii];
    const Tensor<T>& in = ctx.slots[static_cast<size_t>(op.in0)];
    using detail::OpKind;
    switch (op.op) {
      case OpKind::conv: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        detail::conv_forward(op, in.data(), tensor(op.weight).data(),
                             op.bias >= 0 ? tensor(op.bias).data() : nullptr,
                             out.data(), n, ctx.scratch_a);
        break;
      }
      case OpKind::dense: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        const Tensor<T>& w = tensor(op.weight);
        const Tensor<T>& b = tensor(op.bias);
        out.fill(T{});
        detail::gemm_abt_acc(in.data(), w.data(), out.data(), n, op.in_c,
                             op.out_c);
        for (int64_t i = 0; i < n; ++i) {
          T* row = out.data() + i * op.out_c;
          for (int64_t o = 0; o < op.out_c; ++o) row[o] += b.data()[o];
        }
        break;
      }
      case OpKind::relu: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        const T* p = in.data();
        T* q = out.data();
        const int64_t m = in.numel();
        for (int64_t i = 0; i < m; ++i) q[i] = p[i] > T{} ? p[i] : T{};
        break;
      }
      case OpKind::flatten: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        std::copy(in.data(), in.data() + in.numel(), out.data());
        break;
      }
      case OpKind::add: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        const Tensor<T>& in1 = ctx.slots[static_cast<size_t>(op.in1)];
        const T* a = in.data();
        const T* b = in1.data();
        T* q = out.data();
        const int64_t m = in.numel();
        for (int64_t i = 0; i < m; ++i) q[i] = a[i] + b[i];
        break;
      }
      case OpKind::maxpool: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        auto& arg = ctx.argmax[ii];
        arg.resize(static_cast<size_t>(out.numel()));
        const int64_t in_sz = op.in_numel(), out_sz = op.out_numel();
        for (int64_t im = 0; im < n; ++im) {
          const T* x = in.data() + im * in_sz;
          T* y = out.data() + im * out_sz;
          int32_t* am = arg.data() + im * out_sz;
          int64_t o = 0;
          for (int64_t c = 0; c < op.in_c; ++c) {
            const T* xc = x + c * op.in_h * op.in_w;
            for (int64_t oy = 0; oy < op.out_h; ++oy) {
              for (int64_t ox = 0; ox < op.out_w; ++ox, ++o) {
                const int64_t y0 = oy * op.stride, x0 = ox * op.stride;
                T best = xc[y0 * op.in_w + x0];
                int64_t besti = c * op.in_h * op.in_w + y0 * op.in_w + x0;
                for (int ky = 0; ky < op.kernel; ++ky)
                  for (int kx = 0; kx < op.kernel; ++kx) {
                    const int64_t iy = y0 + ky, ix = x0 + kx;
                    const T v = xc[iy * op.in_w + ix];
                    if (v > best) {
                      best = v;
                      besti = c * op.in_h * op.in_w + iy * op.in_w + ix;
                    }
                  }
                y[o] = best;
                am[o] = static_cast<int32_t>(besti);
              }
            }
          }
        }
        break;
      }
      case OpKind::avgpool: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        const int64_t in_sz = op.in_numel(), out_sz = op.out_numel();
        if (op.global_pool) {
          const T inv = static_cast<T>(1.0 / double(op.in_h * op.in_w));
          for (int64_t im = 0; im < n; ++im) {
            const T* x = in.data() + im * in_sz;
            T* y = out.data() + im * out_sz;
            for (int64_t c = 0; c < op.in_c; ++c) {
              const T* xc = x + c * op.in_h * op.in_w;
              T s{};
              const int64_t hw = op.in_h * op.in_w;
              for (int64_t i = 0; i < hw; ++i) s += xc[i];
              y[c] = s * inv;
            }
          }
        } else {
          const T inv = static_cast<T>(1.0 / double(op.kernel * op.kernel));
          for (int64_t im = 0; im < n; ++im) {
            const T* x = in.data() + im * in_sz;
            T* y = out.data() + im * out_sz;
            int64_t o = 0;
            for (int64_t c = 0; c < op.in_c; ++c) {
              const T* xc = x + c * op.in_h * op.in_w;
              for (int64_t oy = 0; oy < op.out_h; ++oy)
                for (int64_t ox = 0; ox < op.out_w; ++ox, ++o) {
                  T s{};
                  for (int ky = 0; ky < op.kernel; ++ky)
                    for (int kx = 0; kx < op.kernel; ++kx)
                      s += xc[(oy * op.stride + ky) * op.in_w +
                              (ox * op.stride + kx)];
                  y[o] = s * inv;
                }
            }
          }
        }
        break;
      }
      case OpKind::batchnorm: {
        Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
        auto& cache = ctx.bn[ii];
        const int64_t C = op.in_c;
        const int64_t hw = op.in_h ? op.in_h * op.in_w : 1;
        const int64_t in_sz = op.in_numel();
        cache.mean.assign(static_cast<size_t>(C), T{});
        cache.inv_std.assign(static_cast<size_t>(C), T{});
        const auto& gamma = tensor(op.gamma);
        const auto& beta = tensor(op.beta);
        const bool bn_frozen =
            frozen && frozen->count(
                          entries[static_cast<size_t>(op.gamma)].name);
        const bool batch_stats = (mode == Mode::train) && !bn_frozen;
        cache.used_batch_stats = batch_stats;
        if (batch_stats) {
          const int64_t m_count = n * hw;
          cache.new_running_mean.resize(static_cast<size_t>(C));
          cache.new_running_var.resize(static_cast<size_t>(C));
          const auto& rm = tensor(op.rmean);
          const auto& rv = tensor(op.rvar);
          for (int64_t c = 0; c < C; ++c) {
            T s{};
            for (int64_t im = 0; im < n; ++im) {
              const T* xc = in.data() + im * in_sz + c * hw;
              for (int64_t i = 0; i < hw; ++i) s += xc[i];
            }
            const T mu = s / static_cast<T>(m_count);
            T v{};
            for (int64_t im = 0; im < n; ++im) {
              const T* xc = in.data() + im * in_sz + c * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T d = xc[i] - mu;
                v += d * d;
              }
            }
            const T var = v / static_cast<T>(m_count);
            cache.mean[c] = mu;
            cache.inv_std[c] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(var) + detail::kBnEps));
            const double mom = detail::kBnMomentum;
            const double unbiased =
                m_count > 1 ? static_cast<double>(var) * m_count / (m_count - 1)
                            : static_cast<double>(var);
            cache.new_running_mean[c] = static_cast<T>(
                (1.0 - mom) * static_cast<double>(rm.data()[c]) +
                mom * static_cast<double>(mu));
            cache.new_running_var[c] = static_cast<T>(
                (1.0 - mom) * static_cast<double>(rv.data()[c]) +
                mom * unbiased);
          }
        } else {
          const auto& rm = tensor(op.rmean);
          const auto& rv = tensor(op.rvar);
          for (int64_t c = 0; c < C; ++c) {
            cache.mean[c] = rm.data()[c];
            cache.inv_std[c] = static_cast<T>(
                1.0 /
                std::sqrt(static_cast<double>(rv.data()[c]) + detail::kBnEps));
          }
        }
        for (int64_t im = 0; im < n; ++im) {
          const T* x = in.data() + im * in_sz;
          T* y = out.data() + im * in_sz;
          for (int64_t c = 0; c < C; ++c) {
            const T mu = cache.mean[c];
            const T is = cache.inv_std[c];
            const T g = gamma.data()[c] * is;
            const T b = beta.data()[c];
            const T* xc = x + c * hw;
            T* yc = y + c * hw;
            for (int64_t i = 0; i < hw; ++i) yc[i] = (xc[i] - mu) * g + b;
          }
        }
        break;
      }
      case OpKind::softmax_xent: {
        const int64_t k = op.in_c;
        if (ctx.probs.numel() != n * k) ctx.probs = Tensor<T>(Shape{n, k});
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          const int label = ctx.labels[static_cast<size_t>(i)];
          if (label < 0 || label >= k)
            throw contract_error("label out of range: " +
                                 std::to_string(label));
          const T* row = in.data() + i * k;
          T mx = row[0];
          for (int64_t j = 1; j < k; ++j)
            if (row[j] > mx) mx = row[j];
          double denom = 0.0;
          T* prow = ctx.probs.data() + i * k;
          for (int64_t j = 0; j < k; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - mx));
            prow[j] = static_cast<T>(e);
            denom += e;
          }
          const double inv = 1.0 / denom;
          for (int64_t j = 0; j < k; ++j)
            prow[j] = static_cast<T>(static_cast<double>(prow[j]) * inv);
          total -= static_cast<double>(row[label] - mx) - std::log(denom);
        }
        ctx.loss = total / static_cast<double>(n);
        if (!std::isfinite(ctx.loss))
          throw numeric_error("non-finite loss in " + op.name);
        break;
      }
    }
    if (op.out >= 0) {
      const Tensor<T>& out = ctx.slots[static_cast<size_t>(op.out)];
      if (!all_finite(out))
        throw numeric_error("non-finite activation in layer " + op.name);
    }
  }
  return {ctx.loss, &ctx.slots[static_cast<size_t>(plan_.logits_slot)]};
}

template <typename T>
void Network<T>::commit_bn_updates(ParameterSet<T>& params,
                                   const RunCtx<T>& ctx) const {
  for (size_t ii = 0; ii < plan_.instrs.size(); ++ii) {
    const auto& op = plan_.instrs[ii];
    if (op.op != detail::OpKind::batchnorm) continue;
    const auto& cache = ctx.bn[ii];
    if (!cache.used_batch_stats) continue;
    auto& rm = params.entries()[static_cast<size_t>(op.rmean)].value;
    auto& rv = params.entries()[static_cast<size_t>(op.rvar)].value;
    for (int64_t c = 0; c < op.in_c; ++c) {
      rm.data()[c] = cache.new_running_mean[static_cast<size_t>(c)];
      rv.data()[c] = cache.new_running_var[static_cast<size_t>(c)];
    }
  }
}

template <typename T>
void Network<T>::backward(const ParameterSet<T>& params, RunCtx<T>& ctx,
                          ParameterSet<T>& grads,
                          const FrozenSet* frozen) const {
  const int64_t n = ctx.batch;
  if (n == 0) throw contract_error("backward: run forward first");
  const auto& entries = params.entries();
  auto tensor = [&](int idx) -> const Tensor<T>& {
    return entries[static_cast<size_t>(idx)].value;
  };
  auto gtensor = [&](int idx) -> Tensor<T>& {
    return grads.entries()[static_cast<size_t>(idx)].value;
  };

  // Lowest instruction that still needs gradients; nothing below it is
  // updatable, so input-gradient propagation stops there.
  size_t stop = plan_.instrs.size();
  for (size_t ii = 0; ii < plan_.instrs.size(); ++ii) {
    const auto& op = plan_.instrs[ii];
    for (int idx : {op.weight, op.bias, op.gamma, op.beta})
      if (tensor_updatable(params, idx, frozen)) {
        stop = ii;
        break;
      }
    if (stop == ii) break;
  }
  if (stop == plan_.instrs.size()) return;  // everything frozen

  std::vector<Tensor<T>> dslots(static_cast<size_t>(plan_.num_slots));
  auto dslot = [&](int idx) -> Tensor<T>& {
    auto& t = dslots[static_cast<size_t>(idx)];
    if (t.numel() == 0) {
      t = Tensor<T>(ctx.slots[static_cast<size_t>(idx)].shape());
    }
    return t;
  };

  for (size_t ri = plan_.instrs.size(); ri-- > stop;) {
    const auto& op = plan_.instrs[ri];
    using detail::OpKind;
    const Tensor<T>& in = ctx.slots[static_cast<size_t>(op.in0)];
    switch (op.op) {
      case OpKind::softmax_xent: {
        Tensor<T>& dlogits = dslot(op.in0);
        const int64_t k = op.in_c;
        const T invn = static_cast<T>(1.0 / double(n));
        for (int64_t i = 0; i < n; ++i) {
          const T* prow = ctx.probs.data() + i * k;
          T* drow = dlogits.data() + i * k;
          const int label = ctx.labels[static_cast<size_t>(i)];
          for (int64_t j = 0; j < k; ++j) drow[j] += prow[j] * invn;
          drow[label] -= invn;
        }
        break;
      }
      case OpKind::dense: {
        const Tensor<T>& dy = dslot(op.out);
        const bool w_upd = tensor_updatable(params, op.weight, frozen);
        const bool b_upd = tensor_updatable(params, op.bias, frozen);
        if (b_upd) {
          T* db = gtensor(op.bias).data();
          for (int64_t i = 0; i < n; ++i) {
            const T* row = dy.data() + i * op.out_c;
            for (int64_t o = 0; o < op.out_c; ++o) db[o] += row[o];
          }
        }
        if (w_upd) {
          // dW(out,in) += dY^T X
          detail::gemm_atb_acc(dy.data(), in.data(), gtensor(op.weight).data(),
                               n, op.out_c, op.in_c);
        }
        if (ri > stop) {
          Tensor<T>& dx = dslot(op.in0);
          detail::gemm_acc(dy.data(), tensor(op.weight).data(), dx.data(), n,
                           op.out_c, op.in_c);
        }
        break;
      }
      case OpKind::conv: {
        const Tensor<T>& dy = dslot(op.out);
        const bool w_upd = tensor_updatable(params, op.weight, frozen);
        const bool b_upd = tensor_updatable(params, op.bias, frozen);
        const bool x_need = ri > stop;
        Tensor<T>* dx = x_need ? &dslot(op.in0) : nullptr;
        detail::conv_backward(op, in.data(), tensor(op.weight).data(),
                              dy.data(), dx ? dx->data() : nullptr,
                              w_upd ? gtensor(op.weight).data() : nullptr,
                              b_upd ? gtensor(op.bias).data() : nullptr, n,
                              ctx.scratch_a, ctx.scratch_b);
        break;
      }
      case OpKind::relu: {
        if (ri == stop) break;
        const Tensor<T>& dy = dslot(op.out);
        Tensor<T>& dx = dslot(op.in0);
        const T* x = in.data();
        const T* d = dy.data();
        T* q = dx.data();
        const int64_t m = in.numel();
        for (int64_t i = 0; i < m; ++i)
          if (x[i] > T{}) q[i] += d[i];
        break;
      }
      case OpKind::flatten: {
        if (ri == stop) break;
        const Tensor<T>& dy = dslot(op.out);
        Tensor<T>& dx = dslot(op.in0);
        T* q = dx.data();
        const T* d = dy.data();
        const int64_t m = dy.numel();
        for (int64_t i = 0; i < m; ++i) q[i] += d[i];
        break;
      }
      case OpKind::add: {
        if (ri == stop) break;
        const Tensor<T>& dy = dslot(op.out);
        Tensor<T>& da = dslot(op.in0);
        Tensor<T>& db2 = dslot(op.in1);
        const T* d = dy.data();
        T* qa = da.data();
        T* qb = db2.data();
        const int64_t m = dy.numel();
        for (int64_t i = 0; i < m; ++i) {
          qa[i] += d[i];
          qb[i] += d[i];
        }
        break;
      }
      case OpKind::maxpool: {
        if (ri == stop) break;
        const Tensor<T>& dy = dslot(op.out);
        Tensor<T>& dx = dslot(op.in0);
        const auto& arg = ctx.argmax[ri];
        const int64_t in_sz = op.in_numel(), out_sz = op.out_numel();
        for (int64_t im = 0; im < n; ++im) {
          const T* d = dy.data() + im * out_sz;
          const int32_t* am = arg.data() + im * out_sz;
          T* q = dx.data() + im * in_sz;
          for (int64_t o = 0; o < out_sz; ++o) q[am[o]] += d[o];
        }
        break;
      }
      case OpKind::avgpool: {
        if (ri == stop) break;
        const Tensor<T>& dy = dslot(op.out);
        Tensor<T>& dx = dslot(op.in0);
        const int64_t in_sz = op.in_numel(), out_sz = op.out_numel();
        if (op.global_pool) {
          const T inv = static_cast<T>(1.0 / double(op.in_h * op.in_w));
          for (int64_t im = 0; im < n; ++im) {
            const T* d = dy.data() + im * out_sz;
            T* q = dx.data() + im * in_sz;
            for (int64_t c = 0; c < op.in_c; ++c) {
              const T g = d[c] * inv;
              T* qc = q + c * op.in_h * op.in_w;
              const int64_t hw = op.in_h * op.in_w;
              for (int64_t i = 0; i < hw; ++i) qc[i] += g;
            }
          }
        } else {
          const T inv = static_cast<T>(1.0 / double(op.kernel * op.kernel));
          for (int64_t im = 0; im < n; ++im) {
            const T* d = dy.data() + im * out_sz;
            T* q = dx.data() + im * in_sz;
            int64_t o = 0;
            for (int64_t c = 0; c < op.in_c; ++c) {
              T* qc = q + c * op.in_h * op.in_w;
              for (int64_t oy = 0; oy < op.out_h; ++oy)
                for (int64_t ox = 0; ox < op.out_w; ++ox, ++o) {
                  const T g = d[o] * inv;
                  for (int ky = 0; ky < op.kernel; ++ky)
                    for (int kx = 0; kx < op.kernel; ++kx)
                      qc[(oy * op.stride + ky) * op.in_w +
                         (ox * op.stride + kx)] += g;
                }
            }
          }
        }
        break;
      }
      case OpKind::batchnorm: {
        const Tensor<T>& dy = dslot(op.out);
        const auto& cache = ctx.bn[ri];
        const int64_t C = op.in_c;
        const int64_t hw = op.in_h ? op.in_h * op.in_w : 1;
        const int64_t in_sz = op.in_numel();
        const int64_t m_count = n * hw;
        const bool g_upd = tensor_updatable(params, op.gamma, frozen);
        const bool b_upd = tensor_updatable(params, op.beta, frozen);
        const bool x_need = ri > stop;
        const auto& gamma = tensor(op.gamma);
        for (int64_t c = 0; c < C; ++c) {
          const T mu = cache.mean[static_cast<size_t>(c)];
          const T is = cache.inv_std[static_cast<size_t>(c)];
          // Two reduced sums feed both the parameter grads and dx.
          T sum_dy{}, sum_dy_xhat{};
          for (int64_t im = 0; im < n; ++im) {
            const T* xc = in.data() + im * in_sz + c * hw;
            const T* dc = dy.data() + im * in_sz + c * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sum_dy += dc[i];
              sum_dy_xhat += dc[i] * (xc[i] - mu) * is;
            }
          }
          if (g_upd) gtensor(op.gamma).data()[c] += sum_dy_xhat;
          if (b_upd) gtensor(op.beta).data()[c] += sum_dy;
          if (!x_need) continue;
          Tensor<T>& dx = dslot(op.in0);
          const T g_is = gamma.data()[c] * is;
          if (cache.used_batch_stats) {
            const T inv_m = static_cast<T>(1.0 / double(m_count));
            for (int64_t im = 0; im < n; ++im) {
              const T* xc = in.data() + im * in_sz + c * hw;
              const T* dc = dy.data() + im * in_sz + c * hw;
              T* qc = dx.data() + im * in_sz + c * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T xhat = (xc[i] - mu) * is;
                qc[i] += g_is * (dc[i] - sum_dy * inv_m -
                                 xhat * sum_dy_xhat * inv_m);
              }
            }
          } else {
            for (int64_t im = 0; im < n; ++im) {
              const T* dc = dy.data() + im * in_sz + c * hw;
              T* qc = dx.data() + im * in_sz + c * hw;
              for (int64_t i = 0; i < hw; ++i) qc[i] += g_is * dc[i];
            }
          }
        }
        break;
      }
    }
  }
}

}  // namespace ltx
