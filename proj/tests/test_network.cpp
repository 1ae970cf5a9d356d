#include <doctest.h>

#include <cmath>

#include "ltx/gradcheck.hpp"
#include "ltx/init.hpp"
#include "ltx/network.hpp"
#include "ltx/rng.hpp"

using namespace ltx;

namespace {

// Small net touching every op kind: conv+bias, bn, relu, maxpool, windowed
// and global avgpool, a projecting residual block, dense head.
Architecture tiny_conv_net() {
  Architecture a;
  a.name = "tiny";
  a.input = {2, 8, 8};
  a.num_classes = 3;
  a.layers.push_back(conv_layer("c0", 2, 3, 3, 1, 1, true));
  a.layers.push_back(bn_layer("bn0", 3));
  a.layers.push_back(relu_layer("r0"));
  a.layers.push_back(maxpool_layer("pool0", 2, 2));  // 3x4x4
  a.layers.push_back(residual_layer("res1", 3, 4, 2));  // 4x2x2, projection
  a.layers.push_back(residual_layer("res2", 4, 4, 1));  // identity shortcut
  a.layers.push_back(global_avgpool_layer("gap"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, 4, 3);
  validate_architecture(a);
  return a;
}

template <typename T>
Tensor<T> random_batch(const Architecture& a, int64_t n, uint64_t seed) {
  Tensor<T> x(Shape{n, a.input.c, a.input.h, a.input.w});
  Rng rng(seed);
  for (int64_t i = 0; i < x.numel(); ++i)
    x.data()[i] = static_cast<T>(rng.normal());
  return x;
}

std::vector<int> random_labels(int64_t n, int64_t classes, uint64_t seed) {
  std::vector<int> y(static_cast<size_t>(n));
  Rng rng(seed);
  for (auto& v : y) v = static_cast<int>(rng.uniform_int(classes));
  return y;
}

}  // namespace

TEST_CASE("compiled plan covers the whole architecture") {
  auto arch = make_preset("micro-resnet", {3, 16, 16}, 10);
  Network<float> net(arch);
  // 19 convs total: stem + 2 per block (9 blocks) part of plan via layout.
  int64_t conv_kernels = 0;
  for (const auto& d : net.layout())
    if (d.flags.role == TensorRole::conv_weight) ++conv_kernels;
  CHECK(conv_kernels == 1 + 9 * 2 + 2);  // stem + block convs + 2 projections
  CHECK(total_param_count(arch) > 0);
}

TEST_CASE("forward rejects mismatched batches and labels") {
  auto arch = tiny_conv_net();
  auto params = init_params<float>(arch, {}, 7);
  Network<float> net(arch);
  RunCtx<float> ctx;
  Tensor<float> bad(Shape{2, 1, 8, 8});
  std::vector<int> y{0, 1};
  CHECK_THROWS_AS(net.forward(params, bad, y, Mode::eval, ctx),
                  contract_error);
  auto x = random_batch<float>(arch, 2, 11);
  std::vector<int> short_y{0};
  CHECK_THROWS_AS(net.forward(params, x, short_y, Mode::eval, ctx),
                  contract_error);
  std::vector<int> oob{0, 5};
  CHECK_THROWS_AS(net.forward(params, x, oob, Mode::train, ctx),
                  contract_error);
}

TEST_CASE("forward flags non-finite activations with the layer name") {
  auto arch = tiny_conv_net();
  auto params = init_params<float>(arch, {}, 7);
  params.at("c0.weight").data()[0] = std::numeric_limits<float>::infinity();
  Network<float> net(arch);
  RunCtx<float> ctx;
  auto x = random_batch<float>(arch, 2, 11);
  auto y = random_labels(2, 3, 12);
  try {
    net.forward(params, x, y, Mode::eval, ctx);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("c0") != std::string::npos);
  }
}

TEST_CASE("softmax cross-entropy matches a direct computation") {
  // One flat "image", identity-free path: flatten -> dense -> loss with
  // hand-picked weights, so the loss is computable by hand.
  Architecture a;
  a.name = "logit-probe";
  a.input = {1, 1, 3};
  a.num_classes = 3;
  a.layers.push_back(flatten_layer("flatten"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, 3, 3);
  validate_architecture(a);
  auto params = init_params<double>(a, {}, 0);
  // Identity weight matrix: logits == inputs.
  auto& w = params.at("head.fc.weight");
  w.fill(0.0);
  for (int i = 0; i < 3; ++i) w.data()[i * 3 + i] = 1.0;
  params.at("head.fc.bias").fill(0.0);

  Tensor<double> x(Shape{2, 1, 1, 3});
  const double logits[2][3] = {{1.0, 2.0, 3.0}, {-1.0, 0.0, 1.0}};
  for (int n = 0; n < 2; ++n)
    for (int j = 0; j < 3; ++j) x.data()[n * 3 + j] = logits[n][j];
  std::vector<int> y{2, 0};

  Network<double> net(a);
  RunCtx<double> ctx;
  auto out = net.forward(params, x, y, Mode::eval, ctx);

  double expect = 0.0;
  for (int n = 0; n < 2; ++n) {
    double denom = 0.0;
    for (int j = 0; j < 3; ++j) denom += std::exp(logits[n][j]);
    expect -= std::log(std::exp(logits[n][y[n]]) / denom);
  }
  expect /= 2.0;
  CHECK(out.loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("forward is bit-identical across repeated calls") {
  auto arch = tiny_conv_net();
  auto params = init_params<float>(arch, {}, 21);
  Network<float> net(arch);
  auto x = random_batch<float>(arch, 3, 5);
  auto y = random_labels(3, 3, 6);
  RunCtx<float> ctx1, ctx2;
  auto o1 = net.forward(params, x, y, Mode::train, ctx1);
  auto o2 = net.forward(params, x, y, Mode::train, ctx2);
  CHECK(o1.loss == o2.loss);
  CHECK(bit_equal(*o1.logits, *o2.logits));
}

TEST_CASE("analytic gradients match central differences (conv/bn/residual)") {
  auto arch = tiny_conv_net();
  auto params = init_params<double>(arch, {}, 3);
  Network<double> net(arch);
  auto x = random_batch<double>(arch, 4, 17);
  auto y = random_labels(4, 3, 18);

  SUBCASE("train mode (batch statistics)") {
    RunCtx<double> ctx;
    net.forward(params, x, y, Mode::train, ctx);
    auto grads = params.zeros_like();
    net.backward(params, ctx, grads);
    auto fd = finite_diff_gradient(net, params, x, y, 1e-5, Mode::train);
    CHECK(max_grad_rel_error(grads, fd) < 1e-5);
    CHECK(max_grad_abs_error(grads, fd) < 1e-8);
  }
  SUBCASE("eval mode (running statistics)") {
    RunCtx<double> ctx;
    net.forward(params, x, y, Mode::eval, ctx);
    auto grads = params.zeros_like();
    net.backward(params, ctx, grads);
    auto fd = finite_diff_gradient(net, params, x, y, 1e-5, Mode::eval);
    CHECK(max_grad_rel_error(grads, fd) < 1e-5);
  }
}

TEST_CASE("analytic gradients match central differences (dense nets)") {
  auto arch = make_preset("fc-small", {1, 4, 4}, 4);
  auto params = init_params<double>(arch, {}, 9);
  Network<double> net(arch);
  Tensor<double> x = random_batch<double>(arch, 5, 30);
  auto y = random_labels(5, 4, 31);
  RunCtx<double> ctx;
  net.forward(params, x, y, Mode::train, ctx);
  auto grads = params.zeros_like();
  net.backward(params, ctx, grads);
  auto fd = finite_diff_gradient(net, params, x, y, 1e-5);
  CHECK(max_grad_rel_error(grads, fd) < 1e-5);
  CHECK(max_grad_abs_error(grads, fd) < 1e-8);
}

TEST_CASE("frozen tensors receive no gradient and stop propagation") {
  auto arch = tiny_conv_net();
  auto params = init_params<double>(arch, {}, 4);
  Network<double> net(arch);
  auto x = random_batch<double>(arch, 3, 40);
  auto y = random_labels(3, 3, 41);

  FrozenSet frozen;
  for (const auto& d : net.layout())
    if (d.name.rfind("head.", 0) != 0) frozen.insert(d.name);

  RunCtx<double> ctx;
  net.forward(params, x, y, Mode::train, ctx, &frozen);
  auto grads = params.zeros_like();
  net.backward(params, ctx, grads, &frozen);

  for (const auto& e : grads.entries()) {
    const bool is_head = e.name.rfind("head.", 0) == 0;
    if (!is_head) {
      for (int64_t i = 0; i < e.value.numel(); ++i)
        CHECK(e.value.data()[i] == 0.0);
    }
  }
  // Head grads still match finite differences under the freeze.
  auto fd = finite_diff_gradient(net, params, x, y, 1e-5, Mode::train, &frozen);
  CHECK(max_grad_rel_error(grads, fd) < 1e-5);
}

TEST_CASE("frozen batchnorm uses running statistics even in train mode") {
  auto arch = tiny_conv_net();
  auto params = init_params<float>(arch, {}, 5);
  // Make running stats distinctive so the two paths differ.
  params.at("bn0.running_mean").fill(0.25f);
  params.at("bn0.running_var").fill(4.0f);
  Network<float> net(arch);
  auto x = random_batch<float>(arch, 3, 50);
  auto y = random_labels(3, 3, 51);

  FrozenSet frozen;
  for (const auto& d : net.layout())
    if (d.name.rfind("head.", 0) != 0) frozen.insert(d.name);

  RunCtx<float> trained, frozen_train, evaled;
  net.forward(params, x, y, Mode::train, trained);
  net.forward(params, x, y, Mode::train, frozen_train, &frozen);
  net.forward(params, x, y, Mode::eval, evaled);
  CHECK(frozen_train.loss == evaled.loss);
  CHECK(frozen_train.loss != trained.loss);
}

TEST_CASE("batchnorm running statistics update by exponential moving average") {
  Architecture a;
  a.name = "bn-probe";
  a.input = {2, 2, 2};
  a.num_classes = 2;
  a.layers.push_back(bn_layer("bn", 2));
  a.layers.push_back(global_avgpool_layer("gap"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, 2, 2);
  validate_architecture(a);
  auto params = init_params<double>(a, {}, 1);
  Network<double> net(a);

  Tensor<double> x(Shape{2, 2, 2, 2});
  Rng rng(99);
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
  std::vector<int> y{0, 1};

  RunCtx<double> ctx;
  net.forward(params, x, y, Mode::train, ctx);
  net.commit_bn_updates(params, ctx);

  // Oracle: EMA with momentum 0.1, unbiased variance, computed directly.
  for (int c = 0; c < 2; ++c) {
    double s = 0.0;
    int cnt = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 4; ++i) {
        s += x.data()[n * 8 + c * 4 + i];
        ++cnt;
      }
    const double mu = s / cnt;
    double v = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 4; ++i) {
        const double d = x.data()[n * 8 + c * 4 + i] - mu;
        v += d * d;
      }
    const double unbiased = v / (cnt - 1);
    const double rm = 0.9 * 0.0 + 0.1 * mu;
    const double rv = 0.9 * 1.0 + 0.1 * unbiased;
    CHECK(params.at("bn.running_mean").data()[c] ==
          doctest::Approx(rm).epsilon(1e-12));
    CHECK(params.at("bn.running_var").data()[c] ==
          doctest::Approx(rv).epsilon(1e-12));
  }
}

TEST_CASE("maxpool ties resolve to the lowest flat index") {
  Architecture a;
  a.name = "pool-probe";
  a.input = {1, 2, 2};
  a.num_classes = 2;
  a.layers.push_back(maxpool_layer("pool", 2, 2));
  a.layers.push_back(flatten_layer("flatten"));
  a.head = make_head({HeadSpec::Kind::linear, 0}, 1, 2);
  validate_architecture(a);
  auto params = init_params<double>(a, {}, 1);
  params.at("head.fc.weight").fill(1.0);
  Network<double> net(a);

  Tensor<double> x(Shape{1, 1, 2, 2});
  x.fill(0.5);  // all equal: the first (lowest flat index) entry must win
  std::vector<int> y{0};
  RunCtx<double> ctx;
  net.forward(params, x, y, Mode::train, ctx);
  REQUIRE(ctx.argmax[0].size() == 1);
  CHECK(ctx.argmax[0][0] == 0);

  x.data()[1] = 0.7;  // duplicate max at flat indices 1 and 2
  x.data()[2] = 0.7;
  net.forward(params, x, y, Mode::train, ctx);
  CHECK(ctx.argmax[0][0] == 1);
}

TEST_CASE("head replacement keeps the body bit-identical") {
  auto arch = tiny_conv_net();
  auto params = init_params<float>(arch, {}, 77);
  auto [arch2, params2] =
      replace_head<float>(arch, params, {HeadSpec::Kind::fc2, 96}, 5, 77);
  CHECK(arch2.num_classes == 5);
  for (const auto& e : params.entries()) {
    if (e.name.rfind("head.", 0) == 0) continue;
    CHECK(bit_equal(e.value, params2.at(e.name)));
  }
  CHECK(params2.has("head.fc1.weight"));
  CHECK(params2.has("head.fc2.weight"));
  CHECK_FALSE(params2.has("head.fc.weight"));

  // Same-arity replacement with the same seed still re-randomizes the head.
  auto [arch3, params3] =
      replace_head<float>(arch, params, {HeadSpec::Kind::linear, 0}, 3, 77);
  CHECK(arch3.num_classes == 3);
  CHECK_FALSE(
      bit_equal(params.at("head.fc.weight"), params3.at("head.fc.weight")));
}

TEST_CASE("fc2 head gradients also check out") {
  auto arch = tiny_conv_net();
  arch.head = make_head({HeadSpec::Kind::fc2, 8}, 4, 3);
  validate_architecture(arch);
  auto params = init_params<double>(arch, {}, 13);
  Network<double> net(arch);
  auto x = random_batch<double>(arch, 2, 60);
  auto y = random_labels(2, 3, 61);
  RunCtx<double> ctx;
  net.forward(params, x, y, Mode::train, ctx);
  auto grads = params.zeros_like();
  net.backward(params, ctx, grads);
  auto fd = finite_diff_gradient(net, params, x, y, 1e-5);
  CHECK(max_grad_rel_error(grads, fd) < 1e-5);
}
