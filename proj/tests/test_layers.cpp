#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "normlab/blocks.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/layers.hpp"

using namespace normlab;

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(1);
  const Tensor4 x = Tensor4::randn({2, 1, 4, 4}, rng);
  Conv2d conv(1, 1, 1, 1, 0, true, false);
  conv.weight().value[0] = 1;
  conv.bias().value[0] = 0;
  const Tensor4 y = conv.forward(x, Mode::train);
  REQUIRE(y.same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d 3x3 all-ones kernel on constant input") {
  const Tensor4 x(1, 1, 5, 5, 1);
  Conv2d conv(1, 1, 3, 1, 1, false, false);
  std::fill(conv.weight().value.begin(), conv.weight().value.end(), real(1));
  const Tensor4 y = conv.forward(x, Mode::train);
  CHECK(y.at(0, 0, 2, 2) == real(9));  // interior: full 3x3 support
  CHECK(y.at(0, 0, 0, 0) == real(4));  // corner: zero padding
  CHECK(y.at(0, 0, 0, 2) == real(6));  // edge
}

TEST_CASE("conv2d zero kernel with bias") {
  Rng rng(2);
  const Tensor4 x = Tensor4::randn({2, 3, 4, 4}, rng);
  Conv2d conv(3, 2, 3, 1, 1, true, false);
  conv.bias().value[0] = real(0.5);
  conv.bias().value[1] = real(-2);
  const Tensor4 y = conv.forward(x, Mode::train);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 16; ++i) {
      CHECK(y.data()[y.index(b, 0, 0, 0) + i] == real(0.5));
      CHECK(y.data()[y.index(b, 1, 0, 0) + i] == real(-2));
    }
}

TEST_CASE("conv2d rejects channel mismatch and bad geometry") {
  const Tensor4 x(1, 3, 4, 4, 0);
  Conv2d conv(4, 2, 3, 1, 1, false, false);
  CHECK_THROWS_AS(conv.forward(x, Mode::train), InvalidShape);
  CHECK_THROWS_AS(Conv2d(3, 2, 4, 1, 1, false, false), InvalidShape);  // even k
  Conv2d big(3, 2, 3, 1, 0, false, false);
  const Tensor4 tiny(1, 3, 2, 2, 0);
  CHECK_THROWS_AS(big.forward(tiny, Mode::train), InvalidShape);
}

TEST_CASE("relu definition and dead-neuron backward") {
  Tensor4 x(1, 1, 1, 2);
  x.data()[0] = -1;
  x.data()[1] = 2;
  Relu relu;
  const Tensor4 y = relu.forward(x, Mode::train);
  CHECK(y.data()[0] == real(0));
  CHECK(y.data()[1] == real(2));

  const Tensor4 neg(2, 2, 2, 2, -3);
  Relu dead;
  const Tensor4 yn = dead.forward(neg, Mode::train);
  const Tensor4 g(2, 2, 2, 2, 1);
  const Tensor4 dx = dead.backward(g);
  for (std::size_t i = 0; i < yn.size(); ++i) {
    CHECK(yn.data()[i] == real(0));
    CHECK(dx.data()[i] == real(0));
  }

  Rng rng(3);
  Tensor4 pos = Tensor4::randn({1, 2, 3, 3}, rng);
  for (auto& v : pos.raw()) v = std::fabs(v) + real(0.1);
  Relu ident;
  const Tensor4 yp = ident.forward(pos, Mode::train);
  for (std::size_t i = 0; i < pos.size(); ++i)
    CHECK(yp.data()[i] == pos.data()[i]);
}

TEST_CASE("avgpool2 window mean and backward mass conservation") {
  Tensor4 x(1, 1, 2, 2);
  x.data()[0] = 1;
  x.data()[1] = 2;
  x.data()[2] = 3;
  x.data()[3] = 4;
  AvgPool2 pool;
  const Tensor4 y = pool.forward(x, Mode::train);
  CHECK(y.at(0, 0, 0, 0) == real(2.5));

  const Tensor4 c(2, 3, 4, 4, -1.5);
  AvgPool2 pc;
  const Tensor4 yc = pc.forward(c, Mode::train);
  for (std::size_t i = 0; i < yc.size(); ++i) CHECK(yc.data()[i] == real(-1.5));

  // each window cell receives g/4; total mass is conserved
  Rng rng(5);
  const Tensor4 xr = Tensor4::randn({2, 3, 6, 6}, rng);
  AvgPool2 pr;
  pr.forward(xr, Mode::train);
  const Tensor4 g = Tensor4::randn({2, 3, 3, 3}, rng);
  const Tensor4 dx = pr.backward(g);
  CHECK(dx.at(0, 0, 0, 0) == g.at(0, 0, 0, 0) * real(0.25));
  acc_t up = 0, down = 0;
  for (std::size_t i = 0; i < g.size(); ++i) up += g.data()[i];
  for (std::size_t i = 0; i < dx.size(); ++i) down += dx.data()[i];
  CHECK(down == doctest::Approx(up).epsilon(1e-12));

  const Tensor4 odd(1, 1, 3, 4, 0);
  AvgPool2 po;
  CHECK_THROWS_AS(po.forward(odd, Mode::train), InvalidShape);
}

TEST_CASE("global average pooling") {
  const Tensor4 c(2, 3, 4, 4, 7);
  GlobalAvgPool gap;
  const Tensor4 yc = gap.forward(c, Mode::train);
  CHECK(yc.dims() == Dims4{2, 3, 1, 1});
  for (std::size_t i = 0; i < yc.size(); ++i) CHECK(yc.data()[i] == real(7));

  Tensor4 single(1, 1, 1, 1);
  single.data()[0] = real(-2.5);
  GlobalAvgPool g1;
  CHECK(g1.forward(single, Mode::train).data()[0] == real(-2.5));

  Tensor4 two(1, 1, 1, 2);
  two.data()[0] = 1;
  two.data()[1] = 3;
  GlobalAvgPool g2;
  CHECK(g2.forward(two, Mode::train).data()[0] == real(2));
}

TEST_CASE("linear layer basics") {
  // identity weight, zero bias
  Linear ident(3, 3, true);
  for (int i = 0; i < 3; ++i) ident.weight().value[i * 3 + i] = 1;
  Rng rng(6);
  const Tensor4 x = Tensor4::randn({2, 3, 1, 1}, rng);
  const Tensor4 y = ident.forward(x, Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

  // zero weight: rows of bias
  Linear zero(3, 2, true);
  zero.bias().value[0] = real(1.5);
  zero.bias().value[1] = real(-0.5);
  const Tensor4 yb = zero.forward(x, Mode::train);
  CHECK(yb.at(0, 0, 0, 0) == real(1.5));
  CHECK(yb.at(1, 1, 0, 0) == real(-0.5));

  // x=[1,2], w=[[1,1]], b=[0] -> [3]
  Linear hand(2, 1, true);
  hand.weight().value[0] = 1;
  hand.weight().value[1] = 1;
  Tensor4 xv(1, 2, 1, 1);
  xv.data()[0] = 1;
  xv.data()[1] = 2;
  CHECK(hand.forward(xv, Mode::train).data()[0] == real(3));

  CHECK_THROWS_AS(hand.forward(x, Mode::train), InvalidShape);
}

TEST_CASE("softmax cross-entropy closed forms") {
  // uniform logits, K=10 -> ln 10
  const Tensor4 uniform(3, 10, 1, 1, real(0.7));
  const SoftmaxXentResult ru = softmax_xent(uniform, {1, 5, 9});
  CHECK(ru.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // single class -> loss 0, zero gradient
  const Tensor4 one(2, 1, 1, 1, real(4));
  const SoftmaxXentResult r1 = softmax_xent(one, {0, 0});
  CHECK(r1.loss == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r1.dlogits.data()[0] == doctest::Approx(0.0).epsilon(1e-15));

  // shift invariance
  Rng rng(8);
  const Tensor4 logits = Tensor4::randn({4, 6, 1, 1}, rng);
  Tensor4 shifted = logits;
  for (auto& v : shifted.raw()) v += real(123.25);
  const std::vector<int> labels{0, 2, 4, 5};
  const SoftmaxXentResult a = softmax_xent(logits, labels);
  const SoftmaxXentResult b = softmax_xent(shifted, labels);
  CHECK(std::fabs(a.loss - b.loss) <= 1e-12);
  for (std::size_t i = 0; i < a.dlogits.size(); ++i)
    CHECK(std::fabs(a.dlogits.data()[i] - b.dlogits.data()[i]) <= 1e-12);

  CHECK_THROWS_AS(softmax_xent(logits, std::vector<int>{0, 2, 4, 6}),
                  InvalidLabel);
  CHECK_THROWS_AS(softmax_xent(logits, std::vector<int>{0, 2}), InvalidShape);
}

TEST_CASE("sgd step definition") {
  Param p;
  p.resize(1);
  p.value[0] = 1;
  p.grad[0] = real(0.5);
  sgd_step({&p}, SgdConfig{0.1, 0.0, 0.0});
  CHECK(p.value[0] == doctest::Approx(0.95).epsilon(1e-15));

  Param q;
  q.resize(1);
  q.value[0] = real(0.25);
  sgd_step({&q}, SgdConfig{0.1, 0.0, 0.0});  // zero gradient
  CHECK(q.value[0] == real(0.25));
}

TEST_CASE("sgd momentum two-step hand trace") {
  // m1 = g, w1 = w0 - lr*m1; m2 = 0.9*m1 + g, w2 = w1 - lr*m2
  Param p;
  p.resize(1);
  p.value[0] = 1;
  p.grad[0] = real(0.5);
  sgd_step({&p}, SgdConfig{0.1, 0.9, 0.0});
  CHECK(p.value[0] == doctest::Approx(0.95).epsilon(1e-15));
  p.grad[0] = real(0.5);
  sgd_step({&p}, SgdConfig{0.1, 0.9, 0.0});
  CHECK(p.value[0] == doctest::Approx(0.855).epsilon(1e-15));
}

TEST_CASE("sgd weight decay couples into the gradient") {
  Param p;
  p.resize(1);
  p.value[0] = 2;
  p.grad[0] = 0;
  sgd_step({&p}, SgdConfig{0.1, 0.0, 0.5});
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.1 * (0.5 * 2.0)).epsilon(1e-15));
}

TEST_CASE("residual block: zero main branch is the identity under relu") {
  Rng rng(9);
  NormalizerSpec bn;
  int cs = 0, ns = 0;
  ResidualBlock block(2, 2, 1, bn, false, rng, rng, cs, ns);
  // zero conv2 weights: main branch ends at n2(0) = 0 pre-affine, beta = 0
  std::fill(block.conv2().weight().value.begin(),
            block.conv2().weight().value.end(), real(0));
  Tensor4 x = Tensor4::randn({3, 2, 4, 4}, rng);
  for (auto& v : x.raw()) v = std::fabs(v) + real(0.05);  // positive input
  const Tensor4 y = block.forward(x, Mode::train, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(static_cast<double>(x.data()[i]))
                             .epsilon(1e-12));
}

TEST_CASE("residual block: zero input with identity skip gives zero output") {
  Rng rng(10);
  NormalizerSpec bn;
  int cs = 0, ns = 0;
  ResidualBlock block(2, 2, 1, bn, false, rng, rng, cs, ns);
  const Tensor4 x(3, 2, 4, 4, 0);
  const Tensor4 y = block.forward(x, Mode::train, nullptr);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == real(0));
}

TEST_CASE("residual block: one-channel hand composition") {
  // 1x1 spatial input, so each 3x3 conv reduces to its center tap.
  // x = {1, 3}; conv1 center 2 -> {2, 6}; bn -> {-1, +1}; relu -> {0, 1};
  // conv2 center 3 -> {0, 3}; bn -> {-1, +1}; + skip {1, 3} -> {0, 4};
  // relu -> {0, 4}.
  Rng rng(11);
  NormalizerSpec bn;
  bn.eps = 1e-12;
  int cs = 0, ns = 0;
  ResidualBlock block(1, 1, 1, bn, false, rng, rng, cs, ns);
  std::fill(block.conv1().weight().value.begin(),
            block.conv1().weight().value.end(), real(0));
  std::fill(block.conv2().weight().value.begin(),
            block.conv2().weight().value.end(), real(0));
  block.conv1().weight().value[4] = 2;  // center of the 3x3 kernel
  block.conv2().weight().value[4] = 3;
  Tensor4 x(2, 1, 1, 1);
  x.data()[0] = 1;
  x.data()[1] = 3;
  const Tensor4 y = block.forward(x, Mode::train, nullptr);
  CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("gradient suite: every differentiable op within 1e-4 over 10 seeds") {
  const auto results = run_gradient_suite(10, 1e-4, 0);
  for (const auto& r : results) {
    INFO(r.op, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.coords_checked > 0);
  }
  CHECK(gradcheck_all_pass(results));
}

TEST_CASE("gradcheck oracle values for reference layers") {
  GradcheckOptions opt;
  Rng rng(21);
  Linear lin(6, 4, true);
  lin.init_kaiming(rng);
  const Tensor4 x = Tensor4::randn({3, 6, 1, 1}, rng);
  const auto lr = gradcheck_layer("linear", lin, x, opt, rng);
  CHECK(lr.max_rel_err <= 1e-7);

  Relu relu;
  Tensor4 xr = Tensor4::randn({2, 3, 4, 4}, rng);
  for (auto& v : xr.raw())
    if (std::fabs(v) < 1e-3) v += v >= 0 ? real(1e-3) : real(-1e-3);
  const auto rr = gradcheck_layer("relu", relu, xr, opt, rng);
  CHECK(rr.max_rel_err <= 1e-6);
}
