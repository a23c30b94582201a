#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "rspnet/grad_check.hpp"
#include "rspnet/kernels.hpp"
#include "rspnet/ops.hpp"
#include "rspnet/rng.hpp"

using namespace rspnet;

namespace {

using TensorF = Tensor<float>;

// Scalar probe of an arbitrary tensor: sum(y * r) with a fixed random r.
template <typename T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<T> r = uniform_tensor<T>(y.shape(), -1.0, 1.0, rng);
  return sum(mul(y, r));
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Conv2d, AllOnesCenterIsNine) {
  TensorF x = TensorF::full(Shape{1, 1, 3, 3}, 1.0f);
  TensorF w = TensorF::full(Shape{1, 1, 3, 3}, 1.0f);
  TensorF y = conv2d(x, w, TensorF{}, {.stride = 1, .padding = 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y.at(4), 9.0f);
  EXPECT_EQ(y.at(0), 4.0f);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(1);
  TensorF x = uniform_tensor<float>(Shape{2, 1, 5, 5}, -1, 1, rng);
  TensorF w = TensorF::full(Shape{1, 1, 1, 1}, 1.0f);
  TensorF y = conv2d(x, w, TensorF{});
  EXPECT_TRUE(bit_equal(y.data(), x.data()));
}

TEST(Conv2d, DilatedShapeAndGradient) {
  Rng rng(2);
  TensorF x = uniform_tensor<float>(Shape{2, 4, 8, 8}, -1, 1, rng);
  TensorF w = uniform_tensor<float>(Shape{6, 4, 3, 3}, -1, 1, rng);
  const Conv2dOptions opts{.stride = 1, .padding = 2, .dilation = 2};
  TensorF y = conv2d(x, w, TensorF{}, opts);
  EXPECT_EQ(y.shape(), (Shape{2, 6, 8, 8}));

  auto res = grad_check_mixed(
      [&](auto prec) {
        using T = typename decltype(prec)::type;
        Rng r(2);
        auto xt = uniform_tensor<T>(Shape{2, 4, 8, 8}, -1, 1, r);
        auto wt = uniform_tensor<T>(Shape{6, 4, 3, 3}, -1, 1, r);
        return LossProblem<T>{[=] { return probe(conv2d(xt, wt, Tensor<T>{}, opts)); }, {wt, xt}};
      },
      {.step = 1e-3});
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(Conv2d, RejectsMismatchedShapes) {
  TensorF x = TensorF::zeros(Shape{1, 3, 4, 4});
  TensorF w = TensorF::zeros(Shape{2, 4, 3, 3});
  try {
    conv2d(x, w, TensorF{});
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1x3x4x4)"), std::string::npos);
    EXPECT_NE(msg.find("(2x4x3x3)"), std::string::npos);
  }
  TensorF wg = TensorF::zeros(Shape{3, 1, 3, 3});
  EXPECT_THROW(conv2d(x, wg, TensorF{}, {.groups = 2}), ValidationError);
}

TEST(Conv2d, ParallelKernelMatchesReferenceBitExactly) {
  struct Case {
    kernels::ConvGeometry g;
  };
  std::vector<kernels::ConvGeometry> cases;
  cases.push_back({2, 4, 8, 8, 6, 3, 1, 1, 1, 1});
  cases.push_back({2, 4, 9, 7, 4, 3, 2, 1, 1, 1});
  cases.push_back({1, 6, 8, 8, 6, 3, 1, 2, 2, 1});
  cases.push_back({2, 8, 8, 8, 8, 3, 1, 1, 1, 8});
  cases.push_back({1, 4, 6, 6, 2, 5, 1, 2, 1, 2});
  cases.push_back({3, 1, 16, 16, 4, 3, 2, 1, 1, 1});
  Rng rng(3);
  for (const auto& g : cases) {
    const auto x = uniform_tensor<float>(Shape{g.batch, g.in_channels, g.in_h, g.in_w}, -1, 1, rng);
    const auto w = uniform_tensor<float>(Shape{g.out_channels, g.in_per_group(), g.kernel, g.kernel}, -1, 1, rng);
    const auto b = uniform_tensor<float>(Shape{g.out_channels}, -1, 1, rng);
    const auto dy = uniform_tensor<float>(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()}, -1, 1, rng);
    const std::size_t ny = static_cast<std::size_t>(dy.numel());

    std::vector<float> y_ref(ny), y_par(ny);
    kernels::reference::conv2d_forward<float>(g, x.data(), w.data(), b.data(), y_ref);
    kernels::parallel::conv2d_forward<float>(g, x.data(), w.data(), b.data(), y_par);
    EXPECT_TRUE(bit_equal(y_ref, y_par));

    std::vector<float> dx_ref(static_cast<std::size_t>(x.numel())), dx_par(dx_ref.size());
    kernels::reference::conv2d_backward_input<float>(g, w.data(), dy.data(), dx_ref);
    kernels::parallel::conv2d_backward_input<float>(g, w.data(), dy.data(), dx_par);
    EXPECT_TRUE(bit_equal(dx_ref, dx_par));

    std::vector<float> dw_ref(static_cast<std::size_t>(w.numel())), dw_par(dw_ref.size());
    kernels::reference::conv2d_backward_weight<float>(g, x.data(), dy.data(), dw_ref);
    kernels::parallel::conv2d_backward_weight<float>(g, x.data(), dy.data(), dw_par);
    EXPECT_TRUE(bit_equal(dw_ref, dw_par));
  }
}

TEST(Conv2d, ThreadCountDoesNotChangeResults) {
  const kernels::ConvGeometry g{4, 8, 16, 16, 8, 3, 1, 1, 1, 1};
  Rng rng(4);
  const auto x = uniform_tensor<float>(Shape{4, 8, 16, 16}, -1, 1, rng);
  const auto w = uniform_tensor<float>(Shape{8, 8, 3, 3}, -1, 1, rng);
  std::vector<float> one(static_cast<std::size_t>(4 * 8 * 16 * 16)), four(one.size());
  const int saved = kernels::num_threads();
  kernels::set_num_threads(1);
  kernels::parallel::conv2d_forward<float>(g, x.data(), w.data(), {}, one);
  kernels::set_num_threads(4);
  kernels::parallel::conv2d_forward<float>(g, x.data(), w.data(), {}, four);
  kernels::set_num_threads(saved);
  EXPECT_TRUE(bit_equal(one, four));
}

TEST(SplitConcat, RoundTripIsBitExact) {
  Rng rng(5);
  TensorF x = uniform_tensor<float>(Shape{1, 4, 2, 2}, -1, 1, rng);
  const std::int64_t sizes[] = {2, 2};
  auto parts = split(x, 1, sizes);
  TensorF y = concat<float>(parts, 1);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(bit_equal(y.data(), x.data()));
}

TEST(SplitConcat, RejectsSizeMismatch) {
  TensorF x = TensorF::zeros(Shape{1, 4, 2, 2});
  const std::int64_t sizes[] = {1, 2};
  EXPECT_THROW(split(x, 1, sizes), ValidationError);
}

TEST(SplitConcat, ConcatGradientRoutesSlices) {
  Rng rng(6);
  auto res = grad_check_mixed([](auto prec) {
    using T = typename decltype(prec)::type;
    Rng r(6);
    auto a = uniform_tensor<T>(Shape{2, 3, 3, 3}, -1, 1, r);
    auto b = uniform_tensor<T>(Shape{2, 1, 3, 3}, -1, 1, r);
    return LossProblem<T>{[=] {
                            const Tensor<T> parts[] = {a, b};
                            return probe(concat<T>(parts, 1));
                          },
                          {a, b}};
  });
  EXPECT_LE(res.max_rel_error, 1e-3);
}

TEST(Add, ZerosIsIdentityAndCommutative) {
  Rng rng(7);
  TensorF x = uniform_tensor<float>(Shape{2, 3, 4, 4}, -1, 1, rng);
  TensorF y = uniform_tensor<float>(Shape{2, 3, 4, 4}, -1, 1, rng);
  EXPECT_TRUE(bit_equal(add(x, TensorF::zeros(x.shape())).data(), x.data()));
  EXPECT_TRUE(bit_equal(add(x, y).data(), add(y, x).data()));
  EXPECT_THROW(add(x, TensorF::zeros(Shape{2, 3, 4, 5})), ValidationError);
}

TEST(Activations, SoftmaxSigmoidBasics) {
  TensorF c = TensorF::full(Shape{1, 5}, 3.0f);
  TensorF s = softmax(c, 1);
  for (float v : s.data()) EXPECT_FLOAT_EQ(v, 0.2f);

  Tensor<double> zero = Tensor<double>::scalar(0.0, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> y = sigmoid(zero);
  EXPECT_DOUBLE_EQ(y.item(), 0.5);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(zero.grad()[0], 0.25);
}

TEST(Activations, SoftmaxRowsSumToOne) {
  Rng rng(8);
  TensorF x = uniform_tensor<float>(Shape{3, 7, 2}, -5, 5, rng);
  TensorF s = softmax(x, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) {
      double total = 0;
      for (int k = 0; k < 7; ++k) total += s.at((r * 7 + k) * 2 + c);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
  TensorF sg = sigmoid(x);
  for (float v : sg.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Activations, SoftmaxGradient) {
  Rng rng(9);
  Tensor<double> x = uniform_tensor<double>(Shape{2, 5}, -1, 1, rng);
  const double err = grad_check<double>([](const Tensor<double>& t) { return probe(softmax(t, 1)); }, x, 1e-4);
  EXPECT_LE(err, 1e-4);
}

TEST(Interpolate, SameSizeIsIdentity) {
  Rng rng(10);
  TensorF x = uniform_tensor<float>(Shape{1, 2, 8, 8}, -1, 1, rng);
  EXPECT_TRUE(bit_equal(interpolate_bilinear(x, 8, 8).data(), x.data()));
}

TEST(Interpolate, ConstantStaysConstant) {
  TensorF x = TensorF::full(Shape{1, 3, 8, 8}, 0.7f);
  TensorF y = interpolate_bilinear(x, 16, 16);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 16, 16}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.7f);
}

TEST(Interpolate, Gradient) {
  Rng rng(11);
  Tensor<double> x = uniform_tensor<double>(Shape{1, 2, 4, 4}, -1, 1, rng);
  const double up = grad_check<double>([](const Tensor<double>& t) { return probe(interpolate_bilinear(t, 9, 7)); }, x, 1e-3);
  const double down = grad_check<double>([](const Tensor<double>& t) { return probe(interpolate_bilinear(t, 3, 2)); }, x, 1e-3);
  EXPECT_LE(up, 1e-3);
  EXPECT_LE(down, 1e-3);
  auto mixed = grad_check_mixed([](auto prec) {
    using T = typename decltype(prec)::type;
    Rng r(11);
    auto t = uniform_tensor<T>(Shape{1, 2, 4, 4}, -1, 1, r);
    return LossProblem<T>{[=] { return probe(interpolate_bilinear(t, 9, 7)); }, {t}};
  });
  EXPECT_LE(mixed.max_rel_error, 1e-3);
}

TEST(Backward, LinearFunctionGradientIsInput) {
  Rng rng(12);
  TensorF w = uniform_tensor<float>(Shape{2, 3}, -1, 1, rng, true);
  TensorF x = uniform_tensor<float>(Shape{2, 3}, -1, 1, rng);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  tape.backward(sum(mul(w, x)));
  EXPECT_TRUE(bit_equal(w.grad(), x.data()));
}

TEST(Backward, TwoLayerSigmoidMatchesHandChainRule) {
  const double w1v = 0.7, w2v = -1.3, xv = 0.4;
  Tensor<double> w1 = Tensor<double>::scalar(w1v, true);
  Tensor<double> w2 = Tensor<double>::scalar(w2v, true);
  Tensor<double> x = Tensor<double>::scalar(xv);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> h = sigmoid(mul(w1, x));
  Tensor<double> out = sigmoid(mul(w2, h));
  tape.backward(out);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double a1 = sig(w1v * xv), a2 = sig(w2v * a1);
  const double dout = a2 * (1 - a2);
  EXPECT_NEAR(w2.grad()[0], dout * a1, 1e-6);
  EXPECT_NEAR(w1.grad()[0], dout * w2v * a1 * (1 - a1) * xv, 1e-6);
}

TEST(Backward, RejectsNonScalarLoss) {
  TensorF w = TensorF::full(Shape{2}, 1.0f, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  TensorF y = scale(w, 2.0);
  EXPECT_THROW(tape.backward(y), ValidationError);
}

TEST(Backward, UnreachableWeightKeepsNoGradient) {
  TensorF used = TensorF::full(Shape{3}, 1.0f, true);
  TensorF unused = TensorF::full(Shape{3}, 1.0f, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  tape.backward(sum(used));
  EXPECT_TRUE(used.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST(GradCheck, QuadraticAndIdentity) {
  Tensor<double> x = Tensor<double>::full(Shape{2, 3}, 1.0);
  const double q = grad_check<double>([](const Tensor<double>& t) { return sum(mul(t, t)); }, x, 1e-3);
  EXPECT_LE(q, 1e-6);
  // A power-of-two step keeps x +- step and the sums exact.
  const double id = grad_check<double>([](const Tensor<double>& t) { return sum(t); }, x, 1.0 / 1024);
  EXPECT_EQ(id, 0.0);
  Tensor<float> xf = Tensor<float>::full(Shape{2, 3}, 1.0f);
  EXPECT_EQ(grad_check<float>([](const Tensor<float>& t) { return sum(t); }, xf, 1.0 / 1024), 0.0);
  EXPECT_THROW(grad_check<double>([](const Tensor<double>& t) { return sum(t); }, x, 0.0), ValidationError);
}

TEST(GradCheck, ConvLossWithinTolerance) {
  Rng rng(13);
  auto res = grad_check_mixed(
      [](auto prec) {
        using T = typename decltype(prec)::type;
        Rng r(13);
        auto x = uniform_tensor<T>(Shape{1, 3, 6, 6}, -1, 1, r);
        auto w = uniform_tensor<T>(Shape{2, 3, 3, 3}, -1, 1, r);
        auto b = uniform_tensor<T>(Shape{2}, -1, 1, r);
        return LossProblem<T>{[=] { return probe(conv2d(x, w, b, {.padding = 1})); }, {w, b}};
      },
      {.step = 1e-3});
  EXPECT_LE(res.max_rel_error, 1e-3);
}

// Every differentiable op agrees with central differences on 20 seeds:
// 32-bit autodiff against a 64-bit difference oracle.
TEST(GradCheck, EveryOpOverTwentySeeds) {
  std::vector<std::uint8_t> labels(2 * 25);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 5 == 0 ? 255 : i % 4);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inputs = [seed](auto prec) {
      using T = typename decltype(prec)::type;
      Rng rng(1000 + seed);
      struct {
        Tensor<T> x, w, gamma, beta, coeffs, other;
      } in{uniform_tensor<T>(Shape{2, 4, 5, 5}, -1, 1, rng), uniform_tensor<T>(Shape{4, 1, 3, 3}, -1, 1, rng),
           uniform_tensor<T>(Shape{4}, 0.5, 1.5, rng),       uniform_tensor<T>(Shape{4}, -0.5, 0.5, rng),
           uniform_tensor<T>(Shape{3}, -1, 1, rng),          uniform_tensor<T>(Shape{2, 4, 5, 5}, -1, 1, rng)};
      return in;
    };
    auto conv = grad_check_mixed([&](auto prec) {
      using T = typename decltype(prec)::type;
      auto in = inputs(prec);
      return LossProblem<T>{[=] { return probe(conv2d(in.x, in.w, Tensor<T>{}, {.stride = 2, .padding = 1, .groups = 4})); },
                            {in.x, in.w}};
    });
    EXPECT_LE(conv.max_rel_error, 1e-3) << "depthwise strided conv seed " << seed;

    auto norm = grad_check_mixed([&](auto prec) {
      using T = typename decltype(prec)::type;
      auto in = inputs(prec);
      return LossProblem<T>{[=] { return probe(channel_norm(in.x, in.gamma, in.beta)); }, {in.x, in.gamma, in.beta}};
    });
    EXPECT_LE(norm.max_rel_error, 1e-3) << "channel_norm seed " << seed;

    auto elementwise = grad_check_mixed([&](auto prec) {
      using T = typename decltype(prec)::type;
      auto in = inputs(prec);
      return LossProblem<T>{[=] {
                              Tensor<T> s = sigmoid(in.x);
                              Tensor<T> m = softmax(in.x, 1);
                              Tensor<T> r = relu(in.other);
                              return add(add(probe(s, 1), probe(m, 2)), probe(add(r, mul(in.x, in.other)), 3));
                            },
                            {in.x, in.other}};
    },
    // A small 64-bit step keeps perturbations from crossing the ReLU kink.
    {.step = 1e-6});
    EXPECT_LE(elementwise.max_rel_error, 1e-3) << "sigmoid/softmax/relu/mul seed " << seed;

    auto ws = grad_check_mixed([&](auto prec) {
      using T = typename decltype(prec)::type;
      auto in = inputs(prec);
      return LossProblem<T>{[=] {
                              const Tensor<T> parts[] = {in.x, in.other, mul(in.x, in.other)};
                              return probe(weighted_sum<T>(parts, in.coeffs));
                            },
                            {in.x, in.other, in.coeffs}};
    });
    EXPECT_LE(ws.max_rel_error, 1e-3) << "weighted_sum seed " << seed;

    auto ce = grad_check_mixed([&](auto prec) {
      using T = typename decltype(prec)::type;
      auto in = inputs(prec);
      return LossProblem<T>{[=] { return cross_entropy(in.x, labels); }, {in.x}};
    });
    EXPECT_LE(ce.max_rel_error, 1e-3) << "cross_entropy seed " << seed;
  }
}

// Pure 32-bit differencing is limited by rounding of the float loss; the
// 64-bit instantiation meets the tolerance on its own.
TEST(GradCheck, DoublePrecisionSelfCheck) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(2000 + seed);
    auto x = uniform_tensor<double>(Shape{2, 4, 6, 6}, -1, 1, rng);
    auto w = uniform_tensor<double>(Shape{3, 4, 3, 3}, -1, 1, rng);
    std::vector<Tensor<double>> params{x, w};
    auto res = grad_check<double>([&] { return probe(conv2d(x, w, Tensor<double>{}, {.padding = 2, .dilation = 2})); },
                                  params);
    EXPECT_LE(res.max_rel_error, 1e-3) << "seed " << seed;
  }
}

TEST(ChainDepth, SigmoidStackVanishes) {
  // Unit scalar weights: every layer multiplies the gradient by sigma' <= 1/4.
  const int depth = 20;
  Tensor<double> x = Tensor<double>::scalar(0.3, true);
  std::vector<Tensor<double>> ws;
  for (int i = 0; i < depth; ++i) ws.push_back(Tensor<double>::scalar(1.0, true));
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> h = x;
  for (const auto& w : ws) h = sigmoid(mul(w, h));
  tape.backward(h);
  EXPECT_LE(std::abs(x.grad()[0]), std::pow(0.25, depth));
}

TEST(ChainDepth, ResidualStackDoesNotVanish) {
  std::vector<double> first_grad;
  for (int depth : {5, 10, 20, 40}) {
    Tensor<double> x = Tensor<double>::scalar(0.3, true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> h = x;
    for (int i = 0; i < depth; ++i) {
      Tensor<double> w = Tensor<double>::scalar(1.0);
      h = add(sigmoid(mul(w, h)), h);
    }
    tape.backward(h);
    // Each layer contributes a factor (sigma' + 1) >= 1.
    EXPECT_GE(x.grad()[0], 1.0);
    first_grad.push_back(x.grad()[0]);
  }
  for (std::size_t i = 1; i < first_grad.size(); ++i) EXPECT_GE(first_grad[i], first_grad[i - 1]);
}
