#include <gtest/gtest.h>

#include <cstring>

#include "rspnet/grad_check.hpp"
#include "rspnet/ops.hpp"
#include "rspnet/primitives.hpp"

using namespace rspnet;

namespace {

template <typename T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, uniform_tensor<T>(y.shape(), -1.0, 1.0, rng)));
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

constexpr PrimitiveKind kQuadratic[] = {PrimitiveKind::Conv3x3, PrimitiveKind::Conv5x5,
                                        PrimitiveKind::DilatedConv3x3};

}  // namespace

TEST(Primitive, NamesRoundTrip) {
  for (PrimitiveKind k : kAllPrimitives) EXPECT_EQ(parse_primitive(primitive_name(k)), k);
  EXPECT_EQ(primitive_name(PrimitiveKind::DilatedConv3x3), "dilated3x3");
  EXPECT_THROW(parse_primitive("Conv3x3"), ValidationError);
}

TEST(Primitive, IdentityReturnsInput) {
  ParamStore<float> store;
  Rng rng(1);
  auto op = make_primitive<float>(PrimitiveKind::Identity, 4, "id", store, rng);
  auto x = uniform_tensor<float>(Shape{2, 4, 5, 5}, -1, 1, rng);
  EXPECT_EQ(apply(op, x).node(), x.node());
  EXPECT_EQ(store.size(), 0u);
}

TEST(Primitive, EveryKindPreservesShape) {
  Rng rng(2);
  for (const Shape& s : {Shape{1, 4, 8, 8}, Shape{2, 4, 7, 5}, Shape{1, 4, 1, 1}}) {
    auto x = uniform_tensor<float>(s, -1, 1, rng);
    for (PrimitiveKind k : kAllPrimitives) {
      ParamStore<float> store;
      auto op = make_primitive<float>(k, 4, "p", store, rng);
      EXPECT_EQ(apply(op, x).shape(), s) << primitive_name(k);
    }
  }
}

TEST(Primitive, RejectsChannelMismatch) {
  ParamStore<float> store;
  Rng rng(3);
  auto op = make_primitive<float>(PrimitiveKind::Conv3x3, 4, "p", store, rng);
  EXPECT_THROW(apply(op, Tensor<float>::zeros(Shape{1, 3, 8, 8})), ValidationError);
}

TEST(Primitive, ParamCountFormulas) {
  EXPECT_EQ(param_count(PrimitiveKind::Identity, 7), 0);
  EXPECT_EQ(param_count(PrimitiveKind::Conv3x3, 4), 144);
  EXPECT_EQ(param_count(PrimitiveKind::Conv5x5, 4), 400);
  EXPECT_EQ(param_count(PrimitiveKind::DilatedConv3x3, 4), 144);
  EXPECT_EQ(param_count(PrimitiveKind::DepthwiseConv3x3, 4), 36);
  EXPECT_EQ(param_count(PrimitiveKind::Conv3x3, 4, true), 148);
  EXPECT_EQ(param_count(PrimitiveKind::DepthwiseConv3x3, 4, true), 40);
  EXPECT_THROW(param_count(PrimitiveKind::Conv3x3, 0), ValidationError);
}

TEST(Primitive, ParamCountMatchesEnumeration) {
  Rng rng(4);
  for (bool bias : {false, true}) {
    for (PrimitiveKind k : kAllPrimitives) {
      for (std::int64_t c : {1, 3, 8}) {
        ParamStore<float> store;
        make_primitive<float>(k, c, "p", store, rng, {.with_bias = bias});
        std::int64_t conv_only = 0;
        for (const auto& w : store.weights()) {
          if (w.id.ends_with(".weight") || w.id.ends_with(".bias")) conv_only += w.tensor.numel();
        }
        EXPECT_EQ(conv_only, param_count(k, c, bias));
        EXPECT_EQ(store.total(), param_count(k, c, bias) + norm_param_count(k, c));
      }
    }
  }
}

TEST(Primitive, ApplyIsDeterministic) {
  Rng rng(5);
  ParamStore<float> store;
  auto op = make_primitive<float>(PrimitiveKind::Conv5x5, 4, "p", store, rng);
  auto x = uniform_tensor<float>(Shape{2, 4, 6, 6}, -1, 1, rng);
  EXPECT_TRUE(bit_equal(apply(op, x).data(), apply(op, x).data()));
}

template <typename T>
LossProblem<T> primitive_problem(PrimitiveKind k, std::uint64_t seed) {
  Rng rng(seed);
  auto store = std::make_shared<ParamStore<T>>();
  auto op = make_primitive<T>(k, 4, "p", *store, rng);
  auto x = uniform_tensor<T>(Shape{2, 4, 6, 6}, -1, 1, rng);
  auto params = store->tensors();
  params.push_back(x);
  return LossProblem<T>{[op, x, store] { return probe(apply(op, x)); }, params};
}

// Relative-error oracle on the 64-bit instantiation, every entry, 20 seeds.
TEST(Primitive, GradCheckEveryKindTwentySeeds) {
  for (PrimitiveKind k : kAllPrimitives) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = primitive_problem<double>(k, seed);
      auto res = grad_check<double>(p.loss, p.params, {.step = 1e-6});
      EXPECT_LE(res.max_rel_error, 1e-3) << primitive_name(k) << " seed " << seed;
    }
  }
}

// 32-bit autodiff against 64-bit differences, error scaled by gradient size.
TEST(Primitive, Float32GradientsTrackFloat64Differences) {
  for (PrimitiveKind k : kAllPrimitives) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto res = grad_check_mixed([&](auto prec) { return primitive_problem<typename decltype(prec)::type>(k, seed); },
                                  {.step = 1e-6});
      EXPECT_LE(res.max_scaled_error, 1e-4) << primitive_name(k) << " seed " << seed;
    }
  }
}

TEST(Rsp, IdentityWrapCopiesInput) {
  Rng rng(6);
  ParamStore<float> store;
  auto op = make_primitive<float>(PrimitiveKind::Identity, 3, "id", store, rng);
  auto x = uniform_tensor<float>(Shape{2, 6, 4, 4}, -1, 1, rng);
  auto y = rsp_wrap(op, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(bit_equal(y.data(), x.data()));
}

TEST(Rsp, ShapeIsPreservedForEveryKind) {
  Rng rng(7);
  auto x = uniform_tensor<float>(Shape{1, 8, 8, 8}, -1, 1, rng);
  for (PrimitiveKind k : kAllPrimitives) {
    ParamStore<float> store;
    auto op = make_primitive<float>(k, 4, "p", store, rng);
    EXPECT_EQ(rsp_wrap(op, x).shape(), x.shape());
    EXPECT_EQ(rsp_wrap(op, x, RspMode::Additive).shape(), x.shape());
  }
}

TEST(Rsp, OddChannelsRejectedWithGuidance) {
  Rng rng(8);
  ParamStore<float> store;
  auto op = make_primitive<float>(PrimitiveKind::Identity, 2, "id", store, rng);
  try {
    rsp_apply<float>(Tensor<float>::zeros(Shape{1, 5, 4, 4}), [](const Tensor<float>& h) { return h; });
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("even"), std::string::npos);
  }
  EXPECT_THROW(rsp_wrap(op, Tensor<float>::zeros(Shape{1, 6, 4, 4})), ValidationError);
}

TEST(Rsp, ParameterRatioIsExactQuarter) {
  Rng rng(9);
  for (PrimitiveKind k : kQuadratic) {
    EXPECT_EQ(param_count(k, 4) * 4, param_count(k, 8)) << primitive_name(k);
    ParamStore<float> plain, wrapped;
    make_primitive<float>(k, 8, "p", plain, rng);
    make_primitive<float>(k, 4, "p", wrapped, rng);
    EXPECT_EQ(wrapped.total_with_prefix("p.weight") * 4, plain.total_with_prefix("p.weight"));
  }
  EXPECT_EQ(param_count(PrimitiveKind::Conv3x3, 4), 144);
  EXPECT_EQ(param_count(PrimitiveKind::Conv3x3, 8), 576);
  EXPECT_EQ(param_count(PrimitiveKind::DepthwiseConv3x3, 4) * 2, param_count(PrimitiveKind::DepthwiseConv3x3, 8));
}

TEST(Rsp, UntouchedHalfReceivesUpstreamGradientExactly) {
  for (RspMode mode : {RspMode::Concat, RspMode::Additive}) {
    Rng rng(10);
    ParamStore<float> store;
    auto op = make_primitive<float>(PrimitiveKind::Conv3x3, 4, "p", store, rng);
    auto x = uniform_tensor<float>(Shape{2, 8, 5, 5}, -1, 1, rng, true);
    auto r = uniform_tensor<float>(x.shape(), -1, 1, rng);
    Tape<float> tape;
    {
      TapeScope<float> scope(tape);
      tape.backward(sum(mul(rsp_wrap(op, x, mode), r)));
    }
    const std::int64_t plane = 5 * 5;
    for (std::int64_t n = 0; n < 2; ++n) {
      const std::size_t off = static_cast<std::size_t>((n * 8 + 4) * plane);
      const std::size_t len = static_cast<std::size_t>(4 * plane);
      EXPECT_TRUE(bit_equal(x.grad().subspan(off, len), r.data().subspan(off, len)));
    }
    EXPECT_TRUE(op.weight.has_grad());
  }
}

TEST(Rsp, GradCheckBothModes) {
  for (RspMode mode : {RspMode::Concat, RspMode::Additive}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto build = [&](auto prec) {
        using T = typename decltype(prec)::type;
        Rng rng(100 + seed);
        auto store = std::make_shared<ParamStore<T>>();
        auto op = make_primitive<T>(PrimitiveKind::DilatedConv3x3, 2, "p", *store, rng);
        auto x = uniform_tensor<T>(Shape{2, 4, 6, 6}, -1, 1, rng);
        auto params = store->tensors();
        params.push_back(x);
        return LossProblem<T>{[op, x, store, mode] { return probe(rsp_wrap(op, x, mode)); }, params};
      };
      auto p = build(Precision<double>{});
      EXPECT_LE(grad_check<double>(p.loss, p.params, {.step = 1e-6}).max_rel_error, 1e-3) << "seed " << seed;
      EXPECT_LE(grad_check_mixed(build, {.step = 1e-6}).max_scaled_error, 1e-4) << "seed " << seed;
    }
  }
}
