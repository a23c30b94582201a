#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "rspnet/params.hpp"
#include "rspnet/rng.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

// Canonical order; also the argmax tie-break order.
enum class PrimitiveKind : std::uint8_t { Conv3x3, Conv5x5, DilatedConv3x3, DepthwiseConv3x3, Identity };

inline constexpr std::size_t kNumPrimitives = 5;
inline constexpr std::array<PrimitiveKind, kNumPrimitives> kAllPrimitives = {
    PrimitiveKind::Conv3x3, PrimitiveKind::Conv5x5, PrimitiveKind::DilatedConv3x3,
    PrimitiveKind::DepthwiseConv3x3, PrimitiveKind::Identity};

std::string_view primitive_name(PrimitiveKind kind);
PrimitiveKind parse_primitive(std::string_view name);

/// Learnable conv scalars of one primitive: k*k*C*C for full convs, 9*C for
/// depthwise, 0 for identity, plus C when `with_bias`.
std::int64_t param_count(PrimitiveKind kind, std::int64_t channels, bool with_bias = false);

/// Affine normalization scalars that follow each conv primitive (2*C, or 0).
std::int64_t norm_param_count(PrimitiveKind kind, std::int64_t channels);

/// ReLU -> conv -> channel_norm for conv kinds; nothing for Identity.
template <typename T>
struct PrimitiveOp {
  PrimitiveKind kind = PrimitiveKind::Identity;
  std::int64_t channels = 0;
  Tensor<T> weight;
  Tensor<T> bias;  // undefined unless built with a bias
  Tensor<T> gamma;
  Tensor<T> beta;
};

struct PrimitiveOptions {
  bool with_bias = false;
};

/// Builds a primitive for `channels` channels and registers its weights under
/// `prefix` + ".weight", ".bias", ".gamma", ".beta".
template <typename T>
PrimitiveOp<T> make_primitive(PrimitiveKind kind, std::int64_t channels, const std::string& prefix,
                              ParamStore<T>& store, Rng& rng, PrimitiveOptions opts = {});

template <typename T>
Tensor<T> apply(const PrimitiveOp<T>& op, const Tensor<T>& x);

enum class RspMode : std::uint8_t {
  Concat,    // concat(f(x1), x2)
  Additive,  // concat(f(x1) + x1, x2)
};

/// Splits channels in half, transforms the first half, passes the second half
/// through untouched and concatenates.
template <typename T>
Tensor<T> rsp_apply(const Tensor<T>& x, const std::function<Tensor<T>(const Tensor<T>&)>& fn,
                    RspMode mode = RspMode::Concat);

template <typename T>
Tensor<T> rsp_wrap(const PrimitiveOp<T>& op, const Tensor<T>& x, RspMode mode = RspMode::Concat);

}  // namespace rspnet
