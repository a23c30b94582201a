#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rspnet/tensor.hpp"

namespace rspnet {

// Differentiable operations. Each records a backward rule on the active tape
// when one is installed and any input requires a gradient. Reductions
// accumulate in double regardless of the storage type.

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};

/// NCHW convolution. `weight` is (C_out, C_in / groups, k, k); `bias` may be an
/// undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& opts = {});

// Elementwise a + b in storage precision; commutative bit for bit.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis = 1);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, std::span<const std::int64_t> sizes);
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Bilinear resize of an NCHW tensor, align_corners=false, clamped borders.
template <typename T>
Tensor<T> interpolate_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Per-channel normalization over batch and spatial extent, then affine.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       double eps = 1e-5);

/// sum_o coeffs[o] * parts[o]; coeffs holds parts.size() entries.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, const Tensor<T>& coeffs);

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Mean pixel softmax cross-entropy over non-ignored pixels of (N, K, H, W)
/// logits; labels are (N, H, W) row-major.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                        std::uint8_t ignore = kIgnoreLabel);

}  // namespace rspnet
