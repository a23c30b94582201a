#pragma once

#include <cstdint>
#include <span>

#include "rspnet/acc.hpp"

namespace rspnet::kernels {

/// Geometry of one 2-D convolution over NCHW buffers.
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t in_h = 1;
  std::int64_t in_w = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;

  std::int64_t out_h() const { return (in_h + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
  std::int64_t out_w() const { return (in_w + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
  std::int64_t in_per_group() const { return in_channels / groups; }
  std::int64_t out_per_group() const { return out_channels / groups; }
};

// Both implementations share one accumulation order. Forward: per output
// element, sum over (input channel, ky, kx) in a double accumulator, bias added
// last. Input gradient: per input element, sum over (output channel, ky, kx).
// Weight gradient: per weight, sum over (n, oy, ox). Float results are
// therefore bit-identical between the two and independent of thread count.

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);

}  // namespace reference

namespace parallel {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);

}  // namespace parallel

// Bias gradient: per output channel, sum over (n, oy, ox).
template <typename T>
void conv2d_backward_bias(const ConvGeometry& g, std::span<const T> dy, std::span<T> db);

/// Worker threads used by the parallel kernels.
void set_num_threads(int n);
int num_threads();
/// Reads RSPNET_THREADS (default 1) and applies it.
int configure_threads_from_env();

}  // namespace rspnet::kernels
