#include "rspnet/primitives.hpp"

#include <cmath>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

namespace {

struct ConvShape {
  std::int64_t kernel, dilation, padding;
  bool depthwise;
};

ConvShape conv_shape(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Conv3x3: return {3, 1, 1, false};
    case PrimitiveKind::Conv5x5: return {5, 1, 2, false};
    case PrimitiveKind::DilatedConv3x3: return {3, 2, 2, false};
    case PrimitiveKind::DepthwiseConv3x3: return {3, 1, 1, true};
    case PrimitiveKind::Identity: break;
  }
  return {0, 0, 0, false};
}

}  // namespace

std::string_view primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Conv3x3: return "conv3x3";
    case PrimitiveKind::Conv5x5: return "conv5x5";
    case PrimitiveKind::DilatedConv3x3: return "dilated3x3";
    case PrimitiveKind::DepthwiseConv3x3: return "depthwise3x3";
    case PrimitiveKind::Identity: return "identity";
  }
  return "unknown";
}

PrimitiveKind parse_primitive(std::string_view name) {
  for (PrimitiveKind k : kAllPrimitives) {
    if (primitive_name(k) == name) return k;
  }
  throw ValidationError("unknown primitive '" + std::string(name) +
                        "' (expected conv3x3, conv5x5, dilated3x3, depthwise3x3 or identity)");
}

std::int64_t param_count(PrimitiveKind kind, std::int64_t channels, bool with_bias) {
  if (channels < 1) throw ValidationError("param_count: channels must be >= 1");
  if (kind == PrimitiveKind::Identity) return 0;
  const ConvShape s = conv_shape(kind);
  const std::int64_t per_out = s.depthwise ? s.kernel * s.kernel : s.kernel * s.kernel * channels;
  return per_out * channels + (with_bias ? channels : 0);
}

std::int64_t norm_param_count(PrimitiveKind kind, std::int64_t channels) {
  return kind == PrimitiveKind::Identity ? 0 : 2 * channels;
}

template <typename T>
PrimitiveOp<T> make_primitive(PrimitiveKind kind, std::int64_t channels, const std::string& prefix,
                              ParamStore<T>& store, Rng& rng, PrimitiveOptions opts) {
  if (channels < 1) throw ValidationError("make_primitive: channels must be >= 1");
  PrimitiveOp<T> op;
  op.kind = kind;
  op.channels = channels;
  if (kind == PrimitiveKind::Identity) return op;
  const ConvShape s = conv_shape(kind);
  const std::int64_t in_per_group = s.depthwise ? 1 : channels;
  const double fan_in = static_cast<double>(in_per_group * s.kernel * s.kernel);
  op.weight = store.create(prefix + ".weight",
                           normal_tensor<T>(Shape{channels, in_per_group, s.kernel, s.kernel}, 0.0,
                                            std::sqrt(2.0 / fan_in), rng));
  if (opts.with_bias) op.bias = store.create(prefix + ".bias", Tensor<T>::zeros(Shape{channels}));
  op.gamma = store.create(prefix + ".gamma", Tensor<T>::full(Shape{channels}, T(1)));
  op.beta = store.create(prefix + ".beta", Tensor<T>::zeros(Shape{channels}));
  return op;
}

template <typename T>
Tensor<T> apply(const PrimitiveOp<T>& op, const Tensor<T>& x) {
  if (x.shape().rank() != 4 || x.dim(1) != op.channels) {
    throw ValidationError("primitive " + std::string(primitive_name(op.kind)) + " expects " +
                          std::to_string(op.channels) + " channels, got input " + x.shape().str());
  }
  if (op.kind == PrimitiveKind::Identity) return x;
  const ConvShape s = conv_shape(op.kind);
  Conv2dOptions conv{.stride = 1, .padding = s.padding, .dilation = s.dilation,
                     .groups = s.depthwise ? op.channels : 1};
  return channel_norm(conv2d(relu(x), op.weight, op.bias, conv), op.gamma, op.beta);
}

template <typename T>
Tensor<T> rsp_apply(const Tensor<T>& x, const std::function<Tensor<T>(const Tensor<T>&)>& fn,
                    RspMode mode) {
  if (x.shape().rank() != 4) throw ValidationError("rsp: expected NCHW input, got " + x.shape().str());
  const std::int64_t c = x.dim(1);
  if (c % 2 != 0) {
    throw ValidationError("rsp: channel count " + std::to_string(c) +
                          " is odd; choose an even channel width so the input splits in half");
  }
  const std::int64_t sizes[] = {c / 2, c / 2};
  auto halves = split(x, 1, std::span<const std::int64_t>(sizes));
  Tensor<T> y = fn(halves[0]);
  if (mode == RspMode::Additive) y = add(y, halves[0]);
  const Tensor<T> parts[] = {y, halves[1]};
  return concat<T>(parts, 1);
}

template <typename T>
Tensor<T> rsp_wrap(const PrimitiveOp<T>& op, const Tensor<T>& x, RspMode mode) {
  if (x.shape().rank() == 4 && x.dim(1) != 2 * op.channels) {
    throw ValidationError("rsp_wrap: op has " + std::to_string(op.channels) + " channels, input " +
                          x.shape().str() + " needs " + std::to_string(x.dim(1) / 2));
  }
  return rsp_apply<T>(x, [&op](const Tensor<T>& h) { return apply(op, h); }, mode);
}

#define RSPNET_INSTANTIATE(T)                                                                      \
  template PrimitiveOp<T> make_primitive<T>(PrimitiveKind, std::int64_t, const std::string&,       \
                                            ParamStore<T>&, Rng&, PrimitiveOptions);               \
  template Tensor<T> apply<T>(const PrimitiveOp<T>&, const Tensor<T>&);                            \
  template Tensor<T> rsp_apply<T>(const Tensor<T>&, const std::function<Tensor<T>(const Tensor<T>&)>&, \
                                  RspMode);                                                        \
  template Tensor<T> rsp_wrap<T>(const PrimitiveOp<T>&, const Tensor<T>&, RspMode);

RSPNET_INSTANTIATE(float)
RSPNET_INSTANTIATE(double)
RSPNET_INSTANTIATE(long double)

#undef RSPNET_INSTANTIATE

}  // namespace rspnet
