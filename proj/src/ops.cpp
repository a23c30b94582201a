#include "rspnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rspnet/kernels.hpp"

namespace rspnet {

namespace {

using i64 = std::int64_t;

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void record(std::vector<Tensor<T>> inputs, Tensor<T>& out, typename Tape<T>::Rule rule) {
  std::vector<typename Tape<T>::NodePtr> nodes;
  nodes.reserve(inputs.size());
  for (auto& t : inputs) nodes.push_back(t.node());
  out.set_requires_grad(true);
  Tape<T>::active()->record(std::move(nodes), out.node(), std::move(rule));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
  }
}

void require_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= s.rank()) {
    throw ValidationError(std::string(op) + ": axis " + std::to_string(axis) +
                          " invalid for shape " + s.str());
  }
}

template <typename T>
std::size_t sz(T v) {
  return static_cast<std::size_t>(v);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& opts) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.rank() != 4 || ws.rank() != 4 || ws[2] != ws[3]) {
    throw ValidationError("conv2d: expected 4-D input and square 4-D weight, got input " +
                          xs.str() + " and weight " + ws.str());
  }
  if (opts.groups < 1 || opts.stride < 1 || opts.dilation < 1 || opts.padding < 0) {
    throw ValidationError("conv2d: stride, dilation and groups must be >= 1, padding >= 0");
  }
  if (xs[1] % opts.groups != 0 || ws[0] % opts.groups != 0) {
    throw ValidationError("conv2d: channels of input " + xs.str() + " / weight " + ws.str() +
                          " not divisible by groups " + std::to_string(opts.groups));
  }
  if (ws[1] != xs[1] / opts.groups) {
    throw ValidationError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.defined() && bias.numel() != ws[0]) {
    throw ValidationError("conv2d: bias " + bias.shape().str() + " does not match weight " +
                          ws.str());
  }
  kernels::ConvGeometry g;
  g.batch = xs[0];
  g.in_channels = xs[1];
  g.in_h = xs[2];
  g.in_w = xs[3];
  g.out_channels = ws[0];
  g.kernel = ws[2];
  g.stride = opts.stride;
  g.padding = opts.padding;
  g.dilation = opts.dilation;
  g.groups = opts.groups;
  if (g.out_h() < 1 || g.out_w() < 1) {
    throw ValidationError("conv2d: kernel larger than padded input " + xs.str());
  }
  Tensor<T> out = Tensor<T>::zeros(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  std::span<const T> bias_data;
  if (bias.defined()) bias_data = bias.data();
  kernels::parallel::conv2d_forward<T>(g, input.data(), weight.data(), bias_data, out.data());

  if (should_record<T>({&input, &weight, &bias})) {
    std::vector<Tensor<T>> ins{input, weight};
    if (bias.defined()) ins.push_back(bias);
    record<T>(ins, out, [g, input, weight, bias, out]() mutable {
      std::span<const T> dy = out.grad();
      if (input.requires_grad()) {
        kernels::parallel::conv2d_backward_input<T>(g, weight.data(), dy, input.ensure_grad());
      }
      if (weight.requires_grad()) {
        kernels::parallel::conv2d_backward_weight<T>(g, input.data(), dy, weight.ensure_grad());
      }
      if (bias.defined() && bias.requires_grad()) {
        kernels::conv2d_backward_bias<T>(g, dy, bias.ensure_grad());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (should_record<T>({&a, &b})) {
    record<T>({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (should_record<T>({&a, &b})) {
    record<T>({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto d = a.ensure_grad();
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto d = b.ensure_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(factor * static_cast<Acc<T>>(in[i]));
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out, factor]() mutable {
      auto g = out.grad();
      auto d = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += static_cast<T>(factor * static_cast<Acc<T>>(g[i]));
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw ValidationError("concat: no parts");
  const Shape& first = parts[0].shape();
  require_axis(first, axis, "concat");
  i64 total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.rank() != first.rank()) throw ValidationError("concat: rank mismatch " + s.str() + " vs " + first.str());
    for (int d = 0; d < s.rank(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ValidationError("concat: shape mismatch " + s.str() + " vs " + first.str());
      }
    }
    total += s[axis];
  }
  const Shape out_shape = first.with(axis, total);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const i64 outer = first.outer(axis), inner = first.inner(axis);
  auto o = out.data();
  i64 offset = 0;
  for (const auto& p : parts) {
    const i64 block = p.dim(axis) * inner;
    auto src = p.data();
    for (i64 r = 0; r < outer; ++r) {
      std::copy_n(src.begin() + r * block, block, o.begin() + r * total * inner + offset * inner);
    }
    offset += p.dim(axis);
  }
  bool track = false;
  for (const auto& p : parts) track = track || should_record<T>({&p});
  if (track) {
    std::vector<Tensor<T>> ins(parts.begin(), parts.end());
    record<T>(ins, out, [ins, out, outer, inner, total, axis]() mutable {
      auto g = out.grad();
      i64 offset = 0;
      for (auto& p : ins) {
        const i64 block = p.dim(axis) * inner;
        if (p.requires_grad()) {
          auto d = p.ensure_grad();
          for (i64 r = 0; r < outer; ++r) {
            const T* src = g.data() + r * total * inner + offset * inner;
            T* dst = d.data() + r * block;
            for (i64 i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += p.dim(axis);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, i64 start, i64 length) {
  const Shape& s = x.shape();
  require_axis(s, axis, "narrow");
  if (start < 0 || length < 1 || start + length > s[axis]) {
    throw ValidationError("narrow: range [" + std::to_string(start) + ", " +
                          std::to_string(start + length) + ") outside axis of " + s.str());
  }
  const i64 outer = s.outer(axis), inner = s.inner(axis), extent = s[axis];
  Tensor<T> out = Tensor<T>::zeros(s.with(axis, length));
  auto src = x.data();
  auto o = out.data();
  for (i64 r = 0; r < outer; ++r) {
    std::copy_n(src.begin() + (r * extent + start) * inner, length * inner, o.begin() + r * length * inner);
  }
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out, outer, inner, extent, start, length]() mutable {
      auto g = out.grad();
      auto d = x.ensure_grad();
      for (i64 r = 0; r < outer; ++r) {
        T* dst = d.data() + (r * extent + start) * inner;
        const T* gs = g.data() + r * length * inner;
        for (i64 i = 0; i < length * inner; ++i) dst[i] += gs[i];
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, std::span<const i64> sizes) {
  require_axis(x.shape(), axis, "split");
  const i64 total = std::accumulate(sizes.begin(), sizes.end(), i64{0});
  if (total != x.dim(axis)) {
    throw ValidationError("split: sizes sum to " + std::to_string(total) + " but axis " +
                          std::to_string(axis) + " of " + x.shape().str() + " has " +
                          std::to_string(x.dim(axis)));
  }
  std::vector<Tensor<T>> parts;
  i64 start = 0;
  for (i64 len : sizes) {
    parts.push_back(narrow(x, axis, start, len));
    start += len;
  }
  return parts;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ValidationError("reshape: " + x.shape().str() + " cannot become " + shape.str());
  }
  Tensor<T> out(shape, std::vector<T>(x.data().begin(), x.data().end()));
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto d = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const Shape& s = x.shape();
  require_axis(s, axis, "softmax");
  const i64 outer = s.outer(axis), inner = s.inner(axis), extent = s[axis];
  Tensor<T> out = Tensor<T>::zeros(s);
  auto in = x.data();
  auto o = out.data();
  std::vector<Acc<T>> e(sz(extent));
  for (i64 r = 0; r < outer; ++r) {
    for (i64 c = 0; c < inner; ++c) {
      const i64 base = r * extent * inner + c;
      Acc<T> mx = -INFINITY;
      for (i64 k = 0; k < extent; ++k) mx = std::max(mx, static_cast<Acc<T>>(in[sz(base + k * inner)]));
      Acc<T> total = 0.0;
      for (i64 k = 0; k < extent; ++k) {
        e[sz(k)] = std::exp(static_cast<Acc<T>>(in[sz(base + k * inner)]) - mx);
        total += e[sz(k)];
      }
      for (i64 k = 0; k < extent; ++k) o[sz(base + k * inner)] = static_cast<T>(e[sz(k)] / total);
    }
  }
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out, outer, inner, extent]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto d = x.ensure_grad();
      for (i64 r = 0; r < outer; ++r) {
        for (i64 c = 0; c < inner; ++c) {
          const i64 base = r * extent * inner + c;
          Acc<T> dot = 0.0;
          for (i64 k = 0; k < extent; ++k) {
            const std::size_t i = sz(base + k * inner);
            dot += static_cast<Acc<T>>(g[i]) * static_cast<Acc<T>>(y[i]);
          }
          for (i64 k = 0; k < extent; ++k) {
            const std::size_t i = sz(base + k * inner);
            d[i] += static_cast<T>(static_cast<Acc<T>>(y[i]) * (static_cast<Acc<T>>(g[i]) - dot));
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<Acc<T>>(in[i]))));
  }
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto d = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Acc<T> yi = static_cast<Acc<T>>(y[i]);
        d[i] += static_cast<T>(static_cast<Acc<T>>(g[i]) * yi * (1.0 - yi));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto d = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > T(0)) d[i] += g[i];
      }
    });
  }
  return out;
}

namespace {

struct LerpTap {
  i64 lo = 0;
  i64 hi = 0;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

std::vector<LerpTap> lerp_taps(i64 in, i64 out) {
  std::vector<LerpTap> taps(sz(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (i64 o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    i64 lo = static_cast<i64>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const i64 hi = lo < in - 1 ? lo + 1 : lo;
    const double frac = lo < in - 1 ? src - static_cast<double>(lo) : 0.0;
    taps[sz(o)] = LerpTap{lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> interpolate_bilinear(const Tensor<T>& x, i64 out_h, i64 out_w) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ValidationError("interpolate_bilinear: expected NCHW, got " + s.str());
  if (out_h < 1 || out_w < 1) throw ValidationError("interpolate_bilinear: output size must be >= 1");
  const i64 planes = s[0] * s[1], ih = s[2], iw = s[3];
  Tensor<T> out = Tensor<T>::zeros(Shape{s[0], s[1], out_h, out_w});
  if (ih == out_h && iw == out_w) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
  } else {
    const auto ty = lerp_taps(ih, out_h);
    const auto tx = lerp_taps(iw, out_w);
    auto in = x.data();
    auto o = out.data();
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < planes; ++p) {
      const T* src = in.data() + p * ih * iw;
      T* dst = o.data() + p * out_h * out_w;
      for (i64 y = 0; y < out_h; ++y) {
        const LerpTap& a = ty[sz(y)];
        for (i64 xx = 0; xx < out_w; ++xx) {
          const LerpTap& b = tx[sz(xx)];
          const Acc<T> top = b.w_lo * src[a.lo * iw + b.lo] + b.w_hi * src[a.lo * iw + b.hi];
          const Acc<T> bot = b.w_lo * src[a.hi * iw + b.lo] + b.w_hi * src[a.hi * iw + b.hi];
          dst[y * out_w + xx] = static_cast<T>(a.w_lo * top + a.w_hi * bot);
        }
      }
    }
  }
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out, planes, ih, iw, out_h, out_w]() mutable {
      auto g = out.grad();
      auto d = x.ensure_grad();
      if (ih == out_h && iw == out_w) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        return;
      }
      const auto ty = lerp_taps(ih, out_h);
      const auto tx = lerp_taps(iw, out_w);
#pragma omp parallel
      {
        std::vector<Acc<T>> acc(sz(ih * iw));
#pragma omp for schedule(static)
        for (i64 p = 0; p < planes; ++p) {
          std::fill(acc.begin(), acc.end(), 0.0);
          const T* gs = g.data() + p * out_h * out_w;
          for (i64 y = 0; y < out_h; ++y) {
            const LerpTap& a = ty[sz(y)];
            for (i64 xx = 0; xx < out_w; ++xx) {
              const LerpTap& b = tx[sz(xx)];
              const Acc<T> gv = static_cast<Acc<T>>(gs[y * out_w + xx]);
              acc[sz(a.lo * iw + b.lo)] += a.w_lo * b.w_lo * gv;
              acc[sz(a.lo * iw + b.hi)] += a.w_lo * b.w_hi * gv;
              acc[sz(a.hi * iw + b.lo)] += a.w_hi * b.w_lo * gv;
              acc[sz(a.hi * iw + b.hi)] += a.w_hi * b.w_hi * gv;
            }
          }
          T* dst = d.data() + p * ih * iw;
          for (i64 i = 0; i < ih * iw; ++i) dst[i] += static_cast<T>(acc[sz(i)]);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Acc<T> acc = 0.0;
  for (T v : x.data()) acc += static_cast<Acc<T>>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (should_record<T>({&x})) {
    record<T>({x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (T& d : x.ensure_grad()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       double eps) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ValidationError("channel_norm: expected NCHW, got " + s.str());
  const i64 n = s[0], c = s[1], plane = s[2] * s[3];
  if (gamma.numel() != c || beta.numel() != c) {
    throw ValidationError("channel_norm: affine parameters " + gamma.shape().str() + " / " +
                          beta.shape().str() + " do not match " + s.str());
  }
  const Acc<T> count = static_cast<Acc<T>>(n * plane);
  std::vector<Acc<T>> mu(sz(c)), inv_std(sz(c));
  Tensor<T> out = Tensor<T>::zeros(s);
  auto in = x.data();
  auto o = out.data();
  auto gm = gamma.data();
  auto bt = beta.data();
#pragma omp parallel for schedule(static)
  for (i64 ch = 0; ch < c; ++ch) {
    Acc<T> acc = 0.0;
    for (i64 b = 0; b < n; ++b) {
      const T* src = in.data() + (b * c + ch) * plane;
      for (i64 i = 0; i < plane; ++i) acc += static_cast<Acc<T>>(src[i]);
    }
    const Acc<T> m = acc / count;
    Acc<T> var = 0.0;
    for (i64 b = 0; b < n; ++b) {
      const T* src = in.data() + (b * c + ch) * plane;
      for (i64 i = 0; i < plane; ++i) {
        const Acc<T> dv = static_cast<Acc<T>>(src[i]) - m;
        var += dv * dv;
      }
    }
    const Acc<T> is = 1.0 / std::sqrt(var / count + eps);
    mu[sz(ch)] = m;
    inv_std[sz(ch)] = is;
    const Acc<T> ga = static_cast<Acc<T>>(gm[sz(ch)]), be = static_cast<Acc<T>>(bt[sz(ch)]);
    for (i64 b = 0; b < n; ++b) {
      const T* src = in.data() + (b * c + ch) * plane;
      T* dst = o.data() + (b * c + ch) * plane;
      for (i64 i = 0; i < plane; ++i) {
        dst[i] = static_cast<T>(ga * ((static_cast<Acc<T>>(src[i]) - m) * is) + be);
      }
    }
  }
  if (should_record<T>({&x, &gamma, &beta})) {
    record<T>({x, gamma, beta}, out, [x, gamma, beta, out, mu, inv_std, n, c, plane, count]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gm = gamma.data();
      std::span<T> dx = x.requires_grad() ? x.ensure_grad() : std::span<T>{};
      std::span<T> dg = gamma.requires_grad() ? gamma.ensure_grad() : std::span<T>{};
      std::span<T> db = beta.requires_grad() ? beta.ensure_grad() : std::span<T>{};
#pragma omp parallel for schedule(static)
      for (i64 ch = 0; ch < c; ++ch) {
        const Acc<T> m = mu[sz(ch)], is = inv_std[sz(ch)];
        Acc<T> sum_g = 0.0, sum_gx = 0.0;
        for (i64 b = 0; b < n; ++b) {
          const T* src = in.data() + (b * c + ch) * plane;
          const T* gs = g.data() + (b * c + ch) * plane;
          for (i64 i = 0; i < plane; ++i) {
            const Acc<T> gv = static_cast<Acc<T>>(gs[i]);
            sum_g += gv;
            sum_gx += gv * (static_cast<Acc<T>>(src[i]) - m) * is;
          }
        }
        if (!db.empty()) db[sz(ch)] += static_cast<T>(sum_g);
        if (!dg.empty()) dg[sz(ch)] += static_cast<T>(sum_gx);
        if (!dx.empty()) {
          const Acc<T> ga = static_cast<Acc<T>>(gm[sz(ch)]);
          const Acc<T> mean_g = sum_g / count, mean_gx = sum_gx / count;
          for (i64 b = 0; b < n; ++b) {
            const T* src = in.data() + (b * c + ch) * plane;
            const T* gs = g.data() + (b * c + ch) * plane;
            T* dst = dx.data() + (b * c + ch) * plane;
            for (i64 i = 0; i < plane; ++i) {
              const Acc<T> xhat = (static_cast<Acc<T>>(src[i]) - m) * is;
              dst[i] += static_cast<T>(ga * is * (static_cast<Acc<T>>(gs[i]) - mean_g - xhat * mean_gx));
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, const Tensor<T>& coeffs) {
  if (parts.empty()) throw ValidationError("weighted_sum: no parts");
  if (coeffs.numel() != static_cast<i64>(parts.size())) {
    throw ValidationError("weighted_sum: " + std::to_string(parts.size()) + " parts but " +
                          std::to_string(coeffs.numel()) + " coefficients");
  }
  for (const auto& p : parts) require_same_shape(p, parts[0], "weighted_sum");
  Tensor<T> out = Tensor<T>::zeros(parts[0].shape());
  auto o = out.data();
  auto w = coeffs.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    Acc<T> acc = 0.0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      acc += static_cast<Acc<T>>(w[k]) * static_cast<Acc<T>>(parts[k].data()[i]);
    }
    o[i] = static_cast<T>(acc);
  }
  bool track = should_record<T>({&coeffs});
  for (const auto& p : parts) track = track || should_record<T>({&p});
  if (track) {
    std::vector<Tensor<T>> ins(parts.begin(), parts.end());
    ins.push_back(coeffs);
    record<T>(ins, out, [ins, out]() mutable {
      auto g = out.grad();
      Tensor<T>& cf = ins.back();
      auto w = cf.data();
      const std::size_t count = ins.size() - 1;
      std::span<T> dw = cf.requires_grad() ? cf.ensure_grad() : std::span<T>{};
      for (std::size_t k = 0; k < count; ++k) {
        Tensor<T>& p = ins[k];
        auto pv = p.data();
        if (!dw.empty()) {
          Acc<T> acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<Acc<T>>(g[i]) * static_cast<Acc<T>>(pv[i]);
          dw[k] += static_cast<T>(acc);
        }
        if (p.requires_grad()) {
          auto d = p.ensure_grad();
          const Acc<T> wk = static_cast<Acc<T>>(w[k]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += static_cast<T>(wk * static_cast<Acc<T>>(g[i]));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                        std::uint8_t ignore) {
  const Shape& s = logits.shape();
  if (s.rank() != 4) throw ValidationError("cross_entropy: expected NKHW logits, got " + s.str());
  const i64 n = s[0], k = s[1], plane = s[2] * s[3];
  if (static_cast<i64>(labels.size()) != n * plane) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for logits " + s.str());
  }
  auto z = logits.data();
  Acc<T> total = 0.0;
  i64 valid = 0;
  for (i64 b = 0; b < n; ++b) {
    for (i64 i = 0; i < plane; ++i) {
      const std::uint8_t lab = labels[sz(b * plane + i)];
      if (lab == ignore) continue;
      if (lab >= k) {
        throw ValidationError("cross_entropy: label " + std::to_string(lab) + " >= classes " +
                              std::to_string(k));
      }
      Acc<T> mx = -INFINITY;
      for (i64 c = 0; c < k; ++c) mx = std::max(mx, static_cast<Acc<T>>(z[sz((b * k + c) * plane + i)]));
      Acc<T> se = 0.0;
      for (i64 c = 0; c < k; ++c) se += std::exp(static_cast<Acc<T>>(z[sz((b * k + c) * plane + i)]) - mx);
      total += std::log(se) + mx - static_cast<Acc<T>>(z[sz((b * k + lab) * plane + i)]);
      ++valid;
    }
  }
  const Acc<T> denom = valid > 0 ? static_cast<Acc<T>>(valid) : 1.0;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / denom));
  if (should_record<T>({&logits})) {
    std::vector<std::uint8_t> labs(labels.begin(), labels.end());
    record<T>({logits}, out, [logits, out, labs, n, k, plane, denom, ignore]() mutable {
      const Acc<T> g = static_cast<Acc<T>>(out.grad()[0]) / denom;
      auto z = logits.data();
      auto d = logits.ensure_grad();
      std::vector<Acc<T>> e(sz(k));
      for (i64 b = 0; b < n; ++b) {
        for (i64 i = 0; i < plane; ++i) {
          const std::uint8_t lab = labs[sz(b * plane + i)];
          if (lab == ignore) continue;
          Acc<T> mx = -INFINITY;
          for (i64 c = 0; c < k; ++c) mx = std::max(mx, static_cast<Acc<T>>(z[sz((b * k + c) * plane + i)]));
          Acc<T> se = 0.0;
          for (i64 c = 0; c < k; ++c) {
            e[sz(c)] = std::exp(static_cast<Acc<T>>(z[sz((b * k + c) * plane + i)]) - mx);
            se += e[sz(c)];
          }
          for (i64 c = 0; c < k; ++c) {
            const Acc<T> p = e[sz(c)] / se - (c == lab ? 1.0 : 0.0);
            d[sz((b * k + c) * plane + i)] += static_cast<T>(g * p);
          }
        }
      }
    });
  }
  return out;
}

#define RSPNET_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                               const Conv2dOptions&);                                                \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale<T>(const Tensor<T>&, double);                                             \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, int);                                     \
  template std::vector<Tensor<T>> split<T>(const Tensor<T>&, int, std::span<const i64>);             \
  template Tensor<T> narrow<T>(const Tensor<T>&, int, i64, i64);                                     \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                                     \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                              \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> interpolate_bilinear<T>(const Tensor<T>&, i64, i64);                            \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                       \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                      \
  template Tensor<T> channel_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template Tensor<T> weighted_sum<T>(std::span<const Tensor<T>>, const Tensor<T>&);                  \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::uint8_t>, std::uint8_t);

RSPNET_INSTANTIATE_OPS(float)
RSPNET_INSTANTIATE_OPS(double)
RSPNET_INSTANTIATE_OPS(long double)

#undef RSPNET_INSTANTIATE_OPS

}  // namespace rspnet
