#include "rspnet/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include "rspnet/error.hpp"

namespace rspnet::kernels {

namespace {

using i64 = std::int64_t;

template <typename T>
std::vector<T> pad_planes(const ConvGeometry& g, std::span<const T> x) {
  const i64 hp = g.in_h + 2 * g.padding;
  const i64 wp = g.in_w + 2 * g.padding;
  std::vector<T> xp(static_cast<std::size_t>(g.batch * g.in_channels * hp * wp), T(0));
  const i64 planes = g.batch * g.in_channels;
#pragma omp parallel for schedule(static)
  for (i64 p = 0; p < planes; ++p) {
    const T* src = x.data() + p * g.in_h * g.in_w;
    T* dst = xp.data() + p * hp * wp + g.padding * wp + g.padding;
    for (i64 iy = 0; iy < g.in_h; ++iy) {
      std::copy(src + iy * g.in_w, src + (iy + 1) * g.in_w, dst + iy * wp);
    }
  }
  return xp;
}

}  // namespace

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  for (i64 n = 0; n < g.batch; ++n) {
    for (i64 co = 0; co < g.out_channels; ++co) {
      const i64 grp = co / opg;
      for (i64 oy = 0; oy < oh; ++oy) {
        for (i64 ox = 0; ox < ow; ++ox) {
          Acc<T> acc = 0.0;
          for (i64 cil = 0; cil < ipg; ++cil) {
            const i64 ci = grp * ipg + cil;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 iy = oy * g.stride - g.padding + ky * g.dilation;
              if (iy < 0 || iy >= g.in_h) continue;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 ix = ox * g.stride - g.padding + kx * g.dilation;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += static_cast<Acc<T>>(w[static_cast<std::size_t>(((co * ipg + cil) * k + ky) * k + kx)]) *
                       static_cast<Acc<T>>(x[static_cast<std::size_t>(((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix)]);
              }
            }
          }
          if (!bias.empty()) acc += static_cast<Acc<T>>(bias[static_cast<std::size_t>(co)]);
          y[static_cast<std::size_t>(((n * g.out_channels + co) * oh + oy) * ow + ox)] = static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  for (i64 n = 0; n < g.batch; ++n) {
    for (i64 ci = 0; ci < g.in_channels; ++ci) {
      const i64 grp = ci / ipg, cil = ci % ipg;
      for (i64 iy = 0; iy < g.in_h; ++iy) {
        for (i64 ix = 0; ix < g.in_w; ++ix) {
          Acc<T> acc = 0.0;
          for (i64 col = 0; col < opg; ++col) {
            const i64 co = grp * opg + col;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 ty = iy + g.padding - ky * g.dilation;
              if (ty < 0 || ty % g.stride != 0 || ty / g.stride >= oh) continue;
              const i64 oy = ty / g.stride;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 tx = ix + g.padding - kx * g.dilation;
                if (tx < 0 || tx % g.stride != 0 || tx / g.stride >= ow) continue;
                const i64 ox = tx / g.stride;
                acc += static_cast<Acc<T>>(w[static_cast<std::size_t>(((co * ipg + cil) * k + ky) * k + kx)]) *
                       static_cast<Acc<T>>(dy[static_cast<std::size_t>(((n * g.out_channels + co) * oh + oy) * ow + ox)]);
              }
            }
          }
          dx[static_cast<std::size_t>(((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix)] += static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  for (i64 co = 0; co < g.out_channels; ++co) {
    const i64 grp = co / opg;
    for (i64 cil = 0; cil < ipg; ++cil) {
      const i64 ci = grp * ipg + cil;
      for (i64 ky = 0; ky < k; ++ky) {
        for (i64 kx = 0; kx < k; ++kx) {
          Acc<T> acc = 0.0;
          for (i64 n = 0; n < g.batch; ++n) {
            for (i64 oy = 0; oy < oh; ++oy) {
              const i64 iy = oy * g.stride - g.padding + ky * g.dilation;
              if (iy < 0 || iy >= g.in_h) continue;
              for (i64 ox = 0; ox < ow; ++ox) {
                const i64 ix = ox * g.stride - g.padding + kx * g.dilation;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += static_cast<Acc<T>>(dy[static_cast<std::size_t>(((n * g.out_channels + co) * oh + oy) * ow + ox)]) *
                       static_cast<Acc<T>>(x[static_cast<std::size_t>(((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix)]);
              }
            }
          }
          dw[static_cast<std::size_t>(((co * ipg + cil) * k + ky) * k + kx)] += static_cast<T>(acc);
        }
      }
    }
  }
}

}  // namespace reference

namespace parallel {

// Padding the input with zeros removes bounds checks from the inner loops.
// Zero products never change a double accumulator that started at +0, so
// the padded sums match the reference's bounds-checked sums bit for bit.

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 s = g.stride, d = g.dilation;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  const i64 hp = g.in_h + 2 * g.padding, wp = g.in_w + 2 * g.padding;
  const std::vector<T> xp = pad_planes(g, x);
  const i64 tasks = g.batch * g.out_channels;
#pragma omp parallel
  {
    std::vector<Acc<T>> acc(static_cast<std::size_t>(oh * ow));
#pragma omp for schedule(static)
    for (i64 task = 0; task < tasks; ++task) {
      const i64 n = task / g.out_channels, co = task % g.out_channels;
      const i64 grp = co / opg;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (i64 cil = 0; cil < ipg; ++cil) {
        const T* plane = xp.data() + (n * g.in_channels + grp * ipg + cil) * hp * wp;
        const T* wk = w.data() + (co * ipg + cil) * k * k;
        for (i64 ky = 0; ky < k; ++ky) {
          for (i64 kx = 0; kx < k; ++kx) {
            const Acc<T> wv = static_cast<Acc<T>>(wk[ky * k + kx]);
            for (i64 oy = 0; oy < oh; ++oy) {
              const T* row = plane + (oy * s + ky * d) * wp + kx * d;
              Acc<T>* a = acc.data() + oy * ow;
              if (s == 1) {
                for (i64 ox = 0; ox < ow; ++ox) a[ox] += wv * static_cast<Acc<T>>(row[ox]);
              } else {
                for (i64 ox = 0; ox < ow; ++ox) a[ox] += wv * static_cast<Acc<T>>(row[ox * s]);
              }
            }
          }
        }
      }
      const Acc<T> b = bias.empty() ? 0.0 : static_cast<Acc<T>>(bias[static_cast<std::size_t>(co)]);
      T* out = y.data() + task * oh * ow;
      if (bias.empty()) {
        for (i64 i = 0; i < oh * ow; ++i) out[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
      } else {
        for (i64 i = 0; i < oh * ow; ++i) out[i] = static_cast<T>(acc[static_cast<std::size_t>(i)] + b);
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 s = g.stride, d = g.dilation, p = g.padding;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  const i64 hp = g.in_h + 2 * p, wp = g.in_w + 2 * p;
  const i64 tasks = g.batch * g.in_channels;
#pragma omp parallel
  {
    std::vector<Acc<T>> acc(static_cast<std::size_t>(hp * wp));
#pragma omp for schedule(static)
    for (i64 task = 0; task < tasks; ++task) {
      const i64 n = task / g.in_channels, ci = task % g.in_channels;
      const i64 grp = ci / ipg, cil = ci % ipg;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (i64 col = 0; col < opg; ++col) {
        const i64 co = grp * opg + col;
        const T* grad = dy.data() + (n * g.out_channels + co) * oh * ow;
        const T* wk = w.data() + (co * ipg + cil) * k * k;
        for (i64 ky = 0; ky < k; ++ky) {
          for (i64 kx = 0; kx < k; ++kx) {
            const Acc<T> wv = static_cast<Acc<T>>(wk[ky * k + kx]);
            for (i64 oy = 0; oy < oh; ++oy) {
              Acc<T>* dst = acc.data() + (oy * s + ky * d) * wp + kx * d;
              const T* src = grad + oy * ow;
              if (s == 1) {
                for (i64 ox = 0; ox < ow; ++ox) dst[ox] += wv * static_cast<Acc<T>>(src[ox]);
              } else {
                for (i64 ox = 0; ox < ow; ++ox) dst[ox * s] += wv * static_cast<Acc<T>>(src[ox]);
              }
            }
          }
        }
      }
      T* out = dx.data() + task * g.in_h * g.in_w;
      for (i64 iy = 0; iy < g.in_h; ++iy) {
        const Acc<T>* a = acc.data() + (iy + p) * wp + p;
        for (i64 ix = 0; ix < g.in_w; ++ix) out[iy * g.in_w + ix] += static_cast<T>(a[ix]);
      }
    }
  }
}

// Gradients are laid out pixel-major per group so one input value feeds a
// contiguous run of output channels; each (co, tap) still sums in (n, oy, ox).
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const i64 oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const i64 s = g.stride, d = g.dilation;
  const i64 ipg = g.in_per_group(), opg = g.out_per_group();
  const i64 hp = g.in_h + 2 * g.padding, wp = g.in_w + 2 * g.padding;
  const i64 npix = oh * ow;
  const std::vector<T> xp = pad_planes(g, x);
  const i64 kk = k * k;
  std::vector<i64> offset(static_cast<std::size_t>(kk));
  for (i64 ky = 0; ky < k; ++ky)
    for (i64 kx = 0; kx < k; ++kx) offset[static_cast<std::size_t>(ky * k + kx)] = ky * d * wp + kx * d;
  if (opg < 4) {
    // Narrow groups: independent tap accumulators per (co, cil).
    const i64 tasks = g.out_channels * ipg;
#pragma omp parallel
    {
      std::vector<Acc<T>> acc(static_cast<std::size_t>(kk));
#pragma omp for schedule(static)
      for (i64 task = 0; task < tasks; ++task) {
        const i64 co = task / ipg, cil = task % ipg;
        const i64 ci = (co / opg) * ipg + cil;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (i64 n = 0; n < g.batch; ++n) {
          const T* plane = xp.data() + (n * g.in_channels + ci) * hp * wp;
          const T* grad = dy.data() + (n * g.out_channels + co) * npix;
          for (i64 oy = 0; oy < oh; ++oy) {
            for (i64 ox = 0; ox < ow; ++ox) {
              const Acc<T> dv = static_cast<Acc<T>>(grad[oy * ow + ox]);
              const T* base = plane + oy * s * wp + ox * s;
              for (i64 t = 0; t < kk; ++t) {
                acc[static_cast<std::size_t>(t)] += dv * static_cast<Acc<T>>(base[offset[static_cast<std::size_t>(t)]]);
              }
            }
          }
        }
        T* out = dw.data() + task * kk;
        for (i64 t = 0; t < kk; ++t) out[t] += static_cast<T>(acc[static_cast<std::size_t>(t)]);
      }
    }
    return;
  }
  std::vector<Acc<T>> dyt(static_cast<std::size_t>(g.batch * g.out_channels * npix));
  const i64 slabs = g.batch * g.groups;
#pragma omp parallel for schedule(static)
  for (i64 slab = 0; slab < slabs; ++slab) {
    const T* src = dy.data() + slab * opg * npix;
    Acc<T>* dst = dyt.data() + slab * opg * npix;
    for (i64 col = 0; col < opg; ++col)
      for (i64 i = 0; i < npix; ++i) dst[i * opg + col] = static_cast<Acc<T>>(src[col * npix + i]);
  }
  const i64 tasks = g.groups * ipg;
#pragma omp parallel
  {
    std::vector<Acc<T>> acc(static_cast<std::size_t>(kk * opg));
#pragma omp for schedule(static)
    for (i64 task = 0; task < tasks; ++task) {
      const i64 grp = task / ipg, cil = task % ipg;
      const i64 ci = grp * ipg + cil;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (i64 n = 0; n < g.batch; ++n) {
        const T* plane = xp.data() + (n * g.in_channels + ci) * hp * wp;
        const Acc<T>* grad = dyt.data() + (n * g.groups + grp) * opg * npix;
        for (i64 oy = 0; oy < oh; ++oy) {
          for (i64 ox = 0; ox < ow; ++ox) {
            const Acc<T>* dv = grad + (oy * ow + ox) * opg;
            const T* base = plane + oy * s * wp + ox * s;
            for (i64 t = 0; t < kk; ++t) {
              const Acc<T> xv = static_cast<Acc<T>>(base[offset[static_cast<std::size_t>(t)]]);
              Acc<T>* a = acc.data() + t * opg;
              for (i64 col = 0; col < opg; ++col) a[col] += xv * dv[col];
            }
          }
        }
      }
      for (i64 col = 0; col < opg; ++col) {
        T* out = dw.data() + ((grp * opg + col) * ipg + cil) * kk;
        for (i64 t = 0; t < kk; ++t) out[t] += static_cast<T>(acc[static_cast<std::size_t>(t * opg + col)]);
      }
    }
  }
}

}  // namespace parallel

template <typename T>
void conv2d_backward_bias(const ConvGeometry& g, std::span<const T> dy, std::span<T> db) {
  const i64 plane = g.out_h() * g.out_w();
  for (i64 co = 0; co < g.out_channels; ++co) {
    Acc<T> acc = 0.0;
    for (i64 n = 0; n < g.batch; ++n) {
      const T* grad = dy.data() + (n * g.out_channels + co) * plane;
      for (i64 i = 0; i < plane; ++i) acc += static_cast<Acc<T>>(grad[i]);
    }
    db[static_cast<std::size_t>(co)] += static_cast<T>(acc);
  }
}

void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }

int num_threads() { return omp_get_max_threads(); }

int configure_threads_from_env() {
  int n = 1;
  if (const char* env = std::getenv("RSPNET_THREADS"); env != nullptr && *env != '\0') {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("RSPNET_THREADS must be a positive integer, got '") + env + "'");
    }
    if (n < 1) throw ValidationError("RSPNET_THREADS must be >= 1");
  }
  set_num_threads(n);
  return n;
}

#define RSPNET_INSTANTIATE_CONV(T)                                                                  \
  template void reference::conv2d_forward<T>(const ConvGeometry&, std::span<const T>,              \
                                             std::span<const T>, std::span<const T>, std::span<T>); \
  template void reference::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,       \
                                                    std::span<const T>, std::span<T>);             \
  template void reference::conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,      \
                                                     std::span<const T>, std::span<T>);            \
  template void parallel::conv2d_forward<T>(const ConvGeometry&, std::span<const T>,               \
                                            std::span<const T>, std::span<const T>, std::span<T>);  \
  template void parallel::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,        \
                                                   std::span<const T>, std::span<T>);              \
  template void parallel::conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,       \
                                                    std::span<const T>, std::span<T>);             \
  template void conv2d_backward_bias<T>(const ConvGeometry&, std::span<const T>, std::span<T>);

RSPNET_INSTANTIATE_CONV(float)
RSPNET_INSTANTIATE_CONV(double)
RSPNET_INSTANTIATE_CONV(long double)

#undef RSPNET_INSTANTIATE_CONV

}  // namespace rspnet::kernels
