#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rspnet/rng.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // max |autodiff - numeric| / max(max |numeric|, 1e-8), scaled per tensor.
  double max_scaled_error = 0.0;
  std::int64_t entries_checked = 0;
  // Location of the worst entry.
  std::size_t worst_tensor = 0;
  std::int64_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-3;
  // When set, check at most this many randomly chosen entries per tensor.
  std::optional<std::int64_t> max_entries_per_tensor;
  std::uint64_t sample_seed = 0;
};

/// Compares reverse-mode gradients of a scalar-valued `loss` with central
/// differences, perturbing every (or a sampled subset of) entry of `params`.
/// Error per entry: |autodiff - numeric| / max(|numeric|, 1e-8).
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss, std::span<Tensor<T>> params,
                           const GradCheckOptions& opts = {});

/// A scalar loss together with the tensors it is differentiated against.
template <typename T>
struct LossProblem {
  std::function<Tensor<T>()> loss;
  std::vector<Tensor<T>> params;
};

/// Checks reverse-mode gradients computed in TA against central differences
/// taken on a wider TN evaluation of the same loss (TA, TN in float/double,
/// float/long double, double/long double). `high.params` must mirror
/// `low.params` entry for entry; their values are overwritten with the
/// promoted TA values before differencing.
template <typename TA, typename TN>
GradCheckResult grad_check_mixed(LossProblem<TA>& low, LossProblem<TN>& high, const GradCheckOptions& opts = {});

template <typename T>
struct Precision {
  using type = T;
};

/// `build(Precision<T>{})` must return a LossProblem<T> for T in {TA, TN}.
template <typename TA = float, typename TN = double, typename Builder>
GradCheckResult grad_check_mixed(Builder&& build, const GradCheckOptions& opts = {}) {
  LossProblem<TA> low = build(Precision<TA>{});
  LossProblem<TN> high = build(Precision<TN>{});
  return grad_check_mixed<TA, TN>(low, high, opts);
}

/// Single-input form: `fn` maps x to a scalar.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, Tensor<T> x,
                  double step);

}  // namespace rspnet
