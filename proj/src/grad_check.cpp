#include "rspnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rspnet {

namespace {

template <typename T>
std::vector<std::vector<T>> autodiff_gradients(LossProblem<T>& problem) {
  std::vector<bool> saved;
  for (auto& p : problem.params) {
    saved.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.clear_grad();
  }
  std::vector<std::vector<T>> grads;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> value = problem.loss();
    tape.backward(value);
    for (auto& p : problem.params) {
      if (p.has_grad()) {
        grads.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        grads.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      }
      p.clear_grad();
    }
  }
  for (std::size_t i = 0; i < saved.size(); ++i) problem.params[i].set_requires_grad(saved[i]);
  return grads;
}

// Analytic gradients come from `analytic`; central differences are taken on
// `numeric`, whose parameters mirror the analytic ones.
template <typename TA, typename TN>
GradCheckResult compare(LossProblem<TA>& analytic, LossProblem<TN>& numeric,
                        const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw ValidationError("grad_check: step must be positive");
  if (analytic.params.size() != numeric.params.size()) {
    throw ValidationError("grad_check: parameter lists differ in length");
  }
  const auto grads = autodiff_gradients(analytic);

  using A = Acc<TN>;
  auto evaluate = [&]() {
    NoGradScope<TN> no_grad;
    return static_cast<A>(numeric.loss().item());
  };

  GradCheckResult result;
  Rng sampler(opts.sample_seed);
  for (std::size_t t = 0; t < numeric.params.size(); ++t) {
    Tensor<TN>& p = numeric.params[t];
    if (p.numel() != analytic.params[t].numel()) {
      throw ValidationError("grad_check: mirrored parameter " + std::to_string(t) + " has shape " +
                            p.shape().str() + " vs " + analytic.params[t].shape().str());
    }
    std::vector<std::int64_t> indices(static_cast<std::size_t>(p.numel()));
    std::iota(indices.begin(), indices.end(), std::int64_t{0});
    if (opts.max_entries_per_tensor && *opts.max_entries_per_tensor < p.numel()) {
      std::shuffle(indices.begin(), indices.end(), sampler);
      indices.resize(static_cast<std::size_t>(*opts.max_entries_per_tensor));
      std::sort(indices.begin(), indices.end());
    }
    double tensor_abs = 0.0, tensor_scale = 0.0;
    for (std::int64_t idx : indices) {
      const TN original = p.at(idx);
      const TN plus = static_cast<TN>(static_cast<A>(original) + static_cast<A>(opts.step));
      const TN minus = static_cast<TN>(static_cast<A>(original) - static_cast<A>(opts.step));
      p.at(idx) = plus;
      const A f_plus = evaluate();
      p.at(idx) = minus;
      const A f_minus = evaluate();
      p.at(idx) = original;
      // Divide by the step actually realized in storage precision.
      const double fd = static_cast<double>((f_plus - f_minus) / (static_cast<A>(plus) - static_cast<A>(minus)));
      const double ad = static_cast<double>(grads[t][static_cast<std::size_t>(idx)]);
      const double err = std::abs(ad - fd) / std::max(std::abs(fd), 1e-8);
      tensor_abs = std::max(tensor_abs, std::abs(ad - fd));
      tensor_scale = std::max(tensor_scale, std::abs(fd));
      ++result.entries_checked;
      if (err > result.max_rel_error || result.entries_checked == 1) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = idx;
        result.worst_autodiff = ad;
        result.worst_numeric = fd;
      }
    }
    result.max_scaled_error = std::max(result.max_scaled_error, tensor_abs / std::max(tensor_scale, 1e-8));
  }
  return result;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss, std::span<Tensor<T>> params,
                           const GradCheckOptions& opts) {
  LossProblem<T> problem{loss, std::vector<Tensor<T>>(params.begin(), params.end())};
  return compare(problem, problem, opts);
}

template <typename TA, typename TN>
GradCheckResult grad_check_mixed(LossProblem<TA>& low, LossProblem<TN>& high, const GradCheckOptions& opts) {
  if (low.params.size() != high.params.size()) {
    throw ValidationError("grad_check_mixed: parameter lists differ in length");
  }
  for (std::size_t i = 0; i < low.params.size(); ++i) {
    auto src = low.params[i].data();
    auto dst = high.params[i].data();
    if (src.size() != dst.size()) {
      throw ValidationError("grad_check_mixed: parameter " + std::to_string(i) + " shape " +
                            low.params[i].shape().str() + " vs " + high.params[i].shape().str());
    }
    std::transform(src.begin(), src.end(), dst.begin(), [](TA v) { return static_cast<TN>(v); });
  }
  return compare(low, high, opts);
}

template GradCheckResult grad_check_mixed<float, double>(LossProblem<float>&, LossProblem<double>&,
                                                         const GradCheckOptions&);
template GradCheckResult grad_check_mixed<float, long double>(LossProblem<float>&, LossProblem<long double>&,
                                                              const GradCheckOptions&);
template GradCheckResult grad_check_mixed<double, long double>(LossProblem<double>&, LossProblem<long double>&,
                                                               const GradCheckOptions&);

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, Tensor<T> x, double step) {
  std::vector<Tensor<T>> params{x};
  GradCheckOptions opts;
  opts.step = step;
  return grad_check<T>([&]() { return fn(x); }, std::span<Tensor<T>>(params), opts).max_rel_error;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>()>&,
                                           std::span<Tensor<float>>, const GradCheckOptions&);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>()>&,
                                            std::span<Tensor<double>>, const GradCheckOptions&);
template double grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                  Tensor<float>, double);
template double grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                   Tensor<double>, double);

}  // namespace rspnet
