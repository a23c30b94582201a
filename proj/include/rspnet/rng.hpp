#pragma once

#include <cstdint>
#include <random>

#include "rspnet/tensor.hpp"

namespace rspnet {

/// The one generator type used everywhere; always passed explicitly.
using Rng = std::mt19937_64;

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng,
                         bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t = Tensor<T>::zeros(shape, requires_grad);
  // Draws are rounded to float so both precisions see identical values.
  for (T& v : t.data()) v = static_cast<T>(static_cast<float>(dist(rng)));
  return t;
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, double mean, double stddev, Rng& rng,
                        bool requires_grad = false) {
  std::normal_distribution<double> dist(mean, stddev);
  Tensor<T> t = Tensor<T>::zeros(shape, requires_grad);
  for (T& v : t.data()) v = static_cast<T>(static_cast<float>(dist(rng)));
  return t;
}

}  // namespace rspnet
