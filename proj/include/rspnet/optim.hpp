#pragma once

#include <span>
#include <string>
#include <vector>

#include "rspnet/tensor.hpp"

namespace rspnet {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v;  grads cleared.
template <typename T>
class Sgd {
 public:
  Sgd(std::span<const Weight<T>> weights, SgdConfig cfg);

  /// Weights without a gradient are left untouched; their ids are returned.
  std::vector<std::string> step();

  const SgdConfig& config() const { return cfg_; }
  void set_lr(double lr);
  std::span<const T> velocity(std::size_t i) const { return velocity_[i]; }

 private:
  std::vector<Weight<T>> weights_;
  std::vector<std::vector<T>> velocity_;
  SgdConfig cfg_;
};

}  // namespace rspnet
