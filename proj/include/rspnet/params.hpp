#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "rspnet/error.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

/// Owns the list of learnable tensors of one model, in creation order.
template <typename T>
class ParamStore {
 public:
  /// Registers `init` under `id` and marks it as requiring a gradient.
  Tensor<T> create(std::string id, Tensor<T> init) {
    if (!ids_.insert(id).second) throw ValidationError("duplicate weight id '" + id + "'");
    init.set_requires_grad(true);
    weights_.push_back(Weight<T>{init, std::move(id)});
    return init;
  }

  std::span<const Weight<T>> weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }

  /// Sum of buffer lengths over every registered weight.
  std::int64_t total() const {
    std::int64_t n = 0;
    for (const auto& w : weights_) n += w.tensor.numel();
    return n;
  }

  /// Sum of buffer lengths over weights whose id starts with `prefix`.
  std::int64_t total_with_prefix(std::string_view prefix) const {
    std::int64_t n = 0;
    for (const auto& w : weights_) {
      if (std::string_view(w.id).starts_with(prefix)) n += w.tensor.numel();
    }
    return n;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(weights_.size());
    for (const auto& w : weights_) out.push_back(w.tensor);
    return out;
  }

  void clear_grads() const {
    for (const auto& w : weights_) w.tensor.clear_grad();
  }

 private:
  std::vector<Weight<T>> weights_;
  std::unordered_set<std::string> ids_;
};

}  // namespace rspnet
