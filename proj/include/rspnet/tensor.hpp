#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rspnet/acc.hpp"
#include "rspnet/error.hpp"

namespace rspnet {

/// Dense shape of rank 0..4, laid out row-major (N, C, H, W for feature maps).
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims);
  explicit Shape(std::span<const std::int64_t> dims);

  int rank() const { return rank_; }
  std::int64_t operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const;
  std::span<const std::int64_t> dims() const {
    return {dims_.data(), static_cast<std::size_t>(rank_)};
  }
  Shape with(int axis, std::int64_t extent) const;

  // Product of extents before / after an axis.
  std::int64_t outer(int axis) const;
  std::int64_t inner(int axis) const;

  bool is_scalar() const { return numel() == 1; }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b);

 private:
  std::array<std::int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means "no gradient"
  bool requires_grad = false;
};

/// Shared handle to a dense buffer plus an optional gradient slot. Copies alias
/// the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }
  std::int64_t dim(int axis) const { return node_->shape[axis]; }

  // Handle semantics: constness applies to the handle, not the storage it
  // shares (as with at::Tensor or std::shared_ptr).
  std::span<T> data() const { return node_->data; }
  T item() const;
  T& at(std::int64_t flat) const { return node_->data[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() const { return node_->grad; }
  std::span<T> ensure_grad() const;
  void clear_grad() const { node_->grad.clear(); }

  Tensor clone() const;
  Tensor detach() const;  // copy of the data without gradient tracking

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Learnable tensor with a name that is unique within its model.
template <typename T>
struct Weight {
  Tensor<T> tensor;
  std::string id;
};

/// Append-only record of differentiable operations. Replaying the backward
/// rules in reverse recording order applies the chain rule.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using Rule = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<NodePtr> inputs, NodePtr output, Rule backward);
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  // Tape that operations on this thread record into; nullptr disables recording.
  static Tape* active();

 private:
  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    Rule backward;
  };
  std::vector<Entry> entries_;

  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;
  static Tape*& active_slot();
};

/// Makes a tape active for the current thread for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_slot()) {
    Tape<T>::active_slot() = &tape;
  }
  ~TapeScope() { Tape<T>::active_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on the current thread (inference / statistics).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active_slot()) { Tape<T>::active_slot() = nullptr; }
  ~NoGradScope() { Tape<T>::active_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw ValidationError("backward: no active tape");
  tape->backward(loss);
}

}  // namespace rspnet
