#include "rspnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace rspnet {

Shape::Shape(std::initializer_list<std::int64_t> dims)
    : Shape(std::span<const std::int64_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::int64_t> dims) {
  if (dims.size() > static_cast<std::size_t>(kMaxRank)) {
    throw ValidationError("shape rank " + std::to_string(dims.size()) + " exceeds 4");
  }
  for (std::int64_t d : dims) {
    if (d < 1) throw ValidationError("shape extents must be positive");
    dims_[static_cast<std::size_t>(rank_++)] = d;
  }
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
  return n;
}

Shape Shape::with(int axis, std::int64_t extent) const {
  if (axis < 0 || axis >= rank_) throw ValidationError("axis out of range for " + str());
  Shape s = *this;
  s.dims_[static_cast<std::size_t>(axis)] = extent;
  return s;
}

std::int64_t Shape::outer(int axis) const {
  std::int64_t n = 1;
  for (int i = 0; i < axis; ++i) n *= dims_[static_cast<std::size_t>(i)];
  return n;
}

std::int64_t Shape::inner(int axis) const {
  std::int64_t n = 1;
  for (int i = axis + 1; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << 'x';
    os << dims_[static_cast<std::size_t>(i)];
  }
  os << ')';
  return os.str();
}

bool operator==(const Shape& a, const Shape& b) {
  if (a.rank_ != b.rank_) return false;
  return std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  if (static_cast<std::int64_t>(data.size()) != shape.numel()) {
    throw ValidationError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape.str());
  }
  node_->shape = shape;
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), value),
                requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + shape().str());
  return node_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(node_->shape, node_->data, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, Rule backward) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ValidationError("backward: loss must be a scalar, got " +
                          (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ValidationError("backward: loss is not connected to any recorded operation");
  }
  // The loss buffer itself is the seed; it is not accumulated into.
  loss.node()->grad.assign(1, T(1));
  // Suspend recording so backward rules cannot append to the tape they replay.
  NoGradScope<T> no_grad;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

template <typename T>
Tape<T>*& Tape<T>::active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace rspnet
