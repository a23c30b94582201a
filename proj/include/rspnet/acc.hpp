#pragma once

#include <type_traits>

namespace rspnet {

/// Accumulator type: double for float and double storage, the storage type
/// itself when it is wider.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

}  // namespace rspnet
