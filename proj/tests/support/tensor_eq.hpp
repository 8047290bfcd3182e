#pragma once

#include <algorithm>

#include "rtsmono/tensor.hpp"

namespace rtsmono::testing {

/// Bitwise-equal values and identical shapes.
template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

}  // namespace rtsmono::testing
