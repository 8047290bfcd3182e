#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "rtsmono/tensor.hpp"

namespace rtsmono::detail {

// Output shape plus per-input element strides aligned to it (0 on broadcast axes).
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool same = false;
};

inline std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ai = in.size() - 1 - k;
    const std::size_t oi = r - 1 - k;
    strides[oi] = (in[ai] == 1 && out[oi] != 1) ? 0 : s;
    s *= in[ai];
  }
  return strides;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_string(a) + " and " + shape_string(b) +
                       " are not broadcast-compatible on axis " + std::to_string(r - 1 - k));
    }
    p.out[r - 1 - k] = std::max(da, db);
  }
  p.stride_a = aligned_strides(a, p.out);
  p.stride_b = aligned_strides(b, p.out);
  return p;
}

// Calls fn(out_index, a_offset, b_offset) over the output in row-major order.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, Fn&& fn) {
  const int r = static_cast<int>(out.size());
  const std::int64_t total = numel(out);
  if (total == 0) return;
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia = sa[r - 1];
  const std::int64_t ib = sb[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0;
  std::int64_t ob = 0;
  for (std::int64_t o = 0; o < total; o += inner) {
    for (std::int64_t j = 0; j < inner; ++j) fn(o + j, oa + j * ia, ob + j * ib);
    for (int ax = r - 2; ax >= 0; --ax) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace rtsmono::detail
