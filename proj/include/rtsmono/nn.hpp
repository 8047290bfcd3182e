#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rtsmono/autograd.hpp"
#include "rtsmono/ops.hpp"

namespace rtsmono {

/// Seeded generator with a platform-independent uniform mapping.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Ordered registry of trainable leaves; order defines checkpoint and optimizer layout.
template <typename T>
class ParameterList {
 public:
  Var<T> add(std::string name, Tensor<T> init);
  const std::vector<NamedParam<T>>& items() const { return items_; }
  std::vector<NamedParam<T>>& items() { return items_; }
  std::int64_t count() const;
  /// Parameter count of entries whose name starts with prefix.
  std::int64_t count(const std::string& prefix) const;
  const NamedParam<T>* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<NamedParam<T>> items_;
};

/// Convolution layer: Kaiming-uniform (fan-in) weights, zero bias.
template <typename T>
struct Conv2d {
  ConvSpec spec;
  Var<T> weight;
  Var<T> bias;
  bool has_bias = true;

  static Conv2d create(ParameterList<T>& params, const std::string& name, const ConvSpec& spec, Rng& rng,
                       bool bias = true);
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, has_bias ? &bias : nullptr, spec); }
};

}  // namespace rtsmono
