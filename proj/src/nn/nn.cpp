#include "rtsmono/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace rtsmono {

template <typename T>
Var<T> ParameterList<T>::add(std::string name, Tensor<T> init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  Var<T> v(std::move(init), true);
  items_.push_back({std::move(name), v});
  return v;
}

template <typename T>
std::int64_t ParameterList<T>::count() const {
  std::int64_t n = 0;
  for (const auto& p : items_) n += p.var.size();
  return n;
}

template <typename T>
std::int64_t ParameterList<T>::count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& p : items_) {
    if (p.name.rfind(prefix, 0) == 0) n += p.var.size();
  }
  return n;
}

template <typename T>
const NamedParam<T>* ParameterList<T>::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
void ParameterList<T>::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParameterList<T>& params, const std::string& name, const ConvSpec& spec, Rng& rng,
                            bool bias) {
  spec.validate();
  Conv2d c;
  c.spec = spec;
  c.has_bias = bias;
  const double fan_in = static_cast<double>(spec.in_channels / spec.groups * spec.kernel_h * spec.kernel_w);
  const double bound = std::sqrt(6.0 / fan_in);
  Tensor<T> w(spec.weight_shape());
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  c.weight = params.add(name + ".weight", std::move(w));
  if (bias) c.bias = params.add(name + ".bias", Tensor<T>({spec.out_channels}));
  return c;
}

template class ParameterList<float>;
template class ParameterList<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;

}  // namespace rtsmono
