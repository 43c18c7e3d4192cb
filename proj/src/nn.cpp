#include "srn/nn.hpp"

#include <cmath>

namespace srn::nn {

template <typename T>
ag::Var<T> ParamStore<T>::add(std::string name, Tensor<T> init, ParamGroup group, int stage) {
  SRN_CHECK(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  auto v = ag::Var<T>::leaf(std::move(init), true);
  params_.push_back({std::move(name), v, group, stage});
  return v;
}

template <typename T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
size_t ParamStore<T>::count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng, double gain) {
  Tensor<T> t(std::move(shape));
  const double sd = std::sqrt(gain / fan_in);
  for (auto& v : t.values()) v = static_cast<T>(sd * rng.normal());
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, ag::Conv2dOptions opt,
                  Rng& rng, ParamGroup group, int stage)
    : options(opt) {
  weight = store.add(name + ".weight", he_normal<T>({cout, cin, k, k}, cin * k * k, rng, 2.0), group, stage);
  bias = store.add(name + ".bias", Tensor<T>({cout}), group, stage);
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool with_bias,
                  double gain) {
  weight = store.add(name + ".weight", he_normal<T>({out, in}, in, rng, gain));
  if (with_bias) bias = store.add(name + ".bias", Tensor<T>({out}));
}

template <typename T>
ag::Var<T> Linear<T>::operator()(const ag::Var<T>& x) const {
  if (x.value().rank() == 3) {
    const int b = x.dim(0), p = x.dim(1);
    auto flat = ag::reshape(x, {b * p, x.dim(2)});
    auto y = ag::linear(flat, weight, bias);
    return ag::reshape(y, {b, p, weight.dim(0)});
  }
  return ag::linear(x, weight, bias);
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template Tensor<float> he_normal<float>(Shape, int, Rng&, double);
template Tensor<double> he_normal<double>(Shape, int, Rng&, double);

}  // namespace srn::nn
