#pragma once

// Parameter storage and the two trainable layer types everything else is
// built from.

#include <string>
#include <vector>

#include "srn/autograd.hpp"

namespace srn::nn {

enum class ParamGroup { kBackbone, kHead };

template <typename T>
struct Param {
  std::string name;
  ag::Var<T> var;
  ParamGroup group = ParamGroup::kHead;
  int stage = 0;  // backbone stage (1-based) for kBackbone params, else 0
};

template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  ag::Var<T> add(std::string name, Tensor<T> init, ParamGroup group = ParamGroup::kHead, int stage = 0);

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  const Param<T>* find(const std::string& name) const;
  size_t count() const;  // scalar parameter count
  void zero_grad();

 private:
  std::vector<Param<T>> params_;
};

/// He-normal (fan-in) initialized tensor.
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng, double gain = 1.0);

template <typename T>
struct Conv2d {
  ag::Var<T> weight;
  ag::Var<T> bias;
  ag::Conv2dOptions options;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, ag::Conv2dOptions opt, Rng& rng,
         ParamGroup group = ParamGroup::kHead, int stage = 0);
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, weight, bias, options); }
};

template <typename T>
struct Linear {
  ag::Var<T> weight;  // (out, in)
  ag::Var<T> bias;    // (out)

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true,
         double gain = 2.0);
  /// x: (N, in) -> (N, out); rank-3 input (B, P, in) is treated as (B*P, in).
  ag::Var<T> operator()(const ag::Var<T>& x) const;
};

}  // namespace srn::nn
