#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> m;
  TensorT<T> v;

  ParamT() = default;
  ParamT(std::string n, TensorT<T> val)
      : name(std::move(n)), value(std::move(val)), grad(value.shape), m(value.shape),
        v(value.shape) {}

  void zero_grad() { grad.zero(); }
};

using Param = ParamT<float>;

struct OptimizerConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t t = 0;

  void validate() const {
    if (!(alpha > 0)) throw ConfigError("adam: alpha must be positive");
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("adam: beta1 must be in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("adam: beta2 must be in (0,1)");
    if (!(epsilon > 0)) throw ConfigError("adam: epsilon must be positive");
  }
};

/// One Adam update over every parameter; increments config.t first so the
/// bias correction sees t = 1 on the first call.
template <typename T>
void adam_step(std::vector<ParamT<T>*>& params, OptimizerConfig& config) {
  config.validate();
  config.t += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(config.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(config.t));
  for (ParamT<T>* p : params) {
    const size_t n = p->value.data.size();
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(p->grad.data[i]);
      if (!std::isfinite(g))
        throw NumericError("adam: non-finite gradient in parameter '" + p->name + "'");
      const double m = config.beta1 * p->m.data[i] + (1.0 - config.beta1) * g;
      const double v = config.beta2 * p->v.data[i] + (1.0 - config.beta2) * g * g;
      p->m.data[i] = static_cast<T>(m);
      p->v.data[i] = static_cast<T>(v);
      const double mhat = m / c1;
      const double vhat = v / c2;
      p->value.data[i] -= static_cast<T>(config.alpha * mhat / (std::sqrt(vhat) + config.epsilon));
    }
  }
}

template <typename T>
void adam_step(std::vector<ParamT<T>>& params, OptimizerConfig& config) {
  std::vector<ParamT<T>*> ptrs;
  ptrs.reserve(params.size());
  for (auto& p : params) ptrs.push_back(&p);
  adam_step(ptrs, config);
}

}  // namespace cseg
