// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unisign/core/rng.hpp"
#include "unisign/tensor/tensor.hpp"

namespace unisign::nn {

template <class S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

/// Flat, named view over the parameters of a module tree. Modules expose
/// `collect_params(ParamList&)` and register children with `child()`.
template <class S>
class ParamList {
 public:
  void add(const std::string& name, const Tensor<S>& t) { items_.push_back({prefix_ + name, t}); }

  template <class Module>
  void child(const std::string& name, Module& m) {
    const std::string saved = prefix_;
    prefix_ += name + ".";
    m.collect_params(*this);
    prefix_ = saved;
  }

  std::vector<NamedParam<S>>& items() { return items_; }
  const std::vector<NamedParam<S>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  Index count() const {
    Index n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::string prefix_;
  std::vector<NamedParam<S>> items_;
};

template <class Module>
auto params_of(Module& m) {
  ParamList<typename Module::scalar_type> list;
  m.collect_params(list);
  return list;
}

template <class S>
Tensor<S> param_uniform(Shape shape, double bound, Rng& rng) {
  std::vector<S> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(uniform(rng, -bound, bound));
  return Tensor<S>::from(std::move(v), std::move(shape), true);
}

template <class S>
Tensor<S> param_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<S> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(stddev * normal01(rng));
  return Tensor<S>::from(std::move(v), std::move(shape), true);
}

template <class S>
Tensor<S> param_full(Shape shape, S value) {
  return Tensor<S>::full(std::move(shape), value, true);
}

}  // namespace unisign::nn
