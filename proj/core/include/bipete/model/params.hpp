// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bipete/model/config.hpp"
#include "bipete/numerics/graph.hpp"
#include "bipete/numerics/tensor.hpp"

namespace bipete::model {

/// Ordered collection of uniquely named parameter tensors.
template <typename T>
class ParameterStore {
 public:
  void add(std::string name, num::Tensor<T> value);
  const num::Tensor<T>& get(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  void set(std::size_t index, num::Tensor<T> value);

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const num::Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
  std::size_t parameter_count() const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<num::Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fresh parameters: normal(0, 0.02) weights, zero biases, unit layer-norm
/// scales, and a zero PAD embedding row.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Parameter leaves of one graph, looked up by name.
template <typename T>
class BoundParameters {
 public:
  BoundParameters(num::Graph<T>& g, const ParameterStore<T>& store, bool requires_grad);
  num::Var operator()(std::string_view name) const;
  num::Var at(std::size_t index) const { return vars_.at(index); }
  std::size_t size() const noexcept { return vars_.size(); }

 private:
  const ParameterStore<T>* store_;
  std::vector<num::Var> vars_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class BoundParameters<float>;
extern template class BoundParameters<double>;

}  // namespace bipete::model
