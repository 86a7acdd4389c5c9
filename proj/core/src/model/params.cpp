// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/params.hpp"

#include "bipete/errors.hpp"
#include "bipete/rng.hpp"

namespace bipete::model {

template <typename T>
void ParameterStore<T>::add(std::string name, num::Tensor<T> value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

template <typename T>
std::size_t ParameterStore<T>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename T>
const num::Tensor<T>& ParameterStore<T>::get(std::string_view name) const {
  return tensors_[index_of(name)];
}

template <typename T>
void ParameterStore<T>::set(std::size_t index, num::Tensor<T> value) {
  if (value.shape() != tensors_.at(index).shape()) {
    throw ShapeError("parameter '" + names_[index] + "' is " +
                     num::shape_str(tensors_[index].shape()) + ", got " +
                     num::shape_str(value.shape()));
  }
  tensors_[index] = std::move(value);
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, "init");
  ParameterStore<T> store;
  auto normal = [&](num::Shape shape) {
    std::vector<T> v(num::shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, 0.02));
    return num::Tensor<T>(std::move(shape), std::move(v));
  };
  auto zeros = [](num::Shape shape) { return num::Tensor<T>::zeros(std::move(shape)); };
  auto ones = [](num::Shape shape) { return num::Tensor<T>::filled(std::move(shape), T(1)); };

  const std::size_t d = cfg.d_model;
  {
    auto emb = normal({cfg.vocab_size, d});
    std::vector<T> v = emb.vec();
    std::fill_n(v.begin(), d, T(0));  // PAD row
    store.add("embedding.token", num::Tensor<T>({cfg.vocab_size, d}, std::move(v)));
  }
  if (cfg.kind == ModelKind::bipete) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      store.add(p + "ln1.gamma", ones({d}));
      store.add(p + "ln1.beta", zeros({d}));
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        store.add(p + "attn." + w, normal({d, d}));
      }
      for (const char* b : {"bq", "bk", "bv", "bo"}) {
        store.add(p + "attn." + b, zeros({d}));
      }
      store.add(p + "ln2.gamma", ones({d}));
      store.add(p + "ln2.beta", zeros({d}));
      store.add(p + "ffn.w1", normal({d, cfg.d_ff}));
      store.add(p + "ffn.b1", zeros({cfg.d_ff}));
      store.add(p + "ffn.w2", normal({cfg.d_ff, d}));
      store.add(p + "ffn.b2", zeros({d}));
    }
    store.add("final_ln.gamma", ones({d}));
    store.add("final_ln.beta", zeros({d}));
  }
  const std::size_t h = cfg.gru_hidden;
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = std::string("gru.") + dir + ".";
    store.add(p + "w_ih", normal({d, 3 * h}));
    store.add(p + "w_hh", normal({h, 3 * h}));
    store.add(p + "b_ih", zeros({3 * h}));
    store.add(p + "b_hh", zeros({3 * h}));
  }
  store.add("head.w", normal({2 * h, 1}));
  store.add("head.b", zeros({1}));
  return store;
}

template <typename T>
BoundParameters<T>::BoundParameters(num::Graph<T>& g, const ParameterStore<T>& store,
                                    bool requires_grad)
    : store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) vars_.push_back(g.leaf(store.tensor(i), requires_grad));
}

template <typename T>
num::Var BoundParameters<T>::operator()(std::string_view name) const {
  return vars_[store_->index_of(name)];
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class BoundParameters<float>;
template class BoundParameters<double>;
template ParameterStore<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterStore<double> init_parameters<double>(const ModelConfig&, std::uint64_t);

}  // namespace bipete::model
