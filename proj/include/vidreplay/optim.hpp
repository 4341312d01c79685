#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vidreplay/errors.hpp"
#include "vidreplay/tensor.hpp"

namespace vidreplay {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Ordered collection of trainable leaves, addressed by name.
class ParamStore {
 public:
  Tensor add(std::string name, Shape shape) {
    if (contains(name)) throw InvalidInput("parameter '" + name + "' registered twice");
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    entries_.push_back({std::move(name), t});
    return t;
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const Tensor& at(std::string_view name) const {
    const NamedParam* p = find(name);
    if (!p) throw InvalidInput("unknown parameter '" + std::string(name) + "'");
    return p->tensor;
  }

  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  // Copies values by name; both stores must hold the same names and shapes.
  void copy_values_from(const ParamStore& other) {
    if (other.size() != size()) throw InvalidInput("copy_values_from: parameter sets differ");
    for (auto& e : entries_) {
      const Tensor& src = other.at(e.name);
      if (src.shape() != e.tensor.shape()) {
        throw ShapeError("copy_values_from: '" + e.name + "' is " + to_string(e.tensor.shape()) + ", source " +
                         to_string(src.shape()));
      }
      e.tensor.assign(src.values());
    }
  }

 private:
  const NamedParam* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  std::vector<NamedParam> entries_;
};

using GradientMap = std::map<std::string, Tensor>;

// Backward pass returning one gradient per parameter in the store; parameters
// the loss does not depend on receive zero tensors.
inline GradientMap backward(const Tensor& loss, const ParamStore& params) {
  for (const auto& p : params) p.tensor.node()->grad.assign(p.tensor.size(), 0.0);
  backward(loss);
  GradientMap grads;
  for (const auto& p : params) {
    grads.emplace(p.name, Tensor::from_buffer(p.tensor.shape(), p.tensor.node()->grad));
  }
  return grads;
}

enum class OptimizerKind { kSgd, kAdam };

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;
  bool initialized = false;
};

struct ParamGroup {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-4;
  std::vector<NamedParam> params;
  AdamState adam;
};

inline ParamGroup make_param_group(OptimizerKind kind, double learning_rate, std::vector<NamedParam> params) {
  ParamGroup group{kind, learning_rate, std::move(params), {}};
  if (kind == OptimizerKind::kAdam) {
    for (const auto& p : group.params) {
      group.adam.first.emplace_back(p.tensor.size(), 0.0);
      group.adam.second.emplace_back(p.tensor.size(), 0.0);
    }
    group.adam.initialized = true;
  }
  return group;
}

namespace detail {

// Gradient for a parameter, or nullptr when the map has none (treated as zero).
inline const Tensor* lookup_grad(const NamedParam& p, const GradientMap& grads) {
  auto it = grads.find(p.name);
  if (it == grads.end()) return nullptr;
  if (it->second.shape() != p.tensor.shape()) {
    throw ShapeError("optimizer: gradient for '" + p.name + "' is " + to_string(it->second.shape()) +
                     ", parameter is " + to_string(p.tensor.shape()));
  }
  return &it->second;
}

}  // namespace detail

// Plain SGD without momentum: p <- p - lr * g.
inline void sgd_step(ParamGroup& group, const GradientMap& grads) {
  if (group.kind != OptimizerKind::kSgd) throw StateError("sgd_step: group is not tagged plain-SGD");
  for (auto& p : group.params) {
    const Tensor* g = detail::lookup_grad(p, grads);
    if (!g) continue;
    auto values = p.tensor.mutable_values();
    auto gv = g->values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= group.learning_rate * gv[i];
  }
}

// Adam with bias correction.
inline void adam_step(ParamGroup& group, const GradientMap& grads, AdamConstants c = {}) {
  if (group.kind != OptimizerKind::kAdam) throw StateError("adam_step: group is not tagged Adam");
  auto& st = group.adam;
  if (!st.initialized || st.first.size() != group.params.size()) {
    throw StateError("adam_step: moment state not initialized");
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < group.params.size(); ++k) {
    auto& p = group.params[k];
    const Tensor* g = detail::lookup_grad(p, grads);
    auto values = p.tensor.mutable_values();
    auto& m = st.first[k];
    auto& v = st.second[k];
    if (m.size() != values.size()) throw StateError("adam_step: moment shape does not match '" + p.name + "'");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = g ? g->values()[i] : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= group.learning_rate * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace vidreplay
