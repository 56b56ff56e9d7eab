#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/error.hpp"
#include "relpose/tensor.hpp"

namespace relpose {

// Ordered, named collection of trainable leaves. Order is creation order and
// is part of the determinism contract (optimizer sweeps in this order).
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<ad::NodePtr<T>> nodes;

  ad::NodePtr<T> add(const std::string& name, ad::Tensor<T> init) {
    names.push_back(name);
    nodes.push_back(ad::leaf(std::move(init)));
    return nodes.back();
  }

  ad::NodePtr<T> find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return nodes[i];
    return nullptr;
  }

  std::size_t size() const { return nodes.size(); }

  void zero_grad() {
    for (auto& n : nodes) n->zero_grad();
  }
};

template <typename T>
struct AdamState {
  ad::Tensor<T> m, v;
};

// One Adam update with bias correction; step_count is the 1-based step index.
template <typename T>
void adam_step(ad::Tensor<T>& param, const ad::Tensor<T>& grad,
               AdamState<T>& state, long long step_count, T lr,
               T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
  if (!param.same_shape(grad))
    throw ShapeMismatch("adam_step: param " + ad::shape_str(param.shape) +
                        " vs grad " + ad::shape_str(grad.shape));
  if (state.m.data.empty()) {
    state.m = ad::Tensor<T>::zeros(param.shape);
    state.v = ad::Tensor<T>::zeros(param.shape);
  }
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
  for (int i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * g * g;
    const T mhat = state.m[i] / bc1;
    const T vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
class Adam {
 public:
  explicit Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<T>& params, T lr) {
    if (states_.size() < params.size()) states_.resize(params.size());
    ++step_count_;
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_step(params.nodes[i]->value, params.nodes[i]->grad, states_[i],
                step_count_, lr, beta1_, beta2_, eps_);
  }

  long long step_count() const { return step_count_; }
  void set_step_count(long long c) { step_count_ = c; }
  std::vector<AdamState<T>>& states() { return states_; }

 private:
  T beta1_, beta2_, eps_;
  long long step_count_ = 0;
  std::vector<AdamState<T>> states_;
};

// Step decay: lr0 * gamma^floor(epoch / step_size).
inline double step_lr(double lr0, int epoch, int step_size = 6,
                      double gamma = 0.9) {
  if (epoch < 0) throw ConfigError("step_lr: negative epoch");
  return lr0 * std::pow(gamma, epoch / step_size);
}

}  // namespace relpose
