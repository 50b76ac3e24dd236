#include "grasp/nn/adam.hpp"

#include <cmath>

namespace grasp::nn {

template <typename T>
void Adam<T>::step(std::span<Param<T>* const> params) {
  if (m_.empty()) {
    for (const Param<T>* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (params.size() != m_.size()) {
    throw Error(Errc::ShapeMismatch, "Adam: parameter count changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param<T>& p = *params[i];
    if (p.value.shape() != m_[i].shape() || p.grad.shape() != p.value.shape()) {
      throw Error(Errc::ShapeMismatch, "Adam: shape mismatch for " + p.name);
    }
  }

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    T* value = p.value.data();
    const T* grad = p.grad.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = grad[k];
      const double mk = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      const double vk = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update =
          config_.lr * (mk / correction1) / (std::sqrt(vk / correction2) + config_.epsilon);
      value[k] = static_cast<T>(value[k] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace grasp::nn
