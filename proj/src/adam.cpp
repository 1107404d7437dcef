#include "occfeat/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace occfeat::nn {

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (auto* p : params_) {
    if (p->grad.dims() != p->value.dims()) {
      throw std::invalid_argument("Adam: grad/value dims differ for " + p->name);
    }
    m_.emplace_back(p->value.dims());
    v_.emplace_back(p->value.dims());
  }
}

void Adam::step() {
  ++step_;
  const auto& o = options_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.lr * o.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value;
    const auto& grad = params_[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] = value[i] * decay - o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace occfeat::nn
