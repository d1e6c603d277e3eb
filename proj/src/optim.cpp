#include "kt/optim.hpp"

#include <cmath>

namespace kt::num {

void adam_step(std::vector<Tensor*> values, const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamOptions& options) {
  if (values.size() != grads.size()) throw DimensionError("adam: parameter and gradient counts differ");
  if (state.moments.empty()) {
    for (const Tensor* v : values) state.moments.push_back({Tensor(v->shape()), Tensor(v->shape())});
  }
  if (state.moments.size() != values.size()) throw DimensionError("adam: optimizer state does not match parameters");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]->same_shape(*grads[i]) || !values[i]->same_shape(state.moments[i].first))
      throw DimensionError("adam: shape mismatch for tensor " + std::to_string(i));
  }

  ++state.step;
  const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor& w = *values[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.moments[i].first;
    Tensor& v = state.moments[i].second;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * g[j];
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
  }
}

Adam::Adam(std::vector<Parameter*> parameters, AdamOptions options)
    : parameters_(std::move(parameters)), options_(options) {}

void Adam::step() {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (Parameter* p : parameters_) {
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  adam_step(std::move(values), grads, state_, options_);
}

void Adam::zero_grad() {
  for (Parameter* p : parameters_) p->zero_grad();
}

}  // namespace kt::num
