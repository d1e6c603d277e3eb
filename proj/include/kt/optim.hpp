#pragma once

#include "kt/autodiff.hpp"

#include <vector>

namespace kt::num {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates for one tensor.
struct AdamMoments {
  Tensor first;
  Tensor second;
};

struct AdamState {
  std::vector<AdamMoments> moments;
  long step = 0;
};

// One bias-corrected Adam update of `values` in place.
void adam_step(std::vector<Tensor*> values, const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamOptions& options);

// Convenience wrapper over a set of parameters.
class Adam {
 public:
  Adam(std::vector<Parameter*> parameters, AdamOptions options);

  void step();
  void zero_grad();
  const AdamState& state() const { return state_; }
  AdamOptions& options() { return options_; }

 private:
  std::vector<Parameter*> parameters_;
  AdamOptions options_;
  AdamState state_;
};

}  // namespace kt::num
