#pragma once

#include "kt/autodiff.hpp"

#include <deque>
#include <string>
#include <vector>

namespace kt::nn {

using num::Parameter;
using num::Tape;
using num::Tensor;
using num::Var;

// Owns parameters at stable addresses, in registration order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  // Moving keeps element addresses, so layer handles stay valid.
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor value);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> parameters_;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(Tensor::Shape shape, std::size_t fan_in, num::Rng& rng);

// y = x W + b with W stored (in x out).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       num::Rng& rng);
  Var operator()(Tape& tape, Var x) const;
  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
  Var operator()(Tape& tape, Var x) const;
};

}  // namespace kt::nn
