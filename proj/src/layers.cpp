#include "kt/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace kt::nn {

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::logic_error("duplicate parameter " + name);
  return parameters_.emplace_back(std::move(name), std::move(value));
}

Parameter* ParameterStore::find(const std::string& name) {
  for (Parameter& p : parameters_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const Parameter& p : parameters_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : parameters_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : parameters_) out.push_back(&p);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter& p : parameters_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : parameters_) p.zero_grad();
}

Tensor uniform_init(Tensor::Shape shape, std::size_t fan_in, num::Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      num::Rng& rng) {
  Linear l;
  l.weight = &store.add(name + ".weight", uniform_init({in, out}, in, rng));
  l.bias = &store.add(name + ".bias", uniform_init({out}, in, rng));
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  return num::add_row(num::matmul(x, tape.leaf(*weight)), tape.leaf(*bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gain = &store.add(name + ".gain", Tensor({width}, 1.0));
  ln.bias = &store.add(name + ".bias", Tensor({width}, 0.0));
  return ln;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return num::layer_norm(x, tape.leaf(*gain), tape.leaf(*bias));
}

}  // namespace kt::nn
