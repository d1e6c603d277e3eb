#include "kt/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numbers>

namespace kt::num {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap view(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

std::size_t row_length(const Tensor& row) {
  if (row.rank() == 1) return row.size();
  if (row.rank() == 2 && row.rows() == 1) return row.cols();
  throw DimensionError("broadcast row must be (c) or (1 x c), got " + shape_string(row.shape()));
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(index_);
}

const Tensor& Var::grad() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->grad(index_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Parameter& parameter) {
  if (auto it = leaves_.find(&parameter); it != leaves_.end()) return Var(this, it->second);
  nodes_.push_back(Node{parameter.value, {}, {}, &parameter, recording_});
  leaves_.emplace(&parameter, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  if (recording_)
    for (const Var& p : parents) {
      if (p.tape() != this) throw ContractError("operands live on different tapes");
      needs = needs || nodes_[p.index()].requires_grad;
    }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t index) {
  Node& node = nodes_[index];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss was recorded on another tape");
  if (nodes_[loss.index()].value.size() != 1)
    throw ContractError("backward needs a scalar loss, got " + shape_string(nodes_[loss.index()].value.shape()));
  grad(loss.index()).fill(1.0);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, i);
  }
  for (Node& node : nodes_) {
    if (!node.parameter || node.grad.empty()) continue;
    Parameter& p = *node.parameter;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += node.grad[j];
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = *a.tape();
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) view(t.grad(ia)).noalias() += view(g) * view(t.value(ib)).transpose();
    if (t.requires_grad(ib)) view(t.grad(ib)).noalias() += view(t.value(ia)).transpose() * view(g);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value()))
    throw DimensionError("add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t p : {ia, ib}) {
      if (!t.requires_grad(p)) continue;
      Tensor& gp = t.grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value()))
    throw DimensionError("sub " + shape_string(a.shape()) + " - " + shape_string(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value()))
    throw DimensionError("mul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  require_matrix(a.value(), "add_row");
  const std::size_t cols = a.cols();
  if (row_length(row.value()) != cols)
    throw DimensionError("add_row " + shape_string(a.shape()) + " + " + shape_string(row.shape()));
  Tensor out = a.value();
  const Tensor& rv = row.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += rv[c];
  const std::size_t ia = a.index(), ir = row.index();
  return a.tape()->record(std::move(out), {a, row}, [ia, ir, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad(ir);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % cols] += g[i];
    }
  });
}

Var mul_row(Var a, Var row) {
  require_same_tape(a, row);
  require_matrix(a.value(), "mul_row");
  const std::size_t cols = a.cols();
  if (row_length(row.value()) != cols)
    throw DimensionError("mul_row " + shape_string(a.shape()) + " * " + shape_string(row.shape()));
  Tensor out = a.value();
  const Tensor& rv = row.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rv[i % cols];
  const std::size_t ia = a.index(), ir = row.index();
  return a.tape()->record(std::move(out), {a, row}, [ia, ir, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& rv = t.value(ir);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * rv[i % cols];
    }
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad(ir);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % cols] += g[i] * av[i];
    }
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      ga[i] += g[i] * d;
    }
  });
}

Var square(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= v;
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const std::size_t ia = a.index();
  return a.tape()->record(Tensor::scalar(total), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ia).values()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var softmax_rows(Var a, bool causal) {
  require_matrix(a.value(), "softmax_rows");
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out = Tensor::matrix(rows, cols);
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t width = causal ? std::min(cols, r + 1) : cols;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < width; ++c) peak = std::max(peak, av(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) total += (out(r, c) = std::exp(av(r, c) - peak));
    for (std::size_t c = 0; c < width; ++c) out(r, c) /= total;
  }
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm(Var a, Var gain, Var bias, double epsilon) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  require_matrix(a.value(), "layer_norm");
  const std::size_t rows = a.rows(), cols = a.cols();
  if (row_length(gain.value()) != cols || row_length(bias.value()) != cols)
    throw DimensionError("layer_norm gain/bias must have " + std::to_string(cols) + " columns");
  auto normalized = std::make_shared<Tensor>(Tensor::matrix(rows, cols));
  auto inverse_std = std::make_shared<std::vector<double>>(rows);
  Tensor out = Tensor::matrix(rows, cols);
  const Tensor& av = a.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += av(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (av(r, c) - mu) * (av(r, c) - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    (*inverse_std)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xhat = (av(r, c) - mu) * inv;
      (*normalized)(r, c) = xhat;
      out(r, c) = xhat * gv[c] + bv[c];
    }
  }
  const std::size_t ia = a.index(), ig = gain.index(), ib = bias.index();
  return a.tape()->record(
      std::move(out), {a, gain, bias},
      [ia, ig, ib, rows, cols, normalized, inverse_std](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xhat = *normalized;
        if (t.requires_grad(ig)) {
          Tensor& gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
        if (t.requires_grad(ia)) {
          const Tensor& gv = t.value(ig);
          Tensor& ga = t.grad(ia);
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g(r, c) * gv[c];
              mean_d += d;
              mean_dx += d * xhat(r, c);
            }
            mean_d /= n;
            mean_dx /= n;
            const double inv = (*inverse_std)[r];
            for (std::size_t c = 0; c < cols; ++c)
              ga(r, c) += inv * (g(r, c) * gv[c] - mean_d - xhat(r, c) * mean_dx);
          }
        }
      });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
  require_matrix(a.value(), "slice_rows");
  const std::size_t cols = a.cols();
  if (first + count > a.rows()) throw DimensionError("slice_rows out of range");
  const Tensor& av = a.value();
  Tensor out({count, cols},
             std::vector<double>(av.data() + first * cols, av.data() + (first + count) * cols));
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, first, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[first * cols + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t first, std::size_t count) {
  require_matrix(a.value(), "slice_cols");
  const std::size_t rows = a.rows(), cols = a.cols();
  if (first + count > cols) throw DimensionError("slice_cols out of range");
  Tensor out = Tensor::matrix(rows, count);
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, first + c);
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, first, count, rows](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) ga(r, first + c) += g(r, c);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape& tape = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> offsets, widths, indices;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw ContractError("operands live on different tapes");
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    offsets.push_back(total);
    widths.push_back(p.cols());
    indices.push_back(p.index());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out(r, offsets[k] + c) = pv(r, c);
  }
  return tape.record(std::move(out), std::span<const Var>(parts),
                     [indices, offsets, widths, rows](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       for (std::size_t k = 0; k < indices.size(); ++k) {
                         if (!t.requires_grad(indices[k])) continue;
                         Tensor& gp = t.grad(indices[k]);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < widths[k]; ++c) gp(r, c) += g(r, offsets[k] + c);
                       }
                     });
}

Var tile_rows(Var a, std::size_t times) {
  require_matrix(a.value(), "tile_rows");
  const Tensor& av = a.value();
  const std::size_t block = av.size();
  std::vector<double> values;
  values.reserve(block * times);
  for (std::size_t k = 0; k < times; ++k) values.insert(values.end(), av.values().begin(), av.values().end());
  Tensor out({a.rows() * times, a.cols()}, std::move(values));
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, block](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i % block] += g[i];
  });
}

Var dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.value().size());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] *= (*mask)[i];
  }
  const std::size_t ia = a.index();
  return a.tape()->record(std::move(out), {a}, [ia, mask](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

Var mse(Var predicted, Var target) {
  require_same_tape(predicted, target);
  if (!predicted.value().same_shape(target.value()))
    throw DimensionError("mse " + shape_string(predicted.shape()) + " vs " + shape_string(target.shape()));
  const Tensor& p = predicted.value();
  const Tensor& y = target.value();
  const double n = static_cast<double>(p.size());
  if (n == 0) throw ContractError("mse of empty tensors");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
  const std::size_t ip = predicted.index(), iy = target.index();
  return predicted.tape()->record(Tensor::scalar(total / n), {predicted, target},
                                  [ip, iy, n](Tape& t, std::size_t self) {
                                    const double g = t.grad(self)[0];
                                    const Tensor& p = t.value(ip);
                                    const Tensor& y = t.value(iy);
                                    const bool dp = t.requires_grad(ip), dy = t.requires_grad(iy);
                                    Tensor* gp = dp ? &t.grad(ip) : nullptr;
                                    Tensor* gy = dy ? &t.grad(iy) : nullptr;
                                    for (std::size_t i = 0; i < p.size(); ++i) {
                                      const double d = 2.0 * (p[i] - y[i]) / n * g;
                                      if (gp) (*gp)[i] += d;
                                      if (gy) (*gy)[i] -= d;
                                    }
                                  });
}

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t batch, std::size_t seq, std::size_t heads,
                         bool causal) {
  require_matrix(q, "attention");
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0) throw DimensionError("embedding width must divide into heads");
  if (q.rows() != batch * seq || !k.same_shape(q)) throw DimensionError("attention inputs must all be (batch*seq) x d");
  const std::size_t dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor weights = Tensor::matrix(batch * heads * seq, seq);
  std::vector<double> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* Q = q.data() + b * seq * width;
    const double* K = k.data() + b * seq * width;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double* P = weights.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t span = causal ? i + 1 : seq;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < span; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += Q[i * width + c0 + c] * K[j * width + c0 + c];
          scores[j] = s * inv_scale;
          peak = std::max(peak, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < span; ++j) total += (P[i * seq + j] = std::exp(scores[j] - peak));
        for (std::size_t j = 0; j < span; ++j) P[i * seq + j] /= total;
      }
    }
  }
  return weights;
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                         bool causal) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "attention");
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0) throw DimensionError("embedding width must divide into heads");
  if (qv.rows() != batch * seq || !kv.same_shape(qv) || !vv.same_shape(qv))
    throw DimensionError("attention inputs must all be (batch*seq) x d");
  const std::size_t dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto weights = std::make_shared<Tensor>(attention_weights(qv, kv, batch, seq, heads, causal));
  Tensor out = Tensor::matrix(batch * seq, width);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      const double* P = weights->data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t span = causal ? i + 1 : seq;
        for (std::size_t j = 0; j < span; ++j) {
          const double p = P[i * seq + j];
          double* o = out.data() + (r0 + i) * width + c0;
          const double* x = vv.data() + (r0 + j) * width + c0;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p * x[c];
        }
      }
    }
  }

  const std::size_t iq = q.index(), ik = k.index(), iv = v.index();
  return q.tape()->record(
      std::move(out), {q, k, v},
      [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        Tensor* gq = t.requires_grad(iq) ? &t.grad(iq) : nullptr;
        Tensor* gk = t.requires_grad(ik) ? &t.grad(ik) : nullptr;
        Tensor* gv = t.requires_grad(iv) ? &t.grad(iv) : nullptr;
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t r0 = b * seq;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            const double* P = weights->data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const std::size_t span = causal ? i + 1 : seq;
              const double* gi = g.data() + (r0 + i) * width + c0;
              const double* qi = qv.data() + (r0 + i) * width + c0;
              double dot = 0.0;
              for (std::size_t j = 0; j < span; ++j) {
                const double* vj = vv.data() + (r0 + j) * width + c0;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dp[j] = s;
                dot += s * P[i * seq + j];
                if (gv) {
                  double* gvj = gv->data() + (r0 + j) * width + c0;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += P[i * seq + j] * gi[c];
                }
              }
              for (std::size_t j = 0; j < span; ++j) {
                const double ds = P[i * seq + j] * (dp[j] - dot) * inv_scale;
                const std::size_t offset = (r0 + j) * width + c0;
                if (gq) {
                  double* gqi = gq->data() + (r0 + i) * width + c0;
                  const double* kj = kv.data() + offset;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  double* gkj = gk->data() + offset;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace kt::num
