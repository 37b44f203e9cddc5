/*
 * Copyright 2026 The elflow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "elf/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace elf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap as_matrix(const Array& a) {
  return ConstMatMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
MatMap as_matrix(Array& a) {
  return MatMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_same(const char* op, const Array& a, const Array& b) {
  if (!a.same_shape(b)) shape_fail(op, a.shape(), b.shape());
}

void require_matrix(const char* op, const Array& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 array, got " + shape_string(a.shape()));
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::invalid_argument("operation on a Var without a tape");
  return *a.tape;
}

Tape& common_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
  return tape_of(a);
}

#ifndef NDEBUG
void debug_check_finite(const char* op, const Array& out) {
  if (!out.all_finite()) throw std::domain_error(std::string(op) + ": produced a non-finite value");
}
#else
void debug_check_finite(const char*, const Array&) {}
#endif

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Array

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("Array: zero extent in shape " + shape_string(shape_));
    n *= e;
  }
  if (shape_.empty()) throw ShapeError("Array: empty shape");
  data_.assign(n, fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  std::size_t n = 1;
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("Array: zero extent in shape " + shape_string(shape_));
    n *= e;
  }
  if (shape_.empty()) throw ShapeError("Array: empty shape");
  if (n != data_.size()) {
    throw ShapeError("Array: shape " + shape_string(shape_) + " needs " + std::to_string(n) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Array Array::vector(std::initializer_list<double> values) {
  return Array({values.size()}, std::vector<double>(values));
}

Array Array::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Array::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array({r, c}, std::move(data));
}

std::size_t Array::rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }

std::size_t Array::cols() const {
  if (shape_.size() == 1) return shape_[0];
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) n *= shape_[i];
  return n;
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item: array is not a scalar, shape " + shape_string(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- Rng

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), key_(mix64(seed ^ mix64(stream + kGolden))) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("Rng::gamma: shape must be positive");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(key_ ^ mix64(counter_ + 1)), stream);
}

Array gaussian(Rng& rng, const Shape& shape) {
  Array out(shape);
  for (auto& v : out.storage()) v = rng.normal();
  return out;
}

// ---------------------------------------------------------------- Tape

const Array& Var::value() const { return tape_of(*this).value(id); }

const Array& Gradients::operator[](Var leaf) const {
  auto it = grads_.find(leaf.id);
  if (it == grads_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(leaf.id));
  return it->second;
}

Var Tape::parameter(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Array value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  if (recording_) {
    for (auto id : inputs) needs = needs || nodes_.at(id).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, false});
  return Var{this, nodes_.size() - 1};
}

Array& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Array::zeros_like(n.value);
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) throw std::invalid_argument("backward: loss node is not on this tape");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (nodes_[loss.id].value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(nodes_[loss.id].value.shape()));
  }
  consumed_ = true;
  if (nodes_[loss.id].requires_grad) {
    grad_accumulator(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
      n.backward = nullptr;
    }
  }
  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    out.grads_.emplace(i, n.grad.size() ? std::move(n.grad) : Array::zeros_like(n.value));
  }
  return out;
}

// ---------------------------------------------------------------- primitives

namespace ops {

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same("add", a.value(), b.value());
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  debug_check_finite("add", out);
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    for (auto id : {a, b}) {
      if (!tp.requires_grad(id)) continue;
      Array& acc = tp.grad_accumulator(id);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same("sub", a.value(), b.value());
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  debug_check_finite("sub", out);
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Array& acc = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Array& acc = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same("mul", a.value(), b.value());
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  debug_check_finite("mul", out);
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      const Array& bv = tp.value(b);
      Array& acc = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      const Array& av = tp.value(a);
      Array& acc = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& v : out.storage()) v *= factor;
  debug_check_finite("scale", out);
  return t.record(std::move(out), {a.id}, [a = a.id, factor](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += factor * g[i];
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = common_tape(a, bias);
  const Array& av = a.value();
  const Array& bv = bias.value();
  if (bv.size() != av.cols() || bv.rows() != 1) shape_fail("add_row", av.shape(), bv.shape());
  Array out = av;
  const std::size_t n = av.rows();
  const std::size_t d = av.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  }
  debug_check_finite("add_row", out);
  return t.record(std::move(out), {a.id, bias.id}, [a = a.id, b = bias.id, n, d](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Array& acc = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Array& acc = tp.grad_accumulator(b);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) acc[c] += g[r * d + c];
      }
    }
  });
}

Var row_scale(Var a, std::span<const double> factors) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  if (factors.size() != av.rows()) shape_fail("row_scale", av.shape(), Shape{factors.size()});
  Array out = av;
  const std::size_t d = av.cols();
  for (std::size_t r = 0; r < factors.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= factors[r];
  }
  debug_check_finite("row_scale", out);
  std::vector<double> f(factors.begin(), factors.end());
  return t.record(std::move(out), {a.id}, [a = a.id, f = std::move(f), d](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t r = 0; r < f.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) acc[r * d + c] += f[r] * g[r * d + c];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() > 2 || bv.rank() != 2 || av.cols() != bv.rows()) shape_fail("matmul", av.shape(), bv.shape());
  Array out(Shape{av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  debug_check_finite("matmul", out);
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const auto g = as_matrix(tp.grad(self));
    if (tp.requires_grad(a)) as_matrix(tp.grad_accumulator(a)).noalias() += g * as_matrix(tp.value(b)).transpose();
    if (tp.requires_grad(b)) as_matrix(tp.grad_accumulator(b)).noalias() += as_matrix(tp.value(a)).transpose() * g;
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.storage()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  return t.record(std::move(out), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& x = tp.value(a);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = x[i];
      const double th = std::tanh(kGeluC * (xi + kGeluA * xi * xi * xi));
      const double dth = (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * xi * xi);
      acc[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * xi * dth);
    }
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.storage()) x = std::tanh(x);
  return t.record(std::move(out), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& y = tp.value(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

namespace {

void softmax_row(const double* in, double* out, std::size_t n) {
  const double m = *std::max_element(in, in + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
}

double log_sum_exp(const double* in, std::size_t n) {
  const double m = *std::max_element(in, in + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(in[i] - m);
  return m + std::log(s);
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  Array out = Array::zeros_like(av);
  const std::size_t n = av.rows();
  const std::size_t d = av.cols();
  for (std::size_t r = 0; r < n; ++r) softmax_row(av.data() + r * d, out.data() + r * d, d);
  return t.record(std::move(out), {a.id}, [a = a.id, n, d](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& y = tp.value(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) acc[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  Array out = av;
  const std::size_t n = av.rows();
  const std::size_t d = av.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double lse = log_sum_exp(av.data() + r * d, d);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] -= lse;
  }
  return t.record(std::move(out), {a.id}, [a = a.id, n, d](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& y = tp.value(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t r = 0; r < n; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < d; ++c) gs += g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) acc[r * d + c] += g[r * d + c] - std::exp(y[r * d + c]) * gs;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = common_tape(x, gain);
  common_tape(x, bias);
  const Array& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) shape_fail("layer_norm", xv.shape(), gain.value().shape());
  const Array& gv = gain.value();
  const Array& bv = bias.value();
  Array out(xv.shape());
  std::vector<double> normed(n * d);
  std::vector<double> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * rstd[r];
      normed[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  debug_check_finite("layer_norm", out);
  return t.record(std::move(out), {x.id, gain.id, bias.id},
                  [x = x.id, g = gain.id, b = bias.id, n, d, normed = std::move(normed), rstd = std::move(rstd)](
                      Tape& tp, std::size_t self) {
                    const Array& dy = tp.grad(self);
                    const Array& gv = tp.value(g);
                    if (tp.requires_grad(g)) {
                      Array& acc = tp.grad_accumulator(g);
                      for (std::size_t i = 0; i < n * d; ++i) acc[i % d] += dy[i] * normed[i];
                    }
                    if (tp.requires_grad(b)) {
                      Array& acc = tp.grad_accumulator(b);
                      for (std::size_t i = 0; i < n * d; ++i) acc[i % d] += dy[i];
                    }
                    if (!tp.requires_grad(x)) return;
                    Array& acc = tp.grad_accumulator(x);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      double s1 = 0.0;
                      double s2 = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dh = dy[r * d + c] * gv[c];
                        s1 += dh;
                        s2 += dh * normed[r * d + c];
                      }
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dh = dy[r * d + c] * gv[c];
                        acc[r * d + c] += rstd[r] * (dh - inv_d * s1 - normed[r * d + c] * inv_d * s2);
                      }
                    }
                  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = common_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rows() != bv.rows()) shape_fail("concat_cols", av.shape(), bv.shape());
  const std::size_t n = av.rows();
  const std::size_t da = av.cols();
  const std::size_t db = bv.cols();
  Array out(Shape{n, da + db});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(av.data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(bv.data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, n, da, db](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Array& acc = tp.grad_accumulator(a);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < da; ++c) acc[r * da + c] += g[r * (da + db) + c];
      }
    }
    if (tp.requires_grad(b)) {
      Array& acc = tp.grad_accumulator(b);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < db; ++c) acc[r * db + c] += g[r * (da + db) + da + c];
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t d = parts[0].value().cols();
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    common_tape(parts[0], p);
    if (p.value().cols() != d) shape_fail("concat_rows", parts[0].shape(), p.shape());
    n += p.value().rows();
    ids.push_back(p.id);
  }
  Array out(Shape{n, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return t.record(std::move(out), ids, [ids](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t len = tp.value(id).size();
      if (tp.requires_grad(id)) {
        Array& acc = tp.grad_accumulator(id);
        for (std::size_t i = 0; i < len; ++i) acc[i] += g[offset + i];
      }
      offset += len;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  const std::size_t d = av.cols();
  const std::size_t rows = av.rows();
  Array out(Shape{index.size(), d});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw std::out_of_range("gather_rows: row index " + std::to_string(index[r]) + " out of range");
    std::copy_n(av.data() + index[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return t.record(std::move(out), {a.id}, [a = a.id, idx = std::move(idx), d](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) acc[idx[r] * d + c] += g[r * d + c];
    }
  });
}

Var detach(Var a) { return tape_of(a).constant(a.value()); }

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  return t.record(Array::scalar(s), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (auto& v : tp.grad_accumulator(a).storage()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record(Array::scalar(s / n), {a.id}, [a = a.id, n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0] / n;
    for (auto& v : tp.grad_accumulator(a).storage()) v += g;
  });
}

Var mse(Var a, const Array& target) {
  Tape& t = tape_of(a);
  require_same("mse", a.value(), target);
  const Array& av = a.value();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - target[i]) * (av[i] - target[i]);
  Array diff = av;
  for (std::size_t i = 0; i < av.size(); ++i) diff[i] -= target[i];
  return t.record(Array::scalar(s / n), {a.id}, [a = a.id, diff = std::move(diff), n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0] * 2.0 / n;
    Array& acc = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < diff.size(); ++i) acc[i] += g * diff[i];
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Array& lv = logits.value();
  const std::size_t n = lv.rows();
  const std::size_t v = lv.cols();
  if (targets.size() != n) shape_fail("cross_entropy", lv.shape(), Shape{targets.size()});
  Array probs = Array::zeros_like(lv);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= v) throw std::out_of_range("cross_entropy: target id out of range");
    const double* row = lv.data() + r * v;
    total += log_sum_exp(row, v) - row[y];
    softmax_row(row, probs.data() + r * v, v);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  const double nd = static_cast<double>(n);
  return t.record(Array::scalar(total / nd), {logits.id},
                  [l = logits.id, probs = std::move(probs), tgt = std::move(tgt), v, nd](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0] / nd;
                    Array& acc = tp.grad_accumulator(l);
                    for (std::size_t r = 0; r < tgt.size(); ++r) {
                      for (std::size_t c = 0; c < v; ++c) {
                        const double onehot = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
                        acc[r * v + c] += g * (probs[r * v + c] - onehot);
                      }
                    }
                  });
}

Var attention(Var q, Var k, Var v, AttentionLayout layout) {
  Tape& t = common_tape(q, k);
  common_tape(q, v);
  const Array& qv = q.value();
  require_same("attention", qv, k.value());
  require_same("attention", qv, v.value());
  require_matrix("attention", qv);
  const std::size_t d = qv.cols();
  const std::size_t T = layout.seq_len;
  const std::size_t H = layout.heads;
  if (layout.batch * T != qv.rows() || H == 0 || d % H != 0) {
    throw ShapeError("attention: layout batch=" + std::to_string(layout.batch) + " seq_len=" + std::to_string(T) +
                     " heads=" + std::to_string(H) + " does not fit " + shape_string(qv.shape()));
  }
  const std::size_t dh = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Ti = static_cast<Eigen::Index>(T);
  const auto dhi = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  Array out = Array::zeros_like(qv);
  // probs[(b * H + h)] is a T x T block.
  std::vector<double> probs(layout.batch * H * T * T);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = b * T * d + h * dh;
      ConstStridedMap Q(qv.data() + off, Ti, dhi, stride);
      ConstStridedMap K(k.value().data() + off, Ti, dhi, stride);
      ConstStridedMap V(v.value().data() + off, Ti, dhi, stride);
      MatMap P(probs.data() + (b * H + h) * T * T, Ti, Ti);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < Ti; ++r) softmax_row(P.row(r).data(), P.row(r).data(), T);
      StridedMap O(out.data() + off, Ti, dhi, stride);
      O.noalias() = P * V;
    }
  }
  debug_check_finite("attention", out);
  return t.record(
      std::move(out), {q.id, k.id, v.id},
      [qi = q.id, ki = k.id, vi = v.id, layout, probs = std::move(probs), d, T, H, dh, inv_sqrt](Tape& tp,
                                                                                                  std::size_t self) {
        const auto Ti = static_cast<Eigen::Index>(T);
        const auto dhi = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        const Array& g = tp.grad(self);
        Array& dq = tp.grad_accumulator(qi);
        Array& dk = tp.grad_accumulator(ki);
        Array& dv = tp.grad_accumulator(vi);
        RowMat dP(Ti, Ti);
        for (std::size_t b = 0; b < layout.batch; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = b * T * d + h * dh;
            ConstStridedMap Q(tp.value(qi).data() + off, Ti, dhi, stride);
            ConstStridedMap K(tp.value(ki).data() + off, Ti, dhi, stride);
            ConstStridedMap V(tp.value(vi).data() + off, Ti, dhi, stride);
            ConstStridedMap dO(g.data() + off, Ti, dhi, stride);
            ConstMatMap P(probs.data() + (b * H + h) * T * T, Ti, Ti);
            StridedMap(dv.data() + off, Ti, dhi, stride).noalias() += P.transpose() * dO;
            dP.noalias() = dO * V.transpose();
            for (Eigen::Index r = 0; r < Ti; ++r) {
              const double dot = dP.row(r).dot(P.row(r));
              dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix() * inv_sqrt;
            }
            StridedMap(dq.data() + off, Ti, dhi, stride).noalias() += dP * K;
            StridedMap(dk.data() + off, Ti, dhi, stride).noalias() += dP.transpose() * Q;
          }
        }
      });
}

}  // namespace ops

Var forward_primitive(Primitive op, std::span<const Var> inputs) {
  auto need = [&](std::size_t n, const char* name) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Primitive::add: need(2, "add"); return ops::add(inputs[0], inputs[1]);
    case Primitive::sub: need(2, "sub"); return ops::sub(inputs[0], inputs[1]);
    case Primitive::mul: need(2, "mul"); return ops::mul(inputs[0], inputs[1]);
    case Primitive::matmul: need(2, "matmul"); return ops::matmul(inputs[0], inputs[1]);
    case Primitive::concat_cols: need(2, "concat_cols"); return ops::concat_cols(inputs[0], inputs[1]);
    case Primitive::gelu: need(1, "gelu"); return ops::gelu(inputs[0]);
    case Primitive::tanh: need(1, "tanh"); return ops::tanh(inputs[0]);
    case Primitive::softmax: need(1, "softmax"); return ops::softmax_rows(inputs[0]);
    case Primitive::log_softmax: need(1, "log_softmax"); return ops::log_softmax_rows(inputs[0]);
    case Primitive::sum: need(1, "sum"); return ops::sum(inputs[0]);
    case Primitive::mean: need(1, "mean"); return ops::mean(inputs[0]);
    case Primitive::detach: need(1, "detach"); return ops::detach(inputs[0]);
  }
  throw std::invalid_argument("forward_primitive: unknown primitive");
}

// ---------------------------------------------------------------- grad_check

double grad_check(const ScalarFn& f, std::span<const Array> point, double h, double abs_floor) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  std::vector<Array> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : point) leaves.push_back(tape.parameter(p));
    Var loss = f(tape, leaves);
    Gradients grads = tape.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(grads[leaf]);
  }
  auto evaluate = [&](const std::vector<Array>& at) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : at) leaves.push_back(tape.parameter(p));
    return f(tape, leaves).value().item();
  };
  std::vector<Array> work(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t a = 0; a < work.size(); ++a) {
    for (std::size_t i = 0; i < work[a].size(); ++i) {
      const double orig = work[a][i];
      work[a][i] = orig + h;
      const double up = evaluate(work);
      work[a][i] = orig - h;
      const double down = evaluate(work);
      work[a][i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double diff = std::abs(analytic[a][i] - fd);
      const double err = std::abs(fd) < abs_floor ? diff : diff / (std::abs(fd) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const ScalarFn& f, std::span<const Array> point, double h) {
  return grad_check(f, point, h, 0.0);
}

}  // namespace elf
