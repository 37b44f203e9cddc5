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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace elf {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense double-precision array, row-major.
///
/// Rank 1 arrays behave as a single row wherever a matrix view is needed.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }
  static Array vector(std::initializer_list<double> values);
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Array zeros_like(const Array& other) { return Array(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  bool same_shape(const Array& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Counter-based generator: output i is SplitMix64 applied to key + i * golden.
///
/// Identical (seed, stream) and call sequence produce identical output on every
/// platform. Normals use Box-Muller so no libstdc++ distribution is involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);
  std::size_t below(std::size_t n);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Array gaussian(Rng& rng, const Shape& shape);

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Gradients {
 public:
  const Array& operator[](Var leaf) const;
  bool contains(Var leaf) const { return grads_.contains(leaf.id); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Array> grads_;
};

/// Ordered record of primitive operations. Single-threaded; not shareable.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var parameter(Array value);
  /// Leaf with no gradient.
  Var constant(Array value);

  /// Records an operation result. `backward` is kept only when one of
  /// `inputs` requires a gradient and recording is on.
  Var record(Array value, std::vector<std::size_t> inputs, BackwardFn backward);

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  const Array& grad(std::size_t id) const { return nodes_.at(id).grad; }
  /// Gradient accumulator for `id`, allocated as zeros on first use.
  Array& grad_accumulator(std::size_t id);

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse sweep from a scalar loss. Returns d(loss)/d(leaf) for every
  /// parameter leaf; the tape cannot be swept again afterwards.
  Gradients backward(Var loss);

 private:
  struct Node {
    Array value;
    Array grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

/// Disables recording for the lifetime of the guard.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording()) { tape.set_recording(false); }
  ~NoGradGuard() { tape_.set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a (N x d) plus a bias row (d) broadcast over the leading dimension.
Var add_row(Var a, Var bias);
/// Multiplies row i of `a` by factors[i].
Var row_scale(Var a, std::span<const double> factors);
Var matmul(Var a, Var b);
Var gelu(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
/// out[r] = a[index[r]]; the backward pass scatter-adds.
Var gather_rows(Var a, std::span<const std::size_t> index);
Var detach(Var a);
Var sum(Var a);
Var mean(Var a);
/// mean((a - target)^2) with a constant target.
Var mse(Var a, const Array& target);
/// Mean over rows of -log softmax(logits)[targets[r]].
Var cross_entropy(Var logits, std::span<const int> targets);

struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
};
/// Bidirectional multi-head attention over (batch * seq_len) x d inputs.
Var attention(Var q, Var k, Var v, AttentionLayout layout);

}  // namespace ops

enum class Primitive {
  add, sub, mul, matmul, concat_cols, gelu, tanh, softmax, log_softmax, sum, mean, detach
};

/// Generic entry point dispatching on the primitive kind.
Var forward_primitive(Primitive op, std::span<const Var> inputs);

/// Max over coordinates of |analytic - central difference| / (|central difference| + 1e-12).
///
/// `f` builds a scalar on the supplied tape from parameter leaves for `point`.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
double grad_check(const ScalarFn& f, std::span<const Array> point, double h = 1e-5);

/// Same, but coordinates whose finite difference magnitude is below
/// `abs_floor` are compared absolutely (for gradients that are exactly zero).
double grad_check(const ScalarFn& f, std::span<const Array> point, double h, double abs_floor);

}  // namespace elf
