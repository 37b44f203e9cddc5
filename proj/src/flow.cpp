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

#include "elf/flow.hpp"

#include <algorithm>
#include <cmath>

namespace elf {

namespace {

void require_same(const char* op, const Array& a, const Array& b) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rows(const char* op, const Array& a, std::size_t n) {
  if (a.rows() != n) {
    throw ShapeError(std::string(op) + ": " + std::to_string(n) + " per-row values for shape " + shape_string(a.shape()));
  }
}

}  // namespace

void ScheduleParams::validate() const {
  if (!(stddev > 0.0) || !std::isfinite(mean)) throw std::invalid_argument("schedule: stddev must be positive and mean finite");
}

PredictionTarget parse_prediction_target(const std::string& name) {
  if (name == "x") return PredictionTarget::x;
  if (name == "v") return PredictionTarget::v;
  if (name == "eps") return PredictionTarget::eps;
  throw std::invalid_argument("unknown prediction target '" + name + "' (expected x, v or eps)");
}

std::string to_string(PredictionTarget target) {
  switch (target) {
    case PredictionTarget::x: return "x";
    case PredictionTarget::v: return "v";
    case PredictionTarget::eps: return "eps";
  }
  return "x";
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sample_logit_normal(const ScheduleParams& sched, Rng& rng) {
  sched.validate();
  return sigmoid(rng.normal(sched.mean, sched.stddev));
}

double clamp_time(double t) { return std::clamp(t, kTimeFloor, kTimeCeiling); }

double sample_time(const ScheduleParams& sched, Rng& rng) { return clamp_time(sample_logit_normal(sched, rng)); }

Array interpolate(const Array& x, const Array& eps, double t, double noise_scale) {
  require_same("interpolate", x, eps);
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  Array z = x;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = t * x[i] + (1.0 - t) * noise_scale * eps[i];
  return z;
}

Array interpolate_rows(const Array& x, const Array& eps, std::span<const double> times, double noise_scale) {
  require_same("interpolate", x, eps);
  require_rows("interpolate", x, times.size());
  Array z = x;
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double t = times[r];
    for (std::size_t c = 0; c < d; ++c) z[r * d + c] = t * x[r * d + c] + (1.0 - t) * noise_scale * eps[r * d + c];
  }
  return z;
}

Array velocity_target(const Array& x, const Array& eps, double scale) {
  require_same("velocity_target", x, eps);
  Array v = x;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - scale * eps[i];
  return v;
}

Array x_to_v(const Array& x_pred, const Array& z, double t) {
  require_same("x_to_v", x_pred, z);
  if (!(t < 1.0 - kSingularMargin)) {
    throw NearSingularError("x_to_v: t = " + std::to_string(t) + " is too close to 1 for (x - z) / (1 - t)");
  }
  Array v = x_pred;
  const double inv = 1.0 / (1.0 - t);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (x_pred[i] - z[i]) * inv;
  return v;
}

Array v_to_x(const Array& v, const Array& z, double t) {
  require_same("v_to_x", v, z);
  Array x = z;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = z[i] + (1.0 - t) * v[i];
  return x;
}

double mse_velocity_loss(const Array& v_pred, const Array& v_target) {
  require_same("mse_velocity_loss", v_pred, v_target);
  double s = 0.0;
  for (std::size_t i = 0; i < v_pred.size(); ++i) s += (v_pred[i] - v_target[i]) * (v_pred[i] - v_target[i]);
  return s / static_cast<double>(v_pred.size());
}

Array cfg_target(const Array& v, const Array& v_cond, const Array& v_uncond, double omega) {
  require_same("cfg_target", v, v_cond);
  require_same("cfg_target", v, v_uncond);
  if (!(omega > 0.0)) throw std::invalid_argument("cfg_target: guidance scale must be positive");
  if (omega == 1.0) return v;
  const double k = 1.0 - 1.0 / omega;
  Array out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += k * (v_cond[i] - v_uncond[i]);
  return out;
}

Array cfg_target_rows(const Array& v, const Array& v_cond, const Array& v_uncond, std::span<const double> omega,
                      std::size_t rows_per_seq) {
  require_same("cfg_target", v, v_cond);
  require_same("cfg_target", v, v_uncond);
  require_rows("cfg_target", v, omega.size() * rows_per_seq);
  Array out = v;
  const std::size_t d = v.cols();
  for (std::size_t b = 0; b < omega.size(); ++b) {
    if (!(omega[b] > 0.0)) throw std::invalid_argument("cfg_target: guidance scale must be positive");
    if (omega[b] == 1.0) continue;
    const double k = 1.0 - 1.0 / omega[b];
    for (std::size_t i = b * rows_per_seq * d; i < (b + 1) * rows_per_seq * d; ++i) out[i] += k * (v_cond[i] - v_uncond[i]);
  }
  return out;
}

std::vector<double> sample_decode_corruption(const ScheduleParams& sched, Rng& rng, std::size_t length) {
  std::vector<double> p(length);
  for (auto& v : p) v = std::clamp(sample_logit_normal(sched, rng), kTimeFloor, kCorruptionCeiling);
  return p;
}

double cross_entropy_decode_loss(const Array& logits, std::span<const int> tokens) {
  if (logits.rows() != tokens.size()) throw ShapeError("cross_entropy_decode_loss: one token per logits row required");
  const std::size_t v = logits.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const double* row = logits.data() + r * v;
    const double m = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t c = 0; c < v; ++c) s += std::exp(row[c] - m);
    total += m + std::log(s) - row[tokens[r]];
  }
  return total / static_cast<double>(tokens.size());
}

namespace {

// x = a * raw + b * z per row, coefficients depending on the target.
void conversion_coefficients(PredictionTarget target, double t, double noise_scale, double& a, double& b) {
  switch (target) {
    case PredictionTarget::x:
      a = 1.0;
      b = 0.0;
      return;
    case PredictionTarget::v:
      a = 1.0 - t;
      b = 1.0;
      return;
    case PredictionTarget::eps: {
      const double te = std::max(t, kEpsTimeFloor);
      a = -(1.0 - t) * noise_scale / te;
      b = 1.0 / te;
      return;
    }
  }
}

}  // namespace

Array raw_to_x(const Array& raw, const Array& z, std::span<const double> times, PredictionTarget target,
               double noise_scale) {
  require_same("raw_to_x", raw, z);
  require_rows("raw_to_x", raw, times.size());
  if (target == PredictionTarget::x) return raw;
  Array out = raw;
  const std::size_t d = raw.cols();
  for (std::size_t r = 0; r < times.size(); ++r) {
    double a = 0.0;
    double b = 0.0;
    conversion_coefficients(target, times[r], noise_scale, a, b);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = a * raw[r * d + c] + b * z[r * d + c];
  }
  return out;
}

Var raw_to_x(Var raw, const Array& z, std::span<const double> times, PredictionTarget target, double noise_scale) {
  if (target == PredictionTarget::x) return raw;
  require_same("raw_to_x", raw.value(), z);
  require_rows("raw_to_x", z, times.size());
  std::vector<double> a(times.size());
  Array offset = z;
  const std::size_t d = z.cols();
  for (std::size_t r = 0; r < times.size(); ++r) {
    double b = 0.0;
    conversion_coefficients(target, times[r], noise_scale, a[r], b);
    for (std::size_t c = 0; c < d; ++c) offset[r * d + c] *= b;
  }
  return ops::add(ops::row_scale(raw, a), raw.tape->constant(std::move(offset)));
}

}  // namespace elf
