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

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "elf/engine.hpp"

// Flow-matching algebra on the linear path z_t = t x + (1 - t) s eps, where s
// is the noise scale. Time runs from noise (t = 0) to data (t = 1).

namespace elf {

inline constexpr double kTimeFloor = 1e-6;
inline constexpr double kTimeCeiling = 1.0 - 1e-3;
inline constexpr double kCorruptionCeiling = 1.0 - 1e-6;
/// x_to_v refuses times closer than this to 1.
inline constexpr double kSingularMargin = 1e-6;
/// t floor used when converting an eps prediction back to x.
inline constexpr double kEpsTimeFloor = 1e-2;

class NearSingularError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct ScheduleParams {
  double mean = -1.5;
  double stddev = 0.8;

  void validate() const;
};

enum class PredictionTarget { x, v, eps };

PredictionTarget parse_prediction_target(const std::string& name);
std::string to_string(PredictionTarget target);

double sigmoid(double x);

/// sigmoid(t') with t' ~ N(mean, stddev^2), unclamped.
double sample_logit_normal(const ScheduleParams& sched, Rng& rng);
/// Logit-normal time clamped to [kTimeFloor, kTimeCeiling].
double sample_time(const ScheduleParams& sched, Rng& rng);
double clamp_time(double t);

Array interpolate(const Array& x, const Array& eps, double t, double noise_scale);
/// Per-row times: row r uses times[r].
Array interpolate_rows(const Array& x, const Array& eps, std::span<const double> times, double noise_scale);

/// v = x - scale * eps (`scale` is 1 when the noise scale is kept out of v).
Array velocity_target(const Array& x, const Array& eps, double scale);

Array x_to_v(const Array& x_pred, const Array& z, double t);
Array v_to_x(const Array& v, const Array& z, double t);

/// Mean over positions and channels of (v_pred - v_target)^2.
double mse_velocity_loss(const Array& v_pred, const Array& v_target);

/// v + (1 - 1/omega) (v_cond - v_uncond).
Array cfg_target(const Array& v, const Array& v_cond, const Array& v_uncond, double omega);
/// Per-row guidance scales; rows are grouped into sequences of `rows_per_seq`.
Array cfg_target_rows(const Array& v, const Array& v_cond, const Array& v_uncond, std::span<const double> omega,
                      std::size_t rows_per_seq);

/// Independent logit-normal corruption level per position, clamped into (0, 1).
std::vector<double> sample_decode_corruption(const ScheduleParams& sched, Rng& rng, std::size_t length);

/// Mean over rows of -log softmax(logits)[tokens[r]].
double cross_entropy_decode_loss(const Array& logits, std::span<const int> tokens);

/// Converts a raw network output into an x estimate for state z at per-row times.
Array raw_to_x(const Array& raw, const Array& z, std::span<const double> times, PredictionTarget target,
               double noise_scale);
Var raw_to_x(Var raw, const Array& z, std::span<const double> times, PredictionTarget target, double noise_scale);

}  // namespace elf
