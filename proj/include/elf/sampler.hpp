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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "elf/config.hpp"
#include "elf/corpus.hpp"
#include "elf/engine.hpp"
#include "elf/trainer.hpp"

namespace elf {

struct TimeGrid {
  ScheduleKind kind = ScheduleKind::uniform;
  std::vector<double> times;

  std::size_t steps() const { return times.size() - 1; }
  /// Strictly increasing with endpoints exactly 0 and 1.
  bool valid() const;
};

inline constexpr double kMinGridGap = 1e-6;

TimeGrid uniform_grid(std::size_t steps);
TimeGrid logit_normal_grid(std::size_t steps, const ScheduleParams& sched, Rng& rng);
/// Grid for a sampler config; logit-normal grids are drawn from the config
/// seed, or from a fixed stream when the grid is frozen.
TimeGrid build_grid(const SamplerConfig& config);

/// Clean estimate for state z at a shared time t given the carried estimate.
using DenoiseFn = std::function<Array(const Array& z, double t, const Array& carry)>;

struct StepOutput {
  Array z;
  Array x_hat;
};

StepOutput ode_step(const Array& z, double t, double dt, const DenoiseFn& net, const Array& carry);
/// Pulls z and t back by alpha = 1 - gamma * dt with fresh noise scaled by
/// `noise_scale`, then takes the Euler step from the original z.
StepOutput sde_step(const Array& z, double t, double dt, double gamma, double noise_scale, const DenoiseFn& net,
                    const Array& carry, Rng& rng);

/// Runs every grid interval from z0 with a zero initial carry.
/// `observe` (optional) sees (step index, carry passed in, x_hat) per step.
Array integrate(const Array& z0, const TimeGrid& grid, double gamma, double noise_scale, const DenoiseFn& net,
                Rng& rng, const std::function<void(std::size_t, const Array&, const Array&)>& observe = {});

/// Net-backed denoiser. With a condition and cond_cfg != 1 a second pass with
/// a zeroed condition is combined as u + cond_cfg * (c - u).
DenoiseFn make_denoiser(const Model& model, double omega, const Array* condition, double cond_cfg);

struct GenerateResult {
  std::vector<TokenSequence> tokens;
  std::vector<std::string> warnings;
  TimeGrid grid;
};

/// Samples `config.n` sequences. `conditions` (one per sample) is required
/// exactly when the model is conditional.
GenerateResult generate(const Model& model, const SamplerConfig& config,
                        const std::vector<TokenSequence>* conditions = nullptr);

/// Decode-mode readout of already-noised embeddings at t = 1.
std::vector<int> decode_tokens(const Model& model, const Array& z, double omega = 1.0, const Array* condition = nullptr);

}  // namespace elf
