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

#include "elf/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "elf/flow.hpp"

namespace elf {

namespace {

constexpr std::uint64_t kGridStream = 0x67726964;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;

void euler(Array& z, const Array& x_hat, double t, double dt) {
  const Array v = x_to_v(x_hat, z, t);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
}

void check_interval(double t, double dt) {
  if (!(dt > 0.0) || !(t >= 0.0) || t + dt > 1.0 + 1e-12) {
    throw std::invalid_argument("sampler step: need dt > 0 and 0 <= t <= t + dt <= 1");
  }
}

}  // namespace

bool TimeGrid::valid() const {
  if (times.size() < 2 || times.front() != 0.0 || times.back() != 1.0) return false;
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) return false;
  }
  return true;
}

TimeGrid uniform_grid(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("time grid: need at least one step");
  TimeGrid g{ScheduleKind::uniform, std::vector<double>(steps + 1)};
  for (std::size_t i = 0; i <= steps; ++i) g.times[i] = static_cast<double>(i) / static_cast<double>(steps);
  g.times.back() = 1.0;
  return g;
}

TimeGrid logit_normal_grid(std::size_t steps, const ScheduleParams& sched, Rng& rng) {
  if (steps == 0) throw std::invalid_argument("time grid: need at least one step");
  std::vector<double> interior(steps - 1);
  for (auto& t : interior) t = sample_logit_normal(sched, rng);
  std::sort(interior.begin(), interior.end());
  TimeGrid g{ScheduleKind::logit_normal, {0.0}};
  g.times.reserve(steps + 1);
  for (double t : interior) g.times.push_back(std::max(t, g.times.back() + kMinGridGap));
  // Points pushed against the top end are pulled back below 1 with the same gap.
  g.times.push_back(1.0);
  for (std::size_t i = g.times.size() - 1; i-- > 1;) g.times[i] = std::min(g.times[i], g.times[i + 1] - kMinGridGap);
  if (!g.valid()) throw std::runtime_error("time grid: too many steps to keep the minimum gap");
  return g;
}

TimeGrid build_grid(const SamplerConfig& config) {
  if (config.schedule == ScheduleKind::uniform) return uniform_grid(config.steps);
  Rng rng(config.frozen_grid ? 0 : config.seed, kGridStream);
  return logit_normal_grid(config.steps, config.grid, rng);
}

StepOutput ode_step(const Array& z, double t, double dt, const DenoiseFn& net, const Array& carry) {
  check_interval(t, dt);
  StepOutput out{z, net(z, t, carry)};
  euler(out.z, out.x_hat, t, dt);
  return out;
}

StepOutput sde_step(const Array& z, double t, double dt, double gamma, double noise_scale, const DenoiseFn& net,
                    const Array& carry, Rng& rng) {
  check_interval(t, dt);
  if (!(gamma >= 0.0)) throw std::invalid_argument("sde_step: gamma must be non-negative");
  const double alpha = 1.0 - gamma * dt;
  if (!(alpha > 0.0)) {
    throw std::invalid_argument("sde_step: alpha = 1 - gamma * dt = " + format_double(alpha) +
                                " must be positive; use more steps or a smaller gamma");
  }
  if (gamma == 0.0) return ode_step(z, t, dt, net, carry);
  const Array e = gaussian(rng, z.shape());
  Array z_back = z;
  for (std::size_t i = 0; i < z.size(); ++i) z_back[i] = alpha * z[i] + (1.0 - alpha) * noise_scale * e[i];
  StepOutput out{z, net(z_back, alpha * t, carry)};
  euler(out.z, out.x_hat, t, dt);
  return out;
}

Array integrate(const Array& z0, const TimeGrid& grid, double gamma, double noise_scale, const DenoiseFn& net,
                Rng& rng, const std::function<void(std::size_t, const Array&, const Array&)>& observe) {
  if (!grid.valid()) throw std::invalid_argument("integrate: invalid time grid");
  Array z = z0;
  Array carry = Array::zeros_like(z0);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid.times[i];
    const double dt = grid.times[i + 1] - t;
    StepOutput s = sde_step(z, t, dt, gamma, noise_scale, net, carry, rng);
    if (observe) observe(i, carry, s.x_hat);
    z = std::move(s.z);
    carry = std::move(s.x_hat);
  }
  return z;
}

DenoiseFn make_denoiser(const Model& model, double omega, const Array* condition, double cond_cfg) {
  return [&model, omega, condition, cond_cfg](const Array& z, double t, const Array& carry) {
    const std::size_t batch = z.rows() / model.config.corpus.seq_len;
    const std::vector<double> ts(batch, t);
    const std::vector<double> ws(batch, omega);
    auto pass = [&](const Array* cond) {
      Tape tape;
      NoGradGuard guard(tape);
      const BoundParams p = model.net.bind(tape, model.weights, false);
      std::optional<Var> c;
      if (cond != nullptr) c = tape.constant(*cond);
      NetRequest req{tape.constant(z), ts, ws, Mode::denoise, tape.constant(carry), c};
      return model.net.forward(p, req).value();
    };
    Array x_c = pass(condition);
    if (condition == nullptr || cond_cfg == 1.0) return x_c;
    const Array zero = Array::zeros_like(*condition);
    const Array x_u = pass(&zero);
    for (std::size_t i = 0; i < x_c.size(); ++i) x_c[i] = x_u[i] + cond_cfg * (x_c[i] - x_u[i]);
    return x_c;
  };
}

std::vector<int> decode_tokens(const Model& model, const Array& z, double omega, const Array* condition) {
  const std::size_t batch = z.rows() / model.config.corpus.seq_len;
  Tape tape;
  NoGradGuard guard(tape);
  const BoundParams p = model.net.bind(tape, model.weights, false);
  const std::vector<double> ones(batch, 1.0);
  const std::vector<double> ws(batch, omega);
  std::optional<Var> c;
  if (condition != nullptr) c = tape.constant(*condition);
  Var h = model.net.forward(p, NetRequest{tape.constant(z), ones, ws, Mode::decode, std::nullopt, c});
  return argmax_rows(model.net.unembed(p, h).value());
}

GenerateResult generate(const Model& model, const SamplerConfig& config, const std::vector<TokenSequence>* conditions) {
  const std::size_t L = model.config.corpus.seq_len;
  const std::size_t de = model.config.corpus.d_emb;
  const bool conditional = model.config.corpus.cond_len > 0;
  if (conditional != (conditions != nullptr)) {
    throw std::invalid_argument(conditional ? "generate: this model needs one condition per sample"
                                            : "generate: this model is unconditional");
  }
  if (conditions != nullptr && conditions->size() != config.n) {
    throw std::invalid_argument("generate: expected " + std::to_string(config.n) + " conditions");
  }
  GenerateResult out;
  const auto& tr = model.config.train;
  if (config.cfg < tr.cfg_min || config.cfg > tr.cfg_max) {
    out.warnings.push_back("cfg scale " + format_double(config.cfg) + " lies outside the trained range [" +
                           format_double(tr.cfg_min) + ", " + format_double(tr.cfg_max) + "]");
  }
  if (!model.decode_trained) {
    out.warnings.push_back("decoder untrained: the decode branch never ran, tokens come from an untrained readout");
  }
  out.grid = build_grid(config);
  const double sigma = model.config.flow.noise_scale;
  const Rng base(config.seed, kNoiseStream);
  out.tokens.reserve(config.n);
  for (std::size_t start = 0, chunk = 0; start < config.n; start += config.chunk, ++chunk) {
    const std::size_t b = std::min(config.chunk, config.n - start);
    Rng rng = base.split(chunk);
    Array z = gaussian(rng, Shape{b * L, de});
    for (auto& v : z.values()) v *= sigma;
    std::optional<Array> cond;
    if (conditions != nullptr) {
      cond = model.provider.embed_batch(std::span<const TokenSequence>(conditions->data() + start, b));
    }
    const Array* cp = cond ? &*cond : nullptr;
    const DenoiseFn fn = make_denoiser(model, config.cfg, cp, config.cond_cfg);
    z = integrate(z, out.grid, config.gamma, sigma, fn, rng);
    const std::vector<int> ids = decode_tokens(model, z, config.cfg, cp);
    for (std::size_t s = 0; s < b; ++s) out.tokens.emplace_back(ids.begin() + s * L, ids.begin() + (s + 1) * L);
  }
  return out;
}

}  // namespace elf
