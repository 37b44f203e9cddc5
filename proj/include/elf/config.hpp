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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "elf/flow.hpp"
#include "elf/net.hpp"

namespace elf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CorpusTask { markov, copy, reverse };
enum class ScheduleKind { uniform, logit_normal };

std::string to_string(CorpusTask task);
std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

struct CorpusConfig {
  CorpusTask task = CorpusTask::markov;
  std::size_t vocab = 16;
  std::size_t order = 2;
  double alpha = 0.3;
  std::uint64_t seed = 1234;
  std::size_t seq_len = 16;
  /// Condition prefix length for copy/reverse; must be 0 for markov.
  std::size_t cond_len = 0;
  /// Upper bound on condition + target length.
  std::size_t total_len = 32;
  std::size_t n_train = 20000;
  std::size_t norm_tokens = 100000;
  std::size_t d_emb = 32;
};

struct FlowConfig {
  ScheduleParams denoise{-1.5, 0.8};
  double noise_scale = 2.0;
  ScheduleParams decode{0.8, 0.8};
  double decode_noise_scale = 1.0;
  /// When false the velocity target is x - eps while z still uses s * eps.
  bool noise_in_velocity = true;
};

struct TrainConfig {
  double mode_prob_denoise = 0.8;
  double self_cond_prob = 0.5;
  double cfg_min = 0.5;
  double cfg_max = 5.0;
  double cfg_power = 2.0;
  double condition_dropout = 0.1;
  std::size_t batch_size = 16;
  std::size_t steps = 12000;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double adam_eps = 1e-8;
  double ema_decay = 0.9999;
  double warmup_frac = 0.05;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t ckpt_every = 0;
};

struct SamplerConfig {
  std::size_t steps = 64;
  ScheduleKind schedule = ScheduleKind::logit_normal;
  ScheduleParams grid{-1.5, 0.8};
  double gamma = 0.0;
  double cfg = 1.0;
  double cond_cfg = 1.0;
  std::uint64_t seed = 0;
  std::size_t n = 256;
  /// Reuse one grid drawn from `seed` instead of drawing per call.
  bool frozen_grid = false;
  bool use_ema = true;
  std::size_t chunk = 128;
};

struct EvalConfig {
  bool per_sample_entropy = false;
};

/// Every knob of a run, serialized as flat namespaced key=value lines.
struct RunConfig {
  CorpusConfig corpus;
  NetConfig net;
  FlowConfig flow;
  TrainConfig train;
  SamplerConfig sample;
  EvalConfig eval;

  /// Parses key=value text on top of the defaults. Unknown keys, malformed
  /// values and invalid combinations raise ConfigError.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  /// Every key in declaration order; parse(to_text()) reproduces the config.
  std::string to_text() const;
  /// Hex FNV-1a of to_text().
  std::string fingerprint() const;
  /// Fingerprint of the keys that affect training (sample.*, eval.* and
  /// train.ckpt_every excluded).
  std::string training_fingerprint() const;
  /// Keys that define the corpus and embedding table.
  std::string corpus_spec() const;

  /// Derived net shape (vocab, lengths and noise scale follow the corpus and flow sections).
  NetConfig net_config() const;
  void validate() const;
};

std::string fnv1a_hex(const std::string& text);
/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace elf
