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
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "elf/config.hpp"
#include "elf/corpus.hpp"
#include "elf/engine.hpp"
#include "elf/net.hpp"

namespace elf {

/// Raised when a loss or gradient stops being finite.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

/// Corpus, oracle and embeddings rebuilt deterministically from a config.
struct TrainingData {
  std::optional<MarkovSource> source;
  EmbeddingProvider provider;
  std::vector<TokenSequence> targets;
  /// Parallel to `targets`; empty for unconditional tasks.
  std::vector<TokenSequence> conditions;
};

MarkovSource build_source(const RunConfig& config);
TrainingData build_training_data(const RunConfig& config);
/// Same corpus, with a stored provider instead of a freshly fitted one.
TrainingData build_training_data(const RunConfig& config, EmbeddingProvider provider);

struct Batch {
  std::vector<TokenSequence> targets;
  /// (B * L) x d_emb normalized clean embeddings.
  Array x;
  /// (B * Lc) x d_emb, rows of dropped examples are zero.
  std::optional<Array> condition;
};

/// `drop` marks examples whose condition is zeroed; may be empty.
Batch make_batch(const TrainingData& data, std::span<const std::size_t> indices, const std::vector<bool>& drop = {});

/// Per-example Bernoulli(p) drop mask.
std::vector<bool> draw_condition_dropout(std::size_t n, double p, Rng& rng);

/// omega = lo + (hi - lo) * u^power.
double sample_cfg_scale(double lo, double hi, double power, Rng& rng);

struct DenoiseDraws {
  std::vector<double> t;
  std::vector<double> omega;
  Array eps;
  std::vector<bool> self_cond;
};

struct DecodeDraws {
  /// One corruption level per row.
  std::vector<double> p;
  std::vector<double> omega;
  Array eps;
};

DenoiseDraws draw_denoise(const RunConfig& config, std::size_t batch, Rng& rng);
DecodeDraws draw_decode(const RunConfig& config, std::size_t batch, Rng& rng);

/// Denoise-branch loss built on `tape` from bound parameters.
///
/// Self-conditioned examples run a gradient-free first pass and a second
/// pass conditioned on its estimate; the rest keep the first pass with
/// gradients. Targets are constants.
Var denoise_loss(const DenoiserNet& net, const BoundParams& p, const Batch& batch, const RunConfig& config,
                 const DenoiseDraws& draws);
Var decode_loss(const DenoiserNet& net, const BoundParams& p, const Batch& batch, const RunConfig& config,
                const DecodeDraws& draws);

struct StepResult {
  double loss = 0.0;
  /// Aligned with the parameter set; frozen entries are zero.
  std::vector<Array> grads;
};

StepResult train_step_denoise(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                              const RunConfig& config, const DenoiseDraws& draws);
StepResult train_step_denoise(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                              const RunConfig& config, Rng& rng);
StepResult train_step_decode(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                             const RunConfig& config, const DecodeDraws& draws);
StepResult train_step_decode(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                             const RunConfig& config, Rng& rng);

struct TrainCounters {
  std::uint64_t step = 0;
  std::uint64_t denoise_steps = 0;
  std::uint64_t decode_steps = 0;
  std::uint64_t condition_draws = 0;
  std::uint64_t condition_dropped = 0;
  std::uint64_t adam_t = 0;

  friend bool operator==(const TrainCounters&, const TrainCounters&) = default;
};

/// Everything needed to resume training or to sample.
struct Checkpoint {
  static constexpr char kMagic[8] = {'E', 'L', 'F', 'C', 'K', 'P', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_echo;
  std::string corpus_spec;
  TrainCounters counters;
  Array emb_table;
  Array emb_mean;
  Array emb_std;
  ParamSet params;
  ParamSet ema;
  ParamSet adam_m;
  ParamSet adam_v;

  RunConfig config() const { return RunConfig::parse(config_echo); }
  EmbeddingProvider provider() const { return EmbeddingProvider(emb_table, emb_mean, emb_std); }

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::uint64_t step = 0;
  Mode branch = Mode::denoise;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_header();
/// One CSV line without a trailing newline.
std::string metrics_line(const StepRecord& record);

class Trainer {
 public:
  /// `echo` is the verbatim config text; defaults to config.to_text().
  explicit Trainer(RunConfig config, std::string echo = {});
  explicit Trainer(const Checkpoint& checkpoint);

  StepRecord step();
  /// Runs until the configured step count; `on_step` sees every record.
  void run(const std::function<void(const StepRecord&)>& on_step = {});
  void run(std::size_t steps, const std::function<void(const StepRecord&)>& on_step = {});

  Checkpoint checkpoint() const;

  const RunConfig& config() const { return config_; }
  const std::string& echo() const { return echo_; }
  const TrainingData& data() const { return data_; }
  const DenoiserNet& net() const { return net_; }
  const ParamSet& params() const { return net_.params(); }
  const ParamSet& ema() const { return ema_; }
  const TrainCounters& counters() const { return counters_; }
  double learning_rate(std::uint64_t step) const;

 private:
  void apply_update(const StepResult& result, double lr);

  RunConfig config_;
  std::string echo_;
  TrainingData data_;
  DenoiserNet net_;
  ParamSet ema_;
  ParamSet adam_m_;
  ParamSet adam_v_;
  TrainCounters counters_;
};

/// Trained weights ready for sampling.
struct Model {
  RunConfig config;
  std::string echo;
  EmbeddingProvider provider;
  DenoiserNet net;
  /// EMA weights when requested, otherwise the raw parameters.
  ParamSet weights;
  bool decode_trained = false;

  static Model from_checkpoint(const Checkpoint& checkpoint, bool use_ema = true);
  static Model from_trainer(const Trainer& trainer, bool use_ema = true);
};

/// Loads `<dir>/<training fingerprint>.bin` when it holds a finished run of
/// this config; otherwise trains from scratch and stores the result there,
/// with the per-step metrics next to it as `<fingerprint>.metrics.csv`.
Checkpoint train_cached(const RunConfig& config, const std::string& dir,
                        const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace elf
