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
#include <span>
#include <string>
#include <vector>

#include "elf/config.hpp"
#include "elf/corpus.hpp"
#include "elf/sampler.hpp"
#include "elf/trainer.hpp"

namespace elf {

/// Entropy (nats) of the pooled token histogram.
double unigram_entropy(std::span<const TokenSequence> seqs, std::size_t vocab);
/// Mean over sequences of each sequence's own unigram entropy.
double unigram_entropy_per_sample(std::span<const TokenSequence> seqs, std::size_t vocab);
/// Number of distinct sequences over the number of sequences.
double distinct_fraction(std::span<const TokenSequence> seqs);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct MetricsRow {
  std::string fingerprint;
  std::string axis;
  std::string value;
  std::size_t steps = 0;
  std::string sampler;
  double gamma = 0.0;
  double omega = 1.0;
  double gen_ppl = 0.0;
  double entropy = 0.0;
  double distinct = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  static std::string csv_header();
  std::string csv_line() const;
};

/// Scores samples against the oracle; sampler fields are taken from `sampler`.
MetricsRow evaluate_samples(const MarkovSource& source, std::span<const TokenSequence> seqs, const RunConfig& run,
                            const SamplerConfig& sampler);

/// Per-sequence mean oracle negative log-likelihood over scored positions.
std::vector<double> per_sample_nll(const MarkovSource& source, std::span<const TokenSequence> seqs);

/// Fresh prompts for a copy or reverse model, drawn on a stream disjoint
/// from the training corpus.
std::vector<Seq2SeqPair> heldout_prompts(const RunConfig& config, std::size_t n, std::uint64_t seed);

enum class SweepAxis { omega, steps, gamma, bottleneck, mode_prob, pred_target, schedule };

SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);
/// True when each value needs its own training run.
bool is_training_axis(SweepAxis axis);

/// Applies one axis value to a config (train.*, net.* or sample.* keys).
void apply_axis_value(RunConfig& config, SweepAxis axis, const std::string& value);

struct SweepSpec {
  SweepAxis axis = SweepAxis::omega;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

/// Produces a trained model for a config (cached or trained on demand).
using ModelProvider = std::function<Model(const RunConfig&)>;

/// One row per (value, seed). Sampling axes reuse the model for the base
/// config; training axes request a model per value, seeded per row.
std::vector<MetricsRow> run_sweep(const SweepSpec& spec, const RunConfig& base, const ModelProvider& models);

std::string rows_to_csv(std::span<const MetricsRow> rows);
/// Two numeric columns per line: entropy and Gen. PPL.
std::string frontier_plot_data(std::span<const MetricsRow> rows);

}  // namespace elf
