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
#include <span>
#include <string>
#include <vector>

#include "elf/engine.hpp"

namespace elf {

using TokenSequence = std::vector<int>;

struct Vocab {
  static constexpr int kPad = 0;
  std::size_t size = 16;

  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < size; }
};

/// Markov chain of order 1 or 2 over a small vocabulary.
///
/// Contexts are the last `order` tokens packed base-|V| (oldest token most
/// significant). Rows of the transition table are indexed by context.
class MarkovSource {
 public:
  MarkovSource(std::size_t vocab, std::size_t order, std::vector<double> transitions);

  /// Rows drawn from a symmetric Dirichlet(alpha).
  static MarkovSource dirichlet(std::size_t vocab, std::size_t order, double alpha, Rng& rng);
  static MarkovSource uniform(std::size_t vocab, std::size_t order);
  /// Order-1 chain that always emits (previous + 1) mod |V|.
  static MarkovSource cycle(std::size_t vocab);

  std::size_t vocab_size() const { return vocab_; }
  std::size_t order() const { return order_; }
  std::size_t num_contexts() const { return contexts_; }
  std::span<const double> row(std::size_t context) const;
  double prob(std::size_t context, int next) const { return transitions_[context * vocab_ + next]; }
  const std::vector<double>& transitions() const { return transitions_; }

  /// Stationary distribution over contexts.
  const std::vector<double>& stationary() const { return stationary_; }
  /// Stationary single-token marginal.
  std::vector<double> unigram() const;
  double entropy_rate() const;
  double unigram_entropy() const;

  TokenSequence sample(std::size_t length, Rng& rng) const;

  /// -ln p(seq[i] | seq[i-order..i-1]) for i >= order.
  double token_nll(std::span<const int> seq, std::size_t i, double floor = 1e-10) const;

 private:
  std::size_t context_of(std::span<const int> seq, std::size_t end) const;
  void solve_stationary();

  std::size_t vocab_;
  std::size_t order_;
  std::size_t contexts_;
  std::vector<double> transitions_;
  std::vector<double> stationary_;
};

std::vector<TokenSequence> sample_corpus(const MarkovSource& source, std::size_t n, std::size_t length, Rng& rng);

struct OracleScore {
  double total_nll = 0.0;
  std::size_t scored_tokens = 0;
  double perplexity() const;
};

/// Pooled oracle score. Only positions with a full context (i >= order) are
/// scored; tokens the source cannot emit contribute -ln(floor).
OracleScore oracle_score(const MarkovSource& source, std::span<const TokenSequence> seqs, double floor = 1e-10);
double oracle_perplexity(const MarkovSource& source, std::span<const TokenSequence> seqs, double floor = 1e-10);

/// Frozen Gaussian embedding table with per-channel normalization.
class EmbeddingProvider {
 public:
  /// Table rows are N(0, 1) draws rescaled to unit standard deviation.
  EmbeddingProvider(std::size_t vocab, std::size_t d_emb, Rng& rng);
  /// Restores a provider from stored arrays.
  EmbeddingProvider(Array table, Array mean, Array stddev);

  std::size_t vocab_size() const { return table_.rows(); }
  std::size_t dim() const { return table_.cols(); }
  const Array& table() const { return table_; }
  const Array& mean() const { return mean_; }
  const Array& stddev() const { return stddev_; }

  void fit_normalization(std::span<const TokenSequence> sample);

  /// (len x d_emb) normalized embeddings.
  Array embed(std::span<const int> tokens) const;
  /// Sequences stacked row-wise: (n * len) x d_emb.
  Array embed_batch(std::span<const TokenSequence> seqs) const;
  /// Normalized embedding of every vocabulary entry, |V| x d_emb.
  Array normalized_table() const;

  Array normalize(const Array& raw) const;
  Array unnormalize(const Array& normalized) const;

  double min_pairwise_distance() const;

 private:
  Array table_;
  Array mean_;
  Array stddev_;
};

enum class TaskKind { copy, reverse };

struct Seq2SeqPair {
  TokenSequence condition;
  TokenSequence target;
};

Seq2SeqPair make_seq2seq_pair(TaskKind kind, TokenSequence condition);

/// Random conditions drawn uniformly from the non-pad ids.
std::vector<Seq2SeqPair> make_seq2seq_task(TaskKind kind, std::size_t n, std::size_t cond_len, std::size_t target_len,
                                           std::size_t total_len, std::size_t vocab, Rng& rng);

/// Fraction of predictions equal to their target sequence.
double exact_match_accuracy(std::span<const TokenSequence> predictions, std::span<const TokenSequence> targets);

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

}  // namespace elf
