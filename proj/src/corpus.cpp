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

#include "elf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace elf {

namespace {

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::size_t draw_categorical(std::span<const double> p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding leftovers land on the last non-zero entry.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

}  // namespace

// ---------------------------------------------------------------- MarkovSource

MarkovSource::MarkovSource(std::size_t vocab, std::size_t order, std::vector<double> transitions)
    : vocab_(vocab), order_(order), contexts_(ipow(vocab, order)), transitions_(std::move(transitions)) {
  if (vocab < 2) throw std::invalid_argument("MarkovSource: vocabulary needs at least two ids");
  if (order != 1 && order != 2) throw std::invalid_argument("MarkovSource: order must be 1 or 2");
  if (transitions_.size() != contexts_ * vocab_) {
    throw std::invalid_argument("MarkovSource: transition table must have |V|^order x |V| entries");
  }
  for (std::size_t c = 0; c < contexts_; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < vocab_; ++j) {
      const double p = transitions_[c * vocab_ + j];
      if (!(p >= 0.0)) throw std::invalid_argument("MarkovSource: negative or NaN transition probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) {
      throw std::invalid_argument("MarkovSource: transition row " + std::to_string(c) + " sums to " + std::to_string(s));
    }
  }
  solve_stationary();
}

MarkovSource MarkovSource::dirichlet(std::size_t vocab, std::size_t order, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("MarkovSource::dirichlet: alpha must be positive");
  const std::size_t contexts = ipow(vocab, order);
  std::vector<double> t(contexts * vocab);
  for (std::size_t c = 0; c < contexts; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      // Floor keeps every context reachable so the stationary law is unique.
      t[c * vocab + j] = std::max(rng.gamma(alpha), 1e-300);
      s += t[c * vocab + j];
    }
    double renorm = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      t[c * vocab + j] /= s;
      renorm += t[c * vocab + j];
    }
    // Absorb the last ulp of rounding into the largest entry.
    auto row = std::span(t).subspan(c * vocab, vocab);
    *std::max_element(row.begin(), row.end()) += 1.0 - renorm;
  }
  return MarkovSource(vocab, order, std::move(t));
}

MarkovSource MarkovSource::uniform(std::size_t vocab, std::size_t order) {
  return MarkovSource(vocab, order, std::vector<double>(ipow(vocab, order) * vocab, 1.0 / static_cast<double>(vocab)));
}

MarkovSource MarkovSource::cycle(std::size_t vocab) {
  std::vector<double> t(vocab * vocab, 0.0);
  for (std::size_t a = 0; a < vocab; ++a) t[a * vocab + (a + 1) % vocab] = 1.0;
  return MarkovSource(vocab, 1, std::move(t));
}

std::span<const double> MarkovSource::row(std::size_t context) const {
  if (context >= contexts_) throw std::out_of_range("MarkovSource::row: context out of range");
  return std::span(transitions_).subspan(context * vocab_, vocab_);
}

void MarkovSource::solve_stationary() {
  // Chain on contexts: (a, b) -> (b, c) with probability T[(a, b), c].
  const auto n = static_cast<Eigen::Index>(contexts_);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t c = 0; c < contexts_; ++c) {
    for (std::size_t j = 0; j < vocab_; ++j) {
      const std::size_t next = (c * vocab_ + j) % contexts_;
      a(static_cast<Eigen::Index>(next), static_cast<Eigen::Index>(c)) += transitions_[c * vocab_ + j];
    }
  }
  // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
  a -= Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  Eigen::VectorXd pi = a.fullPivLu().solve(rhs);
  stationary_.assign(contexts_, 0.0);
  double s = 0.0;
  for (std::size_t c = 0; c < contexts_; ++c) {
    stationary_[c] = std::max(0.0, pi(static_cast<Eigen::Index>(c)));
    s += stationary_[c];
  }
  for (auto& v : stationary_) v /= s;
  double residual = 0.0;
  std::vector<double> next(contexts_, 0.0);
  for (std::size_t c = 0; c < contexts_; ++c) {
    for (std::size_t j = 0; j < vocab_; ++j) next[(c * vocab_ + j) % contexts_] += stationary_[c] * transitions_[c * vocab_ + j];
  }
  for (std::size_t c = 0; c < contexts_; ++c) residual = std::max(residual, std::abs(next[c] - stationary_[c]));
  if (!(residual < 1e-10)) {
    throw std::runtime_error("MarkovSource: stationary distribution not unique (residual " + std::to_string(residual) + ")");
  }
}

std::vector<double> MarkovSource::unigram() const {
  std::vector<double> u(vocab_, 0.0);
  // Most recent token of the context is its least significant digit.
  for (std::size_t c = 0; c < contexts_; ++c) u[c % vocab_] += stationary_[c];
  return u;
}

double MarkovSource::entropy_rate() const {
  double h = 0.0;
  for (std::size_t c = 0; c < contexts_; ++c) h += stationary_[c] * entropy_of(row(c));
  return h;
}

double MarkovSource::unigram_entropy() const {
  const auto u = unigram();
  return entropy_of(u);
}

std::size_t MarkovSource::context_of(std::span<const int> seq, std::size_t end) const {
  std::size_t c = 0;
  for (std::size_t k = end - order_; k < end; ++k) c = c * vocab_ + static_cast<std::size_t>(seq[k]);
  return c;
}

TokenSequence MarkovSource::sample(std::size_t length, Rng& rng) const {
  TokenSequence out;
  out.reserve(std::max(length, order_));
  std::size_t ctx = draw_categorical(stationary_, rng);
  for (std::size_t k = order_; k-- > 0;) out.push_back(static_cast<int>((ctx / ipow(vocab_, k)) % vocab_));
  while (out.size() < length) {
    const std::size_t next = draw_categorical(row(ctx), rng);
    out.push_back(static_cast<int>(next));
    ctx = (ctx * vocab_ + next) % contexts_;
  }
  out.resize(length);
  return out;
}

double MarkovSource::token_nll(std::span<const int> seq, std::size_t i, double floor) const {
  if (i < order_ || i >= seq.size()) throw std::out_of_range("token_nll: position has no full context");
  for (std::size_t k = i - order_; k <= i; ++k) {
    if (seq[k] < 0 || static_cast<std::size_t>(seq[k]) >= vocab_) throw std::out_of_range("token_nll: token id out of range");
  }
  const double p = prob(context_of(seq, i), seq[i]);
  return -std::log(std::max(p, floor));
}

std::vector<TokenSequence> sample_corpus(const MarkovSource& source, std::size_t n, std::size_t length, Rng& rng) {
  if (n == 0 || length == 0) throw std::invalid_argument("sample_corpus: n and length must be positive");
  std::vector<TokenSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(source.sample(length, rng));
  return out;
}

double OracleScore::perplexity() const {
  if (scored_tokens == 0) throw std::invalid_argument("oracle perplexity: no scored tokens");
  return std::exp(total_nll / static_cast<double>(scored_tokens));
}

OracleScore oracle_score(const MarkovSource& source, std::span<const TokenSequence> seqs, double floor) {
  if (seqs.empty()) throw std::invalid_argument("oracle_perplexity: no sequences");
  OracleScore score;
  for (const auto& s : seqs) {
    for (std::size_t i = source.order(); i < s.size(); ++i) {
      score.total_nll += source.token_nll(s, i, floor);
      ++score.scored_tokens;
    }
  }
  return score;
}

double oracle_perplexity(const MarkovSource& source, std::span<const TokenSequence> seqs, double floor) {
  return oracle_score(source, seqs, floor).perplexity();
}

// ---------------------------------------------------------------- EmbeddingProvider

EmbeddingProvider::EmbeddingProvider(std::size_t vocab, std::size_t d_emb, Rng& rng)
    : table_(Shape{vocab, d_emb}), mean_(Shape{d_emb}, 0.0), stddev_(Shape{d_emb}, 1.0) {
  if (vocab < 2 || d_emb < 1) throw std::invalid_argument("EmbeddingProvider: bad dimensions");
  for (std::size_t r = 0; r < vocab; ++r) {
    double s2 = 0.0;
    for (std::size_t c = 0; c < d_emb; ++c) {
      table_.at(r, c) = rng.normal();
      s2 += table_.at(r, c) * table_.at(r, c);
    }
    const double scale = 1.0 / std::sqrt(s2 / static_cast<double>(d_emb));
    for (std::size_t c = 0; c < d_emb; ++c) table_.at(r, c) *= scale;
  }
  if (!(min_pairwise_distance() > 0.0)) throw std::runtime_error("EmbeddingProvider: duplicate embedding rows");
}

EmbeddingProvider::EmbeddingProvider(Array table, Array mean, Array stddev)
    : table_(std::move(table)), mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (table_.rank() != 2 || mean_.size() != table_.cols() || stddev_.size() != table_.cols()) {
    throw ShapeError("EmbeddingProvider: inconsistent table/statistics shapes");
  }
  for (double s : stddev_.values()) {
    if (!(s > 0.0)) throw std::invalid_argument("EmbeddingProvider: non-positive channel std");
  }
}

void EmbeddingProvider::fit_normalization(std::span<const TokenSequence> sample) {
  const std::size_t d = dim();
  std::vector<double> sum(d, 0.0);
  std::size_t n = 0;
  for (const auto& s : sample) {
    for (int tok : s) {
      if (!Vocab{vocab_size()}.contains(tok)) throw std::out_of_range("fit_normalization: unknown token id");
      for (std::size_t c = 0; c < d; ++c) sum[c] += table_.at(static_cast<std::size_t>(tok), c);
      ++n;
    }
  }
  if (n < 2) throw std::invalid_argument("fit_normalization: need at least two tokens");
  std::vector<double> sq(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) mean_[c] = sum[c] / static_cast<double>(n);
  for (const auto& s : sample) {
    for (int tok : s) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = table_.at(static_cast<std::size_t>(tok), c) - mean_[c];
        sq[c] += dv * dv;
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) stddev_[c] = std::max(std::sqrt(sq[c] / static_cast<double>(n)), 1e-8);
}

Array EmbeddingProvider::embed(std::span<const int> tokens) const {
  const std::size_t d = dim();
  Array out(Shape{tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (!Vocab{vocab_size()}.contains(tok)) throw std::out_of_range("embed: unknown token id " + std::to_string(tok));
    for (std::size_t c = 0; c < d; ++c) {
      out.at(i, c) = (table_.at(static_cast<std::size_t>(tok), c) - mean_[c]) / stddev_[c];
    }
  }
  return out;
}

Array EmbeddingProvider::embed_batch(std::span<const TokenSequence> seqs) const {
  TokenSequence flat;
  for (const auto& s : seqs) flat.insert(flat.end(), s.begin(), s.end());
  return embed(flat);
}

Array EmbeddingProvider::normalized_table() const {
  TokenSequence ids(vocab_size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return embed(ids);
}

Array EmbeddingProvider::normalize(const Array& raw) const {
  Array out = raw;
  const std::size_t d = dim();
  if (raw.cols() != d) throw ShapeError("normalize: expected " + std::to_string(d) + " channels");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean_[i % d]) / stddev_[i % d];
  return out;
}

Array EmbeddingProvider::unnormalize(const Array& normalized) const {
  Array out = normalized;
  const std::size_t d = dim();
  if (normalized.cols() != d) throw ShapeError("unnormalize: expected " + std::to_string(d) + " channels");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * stddev_[i % d] + mean_[i % d];
  return out;
}

double EmbeddingProvider::min_pairwise_distance() const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t d = dim();
  for (std::size_t a = 0; a < vocab_size(); ++a) {
    for (std::size_t b = a + 1; b < vocab_size(); ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += (table_.at(a, c) - table_.at(b, c)) * (table_.at(a, c) - table_.at(b, c));
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

// ---------------------------------------------------------------- seq2seq tasks

Seq2SeqPair make_seq2seq_pair(TaskKind kind, TokenSequence condition) {
  TokenSequence target = condition;
  if (kind == TaskKind::reverse) std::reverse(target.begin(), target.end());
  return {std::move(condition), std::move(target)};
}

std::vector<Seq2SeqPair> make_seq2seq_task(TaskKind kind, std::size_t n, std::size_t cond_len, std::size_t target_len,
                                           std::size_t total_len, std::size_t vocab, Rng& rng) {
  if (cond_len + target_len > total_len) {
    throw std::invalid_argument("make_seq2seq_task: condition + target length exceeds the configured total");
  }
  if (cond_len != target_len) throw std::invalid_argument("make_seq2seq_task: copy/reverse need equal lengths");
  if (vocab < 2) throw std::invalid_argument("make_seq2seq_task: vocabulary too small");
  std::vector<Seq2SeqPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TokenSequence cond(cond_len);
    for (auto& t : cond) t = 1 + static_cast<int>(rng.below(vocab - 1));
    out.push_back(make_seq2seq_pair(kind, std::move(cond)));
  }
  return out;
}

double exact_match_accuracy(std::span<const TokenSequence> predictions, std::span<const TokenSequence> targets) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw std::invalid_argument("exact_match_accuracy: need equally many non-empty predictions and targets");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::string to_string(TaskKind kind) { return kind == TaskKind::copy ? "copy" : "reverse"; }

}  // namespace elf
