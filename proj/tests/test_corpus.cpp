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

#include <cmath>
#include <map>

#include "doctest.h"
#include "elf/corpus.hpp"
#include "elf/eval.hpp"
#include "helpers.hpp"

using namespace elf;

namespace {

// Independent oracle: power iteration on the context chain.
std::vector<double> power_stationary(const MarkovSource& src) {
  const std::size_t n = src.num_contexts();
  const std::size_t v = src.vocab_size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 20000; ++it) {
    std::vector<double> next(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t j = 0; j < v; ++j) next[(c * v + j) % n] += pi[c] * src.prob(c, static_cast<int>(j));
    }
    // Lazy step so periodic chains still converge.
    for (std::size_t c = 0; c < n; ++c) pi[c] = 0.5 * pi[c] + 0.5 * next[c];
  }
  return pi;
}

}  // namespace

TEST_CASE("dirichlet rows are stochastic and the stationary law is a fixed point") {
  Rng rng(1);
  for (std::size_t order : {1u, 2u}) {
    const MarkovSource src = MarkovSource::dirichlet(16, order, 0.3, rng);
    for (std::size_t c = 0; c < src.num_contexts(); ++c) {
      double s = 0.0;
      for (double p : src.row(c)) s += p;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const auto& pi = src.stationary();
    const auto oracle = power_stationary(src);
    double worst = 0.0;
    for (std::size_t c = 0; c < pi.size(); ++c) worst = std::max(worst, std::abs(pi[c] - oracle[c]));
    CHECK(worst < 1e-9);
    std::vector<double> next(pi.size(), 0.0);
    for (std::size_t c = 0; c < pi.size(); ++c) {
      for (std::size_t j = 0; j < 16; ++j) next[(c * 16 + j) % pi.size()] += pi[c] * src.prob(c, static_cast<int>(j));
    }
    for (std::size_t c = 0; c < pi.size(); ++c) CHECK(std::abs(next[c] - pi[c]) < 1e-10);
  }
}

TEST_CASE("invalid transition tables are rejected") {
  CHECK_THROWS(MarkovSource(2, 1, {0.5, 0.5, 0.2, 0.2}));
  CHECK_THROWS(MarkovSource(2, 3, std::vector<double>(16, 0.5)));
  CHECK_THROWS(MarkovSource(2, 1, {1.5, -0.5, 0.5, 0.5}));
}

TEST_CASE("deterministic chain yields the forced sequence with perplexity 1") {
  const MarkovSource src = MarkovSource::cycle(5);
  Rng rng(4);
  const auto seqs = sample_corpus(src, 10, 12, rng);
  for (const auto& s : seqs) {
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] == (s[i - 1] + 1) % 5);
  }
  CHECK(oracle_perplexity(src, seqs) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uniform chain: entropy and perplexity") {
  const MarkovSource src = MarkovSource::uniform(16, 2);
  Rng rng(5);
  const auto seqs = sample_corpus(src, 100000 / 16, 16, rng);
  CHECK(std::abs(unigram_entropy(seqs, 16) - std::log(16.0)) < 0.02);
  const std::vector<TokenSequence> any{{3, 3, 3, 1, 0, 15}};
  CHECK(oracle_perplexity(src, any) == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("order-1 bigram frequencies match the table") {
  Rng rng(6);
  const MarkovSource src = MarkovSource::dirichlet(8, 1, 0.5, rng);
  const auto seqs = sample_corpus(src, 1000, 1000, rng);
  std::vector<double> pair(64, 0.0);
  std::vector<double> from(8, 0.0);
  for (const auto& s : seqs) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      pair[s[i - 1] * 8 + s[i]] += 1.0;
      from[s[i - 1]] += 1.0;
    }
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = 0; b < 8; ++b) worst = std::max(worst, std::abs(pair[a * 8 + b] / from[a] - src.prob(a, b)));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("oracle perplexity of source samples tracks the entropy rate") {
  Rng rng(7);
  const MarkovSource src = MarkovSource::dirichlet(16, 2, 0.3, rng);
  // Entropy rate recomputed here from the stationary law and rows.
  double h = 0.0;
  for (std::size_t c = 0; c < src.num_contexts(); ++c) {
    for (double p : src.row(c)) {
      if (p > 0.0) h -= src.stationary()[c] * p * std::log(p);
    }
  }
  CHECK(src.entropy_rate() == doctest::Approx(h).epsilon(1e-12));
  const auto seqs = sample_corpus(src, 100000 / 16, 16, rng);
  const double ppl = oracle_perplexity(src, seqs);
  CHECK(std::abs(ppl / std::exp(h) - 1.0) < 0.05);
  const auto uni = src.unigram();
  double hu = 0.0;
  for (double p : uni) {
    if (p > 0.0) hu -= p * std::log(p);
  }
  CHECK(src.unigram_entropy() == doctest::Approx(hu).epsilon(1e-12));
  CHECK(std::abs(unigram_entropy(seqs, 16) - hu) < 0.03);
}

TEST_CASE("tokens the source cannot emit hit the floor") {
  const MarkovSource src = MarkovSource::cycle(4);
  const std::vector<TokenSequence> bad{{0, 2}};
  const OracleScore s = oracle_score(src, bad);
  CHECK(s.scored_tokens == 1);
  CHECK(s.total_nll == doctest::Approx(-std::log(1e-10)));
}

TEST_CASE("embedding provider") {
  Rng rng(8);
  EmbeddingProvider emb(16, 32, rng);
  CHECK(emb.min_pairwise_distance() > 0.0);
  const MarkovSource src = MarkovSource::dirichlet(16, 2, 0.3, rng);
  emb.fit_normalization(sample_corpus(src, 100000 / 16, 16, rng));

  const TokenSequence s{3, 3, 7};
  const Array e = emb.embed(s);
  for (std::size_t c = 0; c < 32; ++c) CHECK(e.at(0, c) == e.at(1, c));
  CHECK_THROWS(emb.embed(TokenSequence{16}));
  CHECK_THROWS(emb.embed(TokenSequence{-1}));

  // Fresh sample, statistics recomputed here.
  const Array x = emb.embed_batch(sample_corpus(src, 100000 / 16, 16, rng));
  for (std::size_t c = 0; c < 32; ++c) {
    double m = 0.0;
    double sq = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x.at(r, c);
    m /= static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) sq += (x.at(r, c) - m) * (x.at(r, c) - m);
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(std::sqrt(sq / static_cast<double>(x.rows())) - 1.0) < 0.05);
  }
  const Array raw = emb.unnormalize(x);
  CHECK(testing::max_abs_diff(emb.normalize(raw), x) < 1e-12);
  CHECK(testing::max_abs_diff(emb.unnormalize(emb.normalize(raw)), raw) < 1e-12);

  const Array tab = emb.normalized_table();
  for (std::size_t a = 0; a < 16; ++a) {
    for (std::size_t b = a + 1; b < 16; ++b) {
      double d = 0.0;
      for (std::size_t c = 0; c < 32; ++c) d += std::abs(tab.at(a, c) - tab.at(b, c));
      CHECK(d > 0.0);
    }
  }
  const EmbeddingProvider restored(emb.table(), emb.mean(), emb.stddev());
  CHECK(restored.embed(s) == e);
}

TEST_CASE("seq2seq tasks") {
  CHECK(make_seq2seq_pair(TaskKind::copy, {3, 1, 4}).target == TokenSequence{3, 1, 4});
  CHECK(make_seq2seq_pair(TaskKind::reverse, {3, 1, 4}).target == TokenSequence{4, 1, 3});
  Rng rng(9);
  const auto pairs = make_seq2seq_task(TaskKind::reverse, 50, 6, 6, 12, 16, rng);
  std::vector<TokenSequence> preds;
  std::vector<TokenSequence> targets;
  for (const auto& p : pairs) {
    CHECK(p.condition.size() == 6);
    for (int id : p.condition) CHECK((id >= 1 && id < 16));
    preds.push_back(make_seq2seq_pair(TaskKind::reverse, p.condition).target);
    targets.push_back(p.target);
  }
  CHECK(exact_match_accuracy(preds, targets) == 1.0);
  CHECK_THROWS(make_seq2seq_task(TaskKind::copy, 5, 6, 6, 11, 16, rng));
  CHECK(parse_task_kind("reverse") == TaskKind::reverse);
  CHECK_THROWS(parse_task_kind("sort"));
}
