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

#include "elf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

namespace elf {

namespace {

double histogram_entropy(const std::vector<std::size_t>& counts, std::size_t total) {
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

void count_into(std::vector<std::size_t>& counts, const TokenSequence& s) {
  for (int id : s) {
    if (id < 0 || static_cast<std::size_t>(id) >= counts.size()) {
      throw std::invalid_argument("unigram_entropy: token id " + std::to_string(id) + " outside the vocabulary");
    }
    ++counts[static_cast<std::size_t>(id)];
  }
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double unigram_entropy(std::span<const TokenSequence> seqs, std::size_t vocab) {
  std::vector<std::size_t> counts(vocab);
  std::size_t total = 0;
  for (const auto& s : seqs) {
    count_into(counts, s);
    total += s.size();
  }
  if (total == 0) throw std::invalid_argument("unigram_entropy: no tokens");
  return histogram_entropy(counts, total);
}

double unigram_entropy_per_sample(std::span<const TokenSequence> seqs, std::size_t vocab) {
  if (seqs.empty()) throw std::invalid_argument("unigram_entropy: no sequences");
  double sum = 0.0;
  for (const auto& s : seqs) {
    if (s.empty()) throw std::invalid_argument("unigram_entropy: empty sequence");
    std::vector<std::size_t> counts(vocab);
    count_into(counts, s);
    sum += histogram_entropy(counts, s.size());
  }
  return sum / static_cast<double>(seqs.size());
}

double distinct_fraction(std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("distinct_fraction: no sequences");
  const std::set<TokenSequence> unique(seqs.begin(), seqs.end());
  return static_cast<double>(unique.size()) / static_cast<double>(seqs.size());
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples of size >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string MetricsRow::csv_header() {
  return "fingerprint,axis,value,steps,sampler,gamma,omega,gen_ppl,entropy,distinct,n,seed";
}

std::string MetricsRow::csv_line() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%llu", steps, sampler.c_str(), gamma, omega,
                gen_ppl, entropy, distinct, n, static_cast<unsigned long long>(seed));
  return fingerprint + "," + csv_escape(axis) + "," + csv_escape(value) + "," + buf;
}

MetricsRow evaluate_samples(const MarkovSource& source, std::span<const TokenSequence> seqs, const RunConfig& run,
                            const SamplerConfig& sampler) {
  if (seqs.empty()) throw std::invalid_argument("evaluate: no samples");
  MetricsRow row;
  row.fingerprint = run.fingerprint();
  row.steps = sampler.steps;
  row.sampler = sampler.gamma > 0.0 ? "sde" : "ode";
  row.gamma = sampler.gamma;
  row.omega = sampler.cfg;
  row.gen_ppl = oracle_perplexity(source, seqs);
  row.entropy = run.eval.per_sample_entropy ? unigram_entropy_per_sample(seqs, source.vocab_size())
                                            : unigram_entropy(seqs, source.vocab_size());
  row.distinct = distinct_fraction(seqs);
  row.n = seqs.size();
  row.seed = sampler.seed;
  return row;
}

std::vector<double> per_sample_nll(const MarkovSource& source, std::span<const TokenSequence> seqs) {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    const OracleScore score = oracle_score(source, std::span<const TokenSequence>(&s, 1));
    out.push_back(score.scored_tokens == 0 ? 0.0 : score.total_nll / static_cast<double>(score.scored_tokens));
  }
  return out;
}

std::vector<Seq2SeqPair> heldout_prompts(const RunConfig& config, std::size_t n, std::uint64_t seed) {
  const auto& c = config.corpus;
  if (c.task == CorpusTask::markov) throw std::invalid_argument("prompts: the markov task is unconditional");
  constexpr std::uint64_t kPromptStream = 0x70726f6d;
  Rng rng(seed, kPromptStream);
  const TaskKind kind = c.task == CorpusTask::copy ? TaskKind::copy : TaskKind::reverse;
  return make_seq2seq_task(kind, n, c.cond_len, c.seq_len, c.total_len, c.vocab, rng);
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "omega" || name == "cfg") return SweepAxis::omega;
  if (name == "steps") return SweepAxis::steps;
  if (name == "gamma") return SweepAxis::gamma;
  if (name == "bottleneck") return SweepAxis::bottleneck;
  if (name == "mode_prob") return SweepAxis::mode_prob;
  if (name == "pred_target") return SweepAxis::pred_target;
  if (name == "schedule") return SweepAxis::schedule;
  throw std::invalid_argument("unknown sweep axis '" + name +
                              "' (expected omega, steps, gamma, bottleneck, mode_prob, pred_target or schedule)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::omega: return "omega";
    case SweepAxis::steps: return "steps";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::bottleneck: return "bottleneck";
    case SweepAxis::mode_prob: return "mode_prob";
    case SweepAxis::pred_target: return "pred_target";
    case SweepAxis::schedule: return "schedule";
  }
  return "omega";
}

bool is_training_axis(SweepAxis axis) {
  return axis == SweepAxis::bottleneck || axis == SweepAxis::mode_prob || axis == SweepAxis::pred_target;
}

void apply_axis_value(RunConfig& config, SweepAxis axis, const std::string& value) {
  static const char* const kKeys[] = {"sample.cfg",          "sample.steps",    "sample.gamma",
                                      "net.d_bottleneck",    "train.mode_prob_denoise",
                                      "net.pred_target",     "sample.schedule"};
  config.set(kKeys[static_cast<int>(axis)], value);
  config.validate();
}

std::vector<MetricsRow> run_sweep(const SweepSpec& spec, const RunConfig& base, const ModelProvider& models) {
  if (spec.values.empty() || spec.seeds.empty()) throw std::invalid_argument("sweep: need at least one value and seed");
  if (base.corpus.task != CorpusTask::markov) throw std::invalid_argument("sweep: the oracle metrics need the markov task");
  const MarkovSource source = build_source(base);
  std::vector<MetricsRow> rows;
  std::optional<Model> shared;
  for (const auto& value : spec.values) {
    for (auto seed : spec.seeds) {
      RunConfig cfg = base;
      apply_axis_value(cfg, spec.axis, value);
      cfg.sample.seed = seed;
      if (is_training_axis(spec.axis)) cfg.train.seed = seed;
      Model model = [&] {
        if (is_training_axis(spec.axis)) return models(cfg);
        if (!shared) shared = models(base);
        return *shared;
      }();
      const GenerateResult gen = generate(model, cfg.sample);
      MetricsRow row = evaluate_samples(source, gen.tokens, cfg, cfg.sample);
      row.axis = to_string(spec.axis);
      row.value = value;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string rows_to_csv(std::span<const MetricsRow> rows) {
  std::string out = MetricsRow::csv_header() + "\n";
  for (const auto& r : rows) out += r.csv_line() + "\n";
  return out;
}

std::string frontier_plot_data(std::span<const MetricsRow> rows) {
  std::string out;
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", r.entropy, r.gen_ppl);
    out += buf;
  }
  return out;
}

}  // namespace elf
