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

#include "doctest.h"
#include "elf/eval.hpp"
#include "helpers.hpp"

using namespace elf;

TEST_CASE("unigram entropy") {
  const std::vector<TokenSequence> same{{2, 2, 2}, {2, 2}};
  CHECK(unigram_entropy(same, 16) == 0.0);
  std::vector<TokenSequence> all(3);
  for (int i = 0; i < 16; ++i) {
    for (auto& s : all) s.push_back(i);
  }
  CHECK(unigram_entropy(all, 16) == doctest::Approx(std::log(16.0)).epsilon(1e-14));
  Rng rng(1);
  const auto seqs = sample_corpus(MarkovSource::uniform(16, 1), 100000 / 16, 16, rng);
  CHECK(std::abs(unigram_entropy(seqs, 16) - std::log(16.0)) < 0.02);
  CHECK_THROWS(unigram_entropy(std::vector<TokenSequence>{}, 16));
  CHECK_THROWS(unigram_entropy(std::vector<TokenSequence>{{16}}, 16));

  // Pooled and per-sample readings differ when samples are individually peaked.
  const std::vector<TokenSequence> peaked{{0, 0}, {1, 1}};
  CHECK(unigram_entropy(peaked, 4) == doctest::Approx(std::log(2.0)));
  CHECK(unigram_entropy_per_sample(peaked, 4) == 0.0);
}

TEST_CASE("distinct fraction") {
  const std::vector<TokenSequence> s{{1, 2}, {1, 2}, {2, 1}, {3, 3}};
  CHECK(distinct_fraction(s) == 0.75);
}

TEST_CASE("spearman correlation") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> up{10, 20, 25, 100};
  const std::vector<double> down{4, 3, 2, 1};
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
  const std::vector<double> flat{5, 5, 5, 5};
  CHECK(spearman(x, flat) == 0.0);
  // Ties take average ranks: ranks of y are (1.5, 1.5, 3, 4).
  const std::vector<double> tied{1, 1, 2, 3};
  const double expected = (-1.5 * -1.0 + -0.5 * -1.0 + 0.5 * 0.5 + 1.5 * 1.5) / std::sqrt(5.0 * 4.5);
  CHECK(spearman(x, tied) == doctest::Approx(expected));
  CHECK_THROWS(spearman(std::vector<double>{1}, std::vector<double>{1}));
}

TEST_CASE("metrics rows") {
  const RunConfig cfg = testing::tiny_config();
  const MarkovSource src = build_source(cfg);
  Rng rng(2);
  const auto seqs = sample_corpus(src, 50, 4, rng);
  SamplerConfig sc = cfg.sample;
  sc.gamma = 1.0;
  const MetricsRow row = evaluate_samples(src, seqs, cfg, sc);
  CHECK(row.gen_ppl >= 1.0);
  CHECK(row.entropy >= 0.0);
  CHECK(row.entropy <= std::log(6.0) + 1e-12);
  CHECK(row.sampler == "sde");
  CHECK(row.fingerprint == cfg.fingerprint());
  const MetricsRow again = evaluate_samples(src, seqs, cfg, sc);
  CHECK(row.csv_line() == again.csv_line());
  const std::vector<MetricsRow> rows{row};
  const std::string csv = rows_to_csv(rows);
  CHECK(csv.rfind(MetricsRow::csv_header() + "\n", 0) == 0);
  CHECK(frontier_plot_data(rows).find(' ') != std::string::npos);
  CHECK_THROWS(evaluate_samples(src, std::vector<TokenSequence>{}, cfg, sc));
}

TEST_CASE("sweep axes") {
  CHECK(parse_sweep_axis("omega") == SweepAxis::omega);
  CHECK(parse_sweep_axis("pred_target") == SweepAxis::pred_target);
  CHECK_THROWS(parse_sweep_axis("lr"));
  CHECK(is_training_axis(SweepAxis::bottleneck));
  CHECK_FALSE(is_training_axis(SweepAxis::gamma));
  RunConfig cfg = testing::tiny_config();
  apply_axis_value(cfg, SweepAxis::schedule, "uniform");
  CHECK(cfg.sample.schedule == ScheduleKind::uniform);
  apply_axis_value(cfg, SweepAxis::pred_target, "eps");
  CHECK(cfg.net.target == PredictionTarget::eps);
  CHECK_THROWS(apply_axis_value(cfg, SweepAxis::mode_prob, "1.5"));
}

TEST_CASE("sweeps emit one row per value and seed") {
  const RunConfig base = testing::tiny_config();
  int trained = 0;
  const ModelProvider provider = [&](const RunConfig& cfg) {
    ++trained;
    Trainer tr(cfg);
    tr.run(5);
    return Model::from_trainer(tr);
  };
  SweepSpec spec{SweepAxis::omega, {"0.5", "2"}, {0, 1}};
  const auto rows = run_sweep(spec, base, provider);
  CHECK(rows.size() == 4);
  CHECK(trained == 1);
  CHECK(rows[0].omega == 0.5);
  CHECK(rows[3].seed == 1);
  CHECK(rows[0].fingerprint != rows[2].fingerprint);
  spec = SweepSpec{SweepAxis::bottleneck, {"2", "4"}, {0}};
  trained = 0;
  const auto trows = run_sweep(spec, base, provider);
  CHECK(trained == 2);
  CHECK(rows_to_csv(trows) == rows_to_csv(run_sweep(spec, base, provider)));
}
