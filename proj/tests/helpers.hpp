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

#include <cmath>

#include "elf/config.hpp"
#include "elf/engine.hpp"

namespace elf::testing {

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Tiny but complete run: every module path is exercised in milliseconds.
inline RunConfig tiny_config() {
  RunConfig c;
  c.corpus.vocab = 6;
  c.corpus.seq_len = 4;
  c.corpus.total_len = 8;
  c.corpus.n_train = 64;
  c.corpus.norm_tokens = 512;
  c.corpus.d_emb = 8;
  c.net.d_bottleneck = 4;
  c.net.d_model = 16;
  c.net.heads = 2;
  c.net.layers = 2;
  c.net.mlp_ratio = 2;
  c.net.n_time = 2;
  c.net.n_cfg = 2;
  c.net.n_mode = 2;
  c.train.batch_size = 3;
  c.train.steps = 20;
  c.sample.steps = 4;
  c.sample.n = 5;
  c.sample.chunk = 2;
  c.validate();
  return c;
}

inline RunConfig tiny_copy_config() {
  RunConfig c = tiny_config();
  c.corpus.task = CorpusTask::copy;
  c.corpus.cond_len = 4;
  c.validate();
  return c;
}

}  // namespace elf::testing
