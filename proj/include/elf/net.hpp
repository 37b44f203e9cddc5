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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elf/engine.hpp"
#include "elf/flow.hpp"

namespace elf {

enum class Mode { denoise, decode };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct NetConfig {
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  /// Length of the clean condition prefix; 0 for unconditional models.
  std::size_t cond_len = 0;
  std::size_t d_emb = 32;
  std::size_t d_bottleneck = 8;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_ratio = 4;
  std::size_t n_time = 4;
  std::size_t n_cfg = 4;
  std::size_t n_mode = 4;
  /// Learned absolute positions for target and condition rows.
  bool positions = true;
  /// W is the transposed normalized embedding table and is not trained.
  bool tie_unembed = false;
  PredictionTarget target = PredictionTarget::x;
  /// Noise scale used when converting v or eps outputs back to x.
  double noise_scale = 2.0;

  std::size_t n_control() const { return n_time + n_cfg + n_mode; }
  std::size_t total_len() const { return n_control() + cond_len + seq_len; }
  void validate() const;
};

/// Named arrays kept in a fixed declaration order.
class ParamSet {
 public:
  void add(std::string name, Array value);
  std::size_t size() const { return values_.size(); }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Array& operator[](std::size_t i) { return values_[i]; }
  const Array& operator[](std::size_t i) const { return values_[i]; }
  Array& operator[](std::string_view name) { return values_[index_of(name)]; }
  const Array& operator[](std::string_view name) const { return values_[index_of(name)]; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Array>& values() const { return values_; }
  std::vector<Array>& values() { return values_; }
  std::size_t scalar_count() const;

  bool all_finite() const;
  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
};

/// Parameters placed on a tape, one Var per ParamSet entry.
struct BoundParams {
  std::vector<Var> vars;
  Var operator[](std::size_t i) const { return vars[i]; }
};

/// Sinusoidal encoding of a continuous value into `dim` channels.
std::vector<double> sinusoidal_encoding(double value, std::size_t dim);

struct NetRequest {
  /// (batch * seq_len) x d_emb noisy state.
  Var z;
  /// Per-sequence time and self-conditioning guidance scale.
  std::span<const double> t;
  std::span<const double> omega;
  Mode mode = Mode::denoise;
  /// Previous clean estimate; absent means the zero (null) condition.
  std::optional<Var> self_cond;
  /// (batch * cond_len) x d_emb clean condition embeddings.
  std::optional<Var> condition;
};

/// Shared-weight denoise/decode transformer.
///
/// Input rows per sequence: [time x n_time, cfg x n_cfg, mode x n_mode,
/// condition x cond_len, target x seq_len]. Only target rows are returned.
class DenoiserNet {
 public:
  DenoiserNet(NetConfig config, Rng& init_rng, const Array* embedding_table = nullptr);
  DenoiserNet(NetConfig config, ParamSet params);

  const NetConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  /// True for entries updated by the optimizer.
  bool trainable(std::size_t index) const;

  BoundParams bind(Tape& tape, const ParamSet& values, bool trainable = true) const;

  /// Clean estimate x-hat for the target rows. In denoise mode the raw output
  /// is converted according to the configured prediction target.
  Var forward(const BoundParams& p, const NetRequest& request) const;
  /// Pre-unembedding states in decode mode, or the raw output in denoise mode.
  Var forward_raw(const BoundParams& p, const NetRequest& request) const;

  /// Projection of concat([z, stopgrad(prev)]) back to d_emb.
  Var self_condition(const BoundParams& p, Var z, std::optional<Var> prev) const;
  Var unembed(const BoundParams& p, Var x_hat) const;

  std::size_t batch_of(const Var& z) const;

 private:
  void build_index();
  Var control_rows(const BoundParams& p, std::size_t batch, std::span<const double> t, std::span<const double> omega,
                   Mode mode) const;

  NetConfig config_;
  ParamSet params_;
  std::vector<std::size_t> frozen_;
  struct Slots {
    std::size_t sc_w, sc_b, down_w, down_b, up_w, up_b, pos, cond_pos, ctrl_time, ctrl_cfg, ctrl_mode;
    struct Block {
      std::size_t ln1_g, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks;
    std::size_t lnf_g, lnf_b, head_w, head_b, unembed_w, unembed_b;
  } slots_{};
};

/// Lowest id wins ties.
std::vector<int> argmax_rows(const Array& logits);

}  // namespace elf
