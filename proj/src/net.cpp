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

#include "elf/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace elf {

namespace {

constexpr double kTimeEncodingScale = 1000.0;
constexpr double kCfgEncodingScale = 200.0;
constexpr double kTableInitStd = 0.5;

Array normal_array(Rng& rng, Shape shape, double stddev) {
  Array a = gaussian(rng, shape);
  for (auto& v : a.storage()) v *= stddev;
  return a;
}

Var linear(const BoundParams& p, Var x, std::size_t w, std::size_t b) {
  return ops::add_row(ops::matmul(x, p[w]), p[b]);
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "denoise") return Mode::denoise;
  if (name == "decode") return Mode::decode;
  throw std::invalid_argument("invalid mode '" + name + "' (expected denoise or decode)");
}

std::string to_string(Mode mode) { return mode == Mode::denoise ? "denoise" : "decode"; }

void NetConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("net: ") + name + " must be positive");
  };
  positive(vocab, "vocab");
  positive(seq_len, "seq_len");
  positive(d_emb, "d_emb");
  positive(d_bottleneck, "d_bottleneck");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(layers, "layers");
  positive(mlp_ratio, "mlp_ratio");
  positive(n_time, "n_time");
  positive(n_cfg, "n_cfg");
  positive(n_mode, "n_mode");
  if (d_model % heads != 0) throw std::invalid_argument("net: d_model must be divisible by heads");
  if (!(noise_scale > 0.0)) throw std::invalid_argument("net: noise_scale must be positive");
}

// ---------------------------------------------------------------- ParamSet

void ParamSet::add(std::string name, Array value) {
  if (contains(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw std::out_of_range("ParamSet: no entry named " + std::string(name));
}

bool ParamSet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ParamSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const Array& a) { return a.all_finite(); });
}

std::vector<double> sinusoidal_encoding(double value, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(value * freq);
    out[half + k] = std::cos(value * freq);
  }
  return out;
}

// ---------------------------------------------------------------- DenoiserNet

DenoiserNet::DenoiserNet(NetConfig config, Rng& rng, const Array* embedding_table) : config_(config) {
  config_.validate();
  const std::size_t de = config_.d_emb;
  const std::size_t db = config_.d_bottleneck;
  const std::size_t dm = config_.d_model;
  const std::size_t dff = dm * config_.mlp_ratio;
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.layers));
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  // z passes through unchanged at init; the self-condition half starts small.
  Array sc = normal_array(rng, {2 * de, de}, 0.1 * fan_in(2 * de));
  for (std::size_t i = 0; i < de; ++i) sc.at(i, i) += 1.0;
  params_.add("self_cond.w", std::move(sc));
  params_.add("self_cond.b", Array({de}));
  params_.add("down.w", normal_array(rng, {de, db}, fan_in(de)));
  params_.add("down.b", Array({db}));
  params_.add("up.w", normal_array(rng, {db, dm}, fan_in(db)));
  params_.add("up.b", Array({dm}));
  params_.add("pos", normal_array(rng, {config_.seq_len, dm}, kTableInitStd));
  if (config_.cond_len > 0) params_.add("cond_pos", normal_array(rng, {config_.cond_len, dm}, kTableInitStd));
  params_.add("control.time", normal_array(rng, {config_.n_time, dm}, kTableInitStd));
  params_.add("control.cfg", normal_array(rng, {config_.n_cfg, dm}, kTableInitStd));
  params_.add("control.mode", normal_array(rng, {2 * config_.n_mode, dm}, kTableInitStd));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    params_.add(p + "ln1.g", Array({dm}, 1.0));
    params_.add(p + "ln1.b", Array({dm}));
    for (const char* m : {"q", "k", "v"}) {
      params_.add(p + m + ".w", normal_array(rng, {dm, dm}, fan_in(dm)));
      params_.add(p + m + ".b", Array({dm}));
    }
    params_.add(p + "o.w", normal_array(rng, {dm, dm}, fan_in(dm) * residual_scale));
    params_.add(p + "o.b", Array({dm}));
    params_.add(p + "ln2.g", Array({dm}, 1.0));
    params_.add(p + "ln2.b", Array({dm}));
    params_.add(p + "fc1.w", normal_array(rng, {dm, dff}, fan_in(dm)));
    params_.add(p + "fc1.b", Array({dff}));
    params_.add(p + "fc2.w", normal_array(rng, {dff, dm}, fan_in(dff) * residual_scale));
    params_.add(p + "fc2.b", Array({dm}));
  }
  params_.add("final_ln.g", Array({dm}, 1.0));
  params_.add("final_ln.b", Array({dm}));
  params_.add("head.w", normal_array(rng, {dm, de}, fan_in(dm)));
  params_.add("head.b", Array({de}));
  if (config_.tie_unembed) {
    if (embedding_table == nullptr || embedding_table->rows() != config_.vocab || embedding_table->cols() != de) {
      throw std::invalid_argument("net: tied unembedding needs the |V| x d_emb embedding table");
    }
    Array w({de, config_.vocab});
    for (std::size_t v = 0; v < config_.vocab; ++v) {
      for (std::size_t c = 0; c < de; ++c) w.at(c, v) = embedding_table->at(v, c);
    }
    params_.add("unembed.w", std::move(w));
  } else {
    params_.add("unembed.w", normal_array(rng, {de, config_.vocab}, fan_in(de)));
  }
  params_.add("unembed.b", Array({config_.vocab}));
  build_index();
}

DenoiserNet::DenoiserNet(NetConfig config, ParamSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
  Rng scratch(0);
  NetConfig untied = config_;
  untied.tie_unembed = false;
  const DenoiserNet reference(untied, scratch, nullptr);
  if (reference.params_.names() != params_.names()) {
    throw std::invalid_argument("net: parameter names do not match the architecture");
  }
  for (std::size_t i = 0; i < params_.size() && i < reference.params_.size(); ++i) {
    if (params_[i].shape() != reference.params_[i].shape()) {
      throw ShapeError("net: parameter " + params_.names()[i] + " has shape " + shape_string(params_[i].shape()) +
                       ", expected " + shape_string(reference.params_[i].shape()));
    }
  }
  if (!params_.all_finite()) throw std::domain_error("net: non-finite parameter values");
  build_index();
}

void DenoiserNet::build_index() {
  auto at = [&](const std::string& n) { return params_.index_of(n); };
  slots_.sc_w = at("self_cond.w");
  slots_.sc_b = at("self_cond.b");
  slots_.down_w = at("down.w");
  slots_.down_b = at("down.b");
  slots_.up_w = at("up.w");
  slots_.up_b = at("up.b");
  slots_.pos = at("pos");
  slots_.cond_pos = config_.cond_len > 0 ? at("cond_pos") : 0;
  slots_.ctrl_time = at("control.time");
  slots_.ctrl_cfg = at("control.cfg");
  slots_.ctrl_mode = at("control.mode");
  slots_.blocks.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    slots_.blocks.push_back({at(p + "ln1.g"), at(p + "ln1.b"), at(p + "q.w"), at(p + "q.b"), at(p + "k.w"), at(p + "k.b"),
                             at(p + "v.w"), at(p + "v.b"), at(p + "o.w"), at(p + "o.b"), at(p + "ln2.g"), at(p + "ln2.b"),
                             at(p + "fc1.w"), at(p + "fc1.b"), at(p + "fc2.w"), at(p + "fc2.b")});
  }
  slots_.lnf_g = at("final_ln.g");
  slots_.lnf_b = at("final_ln.b");
  slots_.head_w = at("head.w");
  slots_.head_b = at("head.b");
  slots_.unembed_w = at("unembed.w");
  slots_.unembed_b = at("unembed.b");
  frozen_.clear();
  if (config_.tie_unembed) frozen_.push_back(slots_.unembed_w);
}

bool DenoiserNet::trainable(std::size_t index) const {
  return std::find(frozen_.begin(), frozen_.end(), index) == frozen_.end();
}

BoundParams DenoiserNet::bind(Tape& tape, const ParamSet& values, bool trainable_leaves) const {
  if (values.size() != params_.size()) throw std::invalid_argument("bind: parameter set does not match the network");
  BoundParams out;
  out.vars.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.vars.push_back(trainable_leaves && trainable(i) ? tape.parameter(values[i]) : tape.constant(values[i]));
  }
  return out;
}

std::size_t DenoiserNet::batch_of(const Var& z) const {
  const Array& zv = z.value();
  if (zv.rank() != 2 || zv.cols() != config_.d_emb || zv.rows() % config_.seq_len != 0 || zv.rows() == 0) {
    throw ShapeError("net: state of shape " + shape_string(zv.shape()) + " does not hold whole sequences of length " +
                     std::to_string(config_.seq_len) + " x " + std::to_string(config_.d_emb));
  }
  return zv.rows() / config_.seq_len;
}

Var DenoiserNet::self_condition(const BoundParams& p, Var z, std::optional<Var> prev) const {
  Var other = prev ? ops::detach(*prev) : z.tape->constant(Array::zeros_like(z.value()));
  if (!other.value().same_shape(z.value())) {
    throw ShapeError("self_condition: shape mismatch " + shape_string(z.shape()) + " vs " + shape_string(other.shape()));
  }
  return linear(p, ops::concat_cols(z, other), slots_.sc_w, slots_.sc_b);
}

Var DenoiserNet::control_rows(const BoundParams& p, std::size_t batch, std::span<const double> t,
                              std::span<const double> omega, Mode mode) const {
  const std::size_t nt = config_.n_time;
  const std::size_t nc = config_.n_cfg;
  const std::size_t nm = config_.n_mode;
  const std::size_t dm = config_.d_model;
  const std::size_t per_seq = config_.n_control();
  std::vector<Var> tables{p[slots_.ctrl_time], p[slots_.ctrl_cfg], p[slots_.ctrl_mode]};
  Var table = ops::concat_rows(tables);
  std::vector<std::size_t> idx;
  idx.reserve(batch * per_seq);
  Array enc(Shape{batch * per_seq, dm});
  const std::size_t mode_offset = nt + nc + (mode == Mode::decode ? nm : 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto te = sinusoidal_encoding(t[b] * kTimeEncodingScale, dm);
    const auto we = sinusoidal_encoding(omega[b] * kCfgEncodingScale, dm);
    for (std::size_t i = 0; i < nt; ++i) {
      idx.push_back(i);
      std::copy(te.begin(), te.end(), enc.data() + (b * per_seq + i) * dm);
    }
    for (std::size_t i = 0; i < nc; ++i) {
      idx.push_back(nt + i);
      std::copy(we.begin(), we.end(), enc.data() + (b * per_seq + nt + i) * dm);
    }
    for (std::size_t i = 0; i < nm; ++i) idx.push_back(mode_offset + i);
  }
  return ops::add(ops::gather_rows(table, idx), p[slots_.ctrl_time].tape->constant(std::move(enc)));
}

Var DenoiserNet::forward_raw(const BoundParams& p, const NetRequest& req) const {
  const std::size_t batch = batch_of(req.z);
  const std::size_t L = config_.seq_len;
  const std::size_t Lc = config_.cond_len;
  const std::size_t nc = config_.n_control();
  const std::size_t T = config_.total_len();
  if (req.t.size() != batch || req.omega.size() != batch) {
    throw std::invalid_argument("net: need one time and one guidance scale per sequence");
  }
  if (req.mode == Mode::decode && req.self_cond) {
    throw std::invalid_argument("net: decode mode always uses the zero self-condition");
  }
  if (req.condition && Lc == 0) throw std::invalid_argument("net: condition given to an unconditional model");
  Tape& tape = *req.z.tape;

  Var zin = self_condition(p, req.z, req.mode == Mode::denoise ? req.self_cond : std::nullopt);
  auto project = [&](Var x) {
    return linear(p, linear(p, x, slots_.down_w, slots_.down_b), slots_.up_w, slots_.up_b);
  };
  Var target = project(zin);
  if (config_.positions) {
    std::vector<std::size_t> pos_idx(batch * L);
    for (std::size_t r = 0; r < pos_idx.size(); ++r) pos_idx[r] = r % L;
    target = ops::add(target, ops::gather_rows(p[slots_.pos], pos_idx));
  }

  std::vector<Var> parts{control_rows(p, batch, req.t, req.omega, req.mode)};
  if (Lc > 0) {
    Var cond = req.condition ? *req.condition : tape.constant(Array(Shape{batch * Lc, config_.d_emb}));
    if (cond.value().rows() != batch * Lc || cond.value().cols() != config_.d_emb) {
      throw ShapeError("net: condition of shape " + shape_string(cond.shape()) + " does not match batch " +
                       std::to_string(batch) + " x " + std::to_string(Lc));
    }
    Var c = project(cond);
    if (config_.positions) {
      std::vector<std::size_t> cidx(batch * Lc);
      for (std::size_t r = 0; r < cidx.size(); ++r) cidx[r] = r % Lc;
      c = ops::add(c, ops::gather_rows(p[slots_.cond_pos], cidx));
    }
    parts.push_back(c);
  }
  parts.push_back(target);

  std::vector<std::size_t> assemble(batch * T);
  std::vector<std::size_t> pick(batch * L);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < T; ++j) {
      std::size_t src = 0;
      if (j < nc) {
        src = b * nc + j;
      } else if (j < nc + Lc) {
        src = batch * nc + b * Lc + (j - nc);
      } else {
        src = batch * (nc + Lc) + b * L + (j - nc - Lc);
      }
      assemble[b * T + j] = src;
    }
    for (std::size_t i = 0; i < L; ++i) pick[b * L + i] = b * T + nc + Lc + i;
  }
  Var h = ops::gather_rows(ops::concat_rows(parts), assemble);

  const ops::AttentionLayout layout{batch, T, config_.heads};
  for (const auto& blk : slots_.blocks) {
    Var n1 = ops::layer_norm(h, p[blk.ln1_g], p[blk.ln1_b]);
    Var q = linear(p, n1, blk.q_w, blk.q_b);
    Var k = linear(p, n1, blk.k_w, blk.k_b);
    Var v = linear(p, n1, blk.v_w, blk.v_b);
    h = ops::add(h, linear(p, ops::attention(q, k, v, layout), blk.o_w, blk.o_b));
    Var n2 = ops::layer_norm(h, p[blk.ln2_g], p[blk.ln2_b]);
    h = ops::add(h, linear(p, ops::gelu(linear(p, n2, blk.fc1_w, blk.fc1_b)), blk.fc2_w, blk.fc2_b));
  }
  Var out = ops::layer_norm(ops::gather_rows(h, pick), p[slots_.lnf_g], p[slots_.lnf_b]);
  return linear(p, out, slots_.head_w, slots_.head_b);
}

Var DenoiserNet::forward(const BoundParams& p, const NetRequest& req) const {
  Var raw = forward_raw(p, req);
  if (req.mode == Mode::decode || config_.target == PredictionTarget::x) return raw;
  std::vector<double> row_t(raw.value().rows());
  for (std::size_t r = 0; r < row_t.size(); ++r) row_t[r] = req.t[r / config_.seq_len];
  return raw_to_x(raw, req.z.value(), row_t, config_.target, config_.noise_scale);
}

Var DenoiserNet::unembed(const BoundParams& p, Var x_hat) const {
  return linear(p, x_hat, slots_.unembed_w, slots_.unembed_b);
}

std::vector<int> argmax_rows(const Array& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.data() + r * v;
    out[r] = static_cast<int>(std::max_element(row, row + v) - row);
  }
  return out;
}

}  // namespace elf
