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

#include "elf/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "elf/flow.hpp"

namespace elf {

namespace {

// Stream ids for the counter-based generator.
constexpr std::uint64_t kTransitionStream = 1;
constexpr std::uint64_t kCorpusStream = 2;
constexpr std::uint64_t kNormStream = 3;
constexpr std::uint64_t kTableStream = 4;
constexpr std::uint64_t kInitStream = 5;
constexpr std::uint64_t kStepStream = 6;

Array select_sequences(const Array& a, std::span<const std::size_t> seqs, std::size_t rows_per_seq) {
  const std::size_t d = a.cols();
  Array out(Shape{seqs.size() * rows_per_seq, d});
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::copy_n(a.data() + seqs[i] * rows_per_seq * d, rows_per_seq * d, out.data() + i * rows_per_seq * d);
  }
  return out;
}

std::vector<double> select(std::span<const double> v, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

std::vector<double> expand_rows(std::span<const double> per_seq, std::size_t rows_per_seq) {
  std::vector<double> out(per_seq.size() * rows_per_seq);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = per_seq[r / rows_per_seq];
  return out;
}

StepResult finish(const DenoiserNet& net, Tape& tape, const BoundParams& p, Var loss) {
  StepResult out;
  out.loss = loss.value().item();
  Gradients g = tape.backward(loss);
  out.grads.reserve(p.vars.size());
  for (std::size_t i = 0; i < p.vars.size(); ++i) {
    if (net.trainable(i) && g.contains(p[i])) {
      out.grads.push_back(g[p[i]]);
    } else {
      out.grads.push_back(Array::zeros_like(p[i].value()));
    }
  }
  return out;
}

double global_norm(const std::vector<Array>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) s += v * v;
  }
  return std::sqrt(s);
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params.names()[i], Array::zeros_like(params[i]));
  return out;
}

DenoiserNet init_net(const RunConfig& config, const TrainingData& data) {
  Rng rng(config.train.seed, kInitStream);
  const Array table = data.provider.normalized_table();
  return DenoiserNet(config.net_config(), rng, &table);
}

}  // namespace

// ------------------------------------------------------------------ data

MarkovSource build_source(const RunConfig& config) {
  Rng rng(config.corpus.seed, kTransitionStream);
  return MarkovSource::dirichlet(config.corpus.vocab, config.corpus.order, config.corpus.alpha, rng);
}

namespace {

TrainingData build_sequences(const RunConfig& config, EmbeddingProvider provider) {
  const auto& c = config.corpus;
  TrainingData data{std::nullopt, std::move(provider), {}, {}};
  Rng rng(c.seed, kCorpusStream);
  if (c.task == CorpusTask::markov) {
    data.source = build_source(config);
    data.targets = sample_corpus(*data.source, c.n_train, c.seq_len, rng);
  } else {
    const TaskKind kind = c.task == CorpusTask::copy ? TaskKind::copy : TaskKind::reverse;
    auto pairs = make_seq2seq_task(kind, c.n_train, c.cond_len, c.seq_len, c.total_len, c.vocab, rng);
    for (auto& pair : pairs) {
      data.conditions.push_back(std::move(pair.condition));
      data.targets.push_back(std::move(pair.target));
    }
  }
  return data;
}

}  // namespace

TrainingData build_training_data(const RunConfig& config) {
  const auto& c = config.corpus;
  Rng table_rng(c.seed, kTableStream);
  EmbeddingProvider provider(c.vocab, c.d_emb, table_rng);
  TrainingData data = build_sequences(config, provider);
  const std::size_t n_norm = (c.norm_tokens + c.seq_len - 1) / c.seq_len;
  if (data.source) {
    Rng rng(c.seed, kNormStream);
    data.provider.fit_normalization(sample_corpus(*data.source, n_norm, c.seq_len, rng));
  } else {
    const std::size_t n = std::min(n_norm, data.targets.size());
    data.provider.fit_normalization(std::span<const TokenSequence>(data.targets.data(), n));
  }
  return data;
}

TrainingData build_training_data(const RunConfig& config, EmbeddingProvider provider) {
  if (provider.vocab_size() != config.corpus.vocab || provider.dim() != config.corpus.d_emb) {
    throw std::invalid_argument("training data: stored embedding table does not match the corpus config");
  }
  return build_sequences(config, std::move(provider));
}

Batch make_batch(const TrainingData& data, std::span<const std::size_t> indices, const std::vector<bool>& drop) {
  Batch batch;
  batch.targets.reserve(indices.size());
  for (auto i : indices) batch.targets.push_back(data.targets.at(i));
  batch.x = data.provider.embed_batch(batch.targets);
  if (!data.conditions.empty()) {
    std::vector<TokenSequence> conds;
    for (auto i : indices) conds.push_back(data.conditions.at(i));
    Array c = data.provider.embed_batch(conds);
    const std::size_t per = c.size() / indices.size();
    for (std::size_t b = 0; b < drop.size() && b < indices.size(); ++b) {
      if (drop[b]) std::fill_n(c.data() + b * per, per, 0.0);
    }
    batch.condition = std::move(c);
  }
  return batch;
}

std::vector<bool> draw_condition_dropout(std::size_t n, double p, Rng& rng) {
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rng.uniform() < p;
  return out;
}

double sample_cfg_scale(double lo, double hi, double power, Rng& rng) {
  if (!(lo <= hi) || !(power > 0.0)) throw std::invalid_argument("sample_cfg_scale: need lo <= hi and power > 0");
  const double u = rng.uniform();
  return lo + (hi - lo) * std::pow(u, power);
}

DenoiseDraws draw_denoise(const RunConfig& config, std::size_t batch, Rng& rng) {
  const auto& tr = config.train;
  DenoiseDraws d;
  for (std::size_t b = 0; b < batch; ++b) {
    d.t.push_back(sample_time(config.flow.denoise, rng));
    d.omega.push_back(sample_cfg_scale(tr.cfg_min, tr.cfg_max, tr.cfg_power, rng));
    d.self_cond.push_back(rng.uniform() < tr.self_cond_prob);
  }
  d.eps = gaussian(rng, Shape{batch * config.corpus.seq_len, config.corpus.d_emb});
  return d;
}

DecodeDraws draw_decode(const RunConfig& config, std::size_t batch, Rng& rng) {
  const auto& tr = config.train;
  DecodeDraws d;
  d.p = sample_decode_corruption(config.flow.decode, rng, batch * config.corpus.seq_len);
  for (std::size_t b = 0; b < batch; ++b) d.omega.push_back(sample_cfg_scale(tr.cfg_min, tr.cfg_max, tr.cfg_power, rng));
  d.eps = gaussian(rng, Shape{batch * config.corpus.seq_len, config.corpus.d_emb});
  return d;
}

// ------------------------------------------------------------------ losses

Var denoise_loss(const DenoiserNet& net, const BoundParams& p, const Batch& batch, const RunConfig& config,
                 const DenoiseDraws& draws) {
  const std::size_t B = batch.targets.size();
  const std::size_t L = config.corpus.seq_len;
  const std::size_t Lc = config.corpus.cond_len;
  if (draws.t.size() != B || draws.omega.size() != B || draws.self_cond.size() != B) {
    throw std::invalid_argument("denoise_loss: draws do not match the batch");
  }
  Tape& tape = *p[0].tape;
  const double sigma = config.flow.noise_scale;
  const Array z = interpolate_rows(batch.x, draws.eps, expand_rows(draws.t, L), sigma);
  const Array v = velocity_target(batch.x, draws.eps, config.flow.noise_in_velocity ? sigma : 1.0);

  std::vector<std::size_t> plain;
  std::vector<std::size_t> sc;
  for (std::size_t b = 0; b < B; ++b) (draws.self_cond[b] ? sc : plain).push_back(b);

  struct Subset {
    Array z;
    std::vector<double> t;
    std::vector<double> omega;
    std::optional<Var> condition;
    std::vector<double> inv;
  };
  auto subset = [&](std::span<const std::size_t> idx) {
    Subset s{select_sequences(z, idx, L), select(draws.t, idx), select(draws.omega, idx), std::nullopt, {}};
    if (batch.condition) s.condition = tape.constant(select_sequences(*batch.condition, idx, Lc));
    s.inv.resize(idx.size() * L);
    for (std::size_t r = 0; r < s.inv.size(); ++r) s.inv[r] = 1.0 / (1.0 - s.t[r / L]);
    return s;
  };
  auto predict = [&](const Subset& s, std::optional<Var> self_cond) {
    Var zv = tape.constant(s.z);
    Var x_hat = net.forward(p, NetRequest{zv, s.t, s.omega, Mode::denoise, self_cond, s.condition});
    return std::make_pair(x_hat, ops::row_scale(ops::sub(x_hat, zv), s.inv));
  };

  const double total = static_cast<double>(B);
  std::optional<Var> loss;
  if (!plain.empty()) {
    const Subset s = subset(plain);
    Var v_pred = predict(s, std::nullopt).second;
    loss = ops::scale(ops::mse(v_pred, select_sequences(v, plain, L)), static_cast<double>(plain.size()) / total);
  }
  if (!sc.empty()) {
    const Subset s = subset(sc);
    Array x_first;
    Array v_first;
    {
      NoGradGuard guard(tape);
      auto [x_hat, v_hat] = predict(s, std::nullopt);
      x_first = x_hat.value();
      v_first = v_hat.value();
    }
    Var v_sc = predict(s, tape.constant(x_first)).second;
    const Array target = cfg_target_rows(select_sequences(v, sc, L), v_sc.value(), v_first, s.omega, L);
    Var part = ops::scale(ops::mse(v_sc, target), static_cast<double>(sc.size()) / total);
    loss = loss ? ops::add(*loss, part) : part;
  }
  return *loss;
}

Var decode_loss(const DenoiserNet& net, const BoundParams& p, const Batch& batch, const RunConfig& config,
                const DecodeDraws& draws) {
  const std::size_t B = batch.targets.size();
  if (draws.omega.size() != B || draws.p.size() != batch.x.rows()) {
    throw std::invalid_argument("decode_loss: draws do not match the batch");
  }
  Tape& tape = *p[0].tape;
  Var z = tape.constant(interpolate_rows(batch.x, draws.eps, draws.p, config.flow.decode_noise_scale));
  const std::vector<double> ones(B, 1.0);
  std::optional<Var> cond;
  if (batch.condition) cond = tape.constant(*batch.condition);
  Var h = net.forward(p, NetRequest{z, ones, draws.omega, Mode::decode, std::nullopt, cond});
  std::vector<int> tokens;
  tokens.reserve(batch.x.rows());
  for (const auto& s : batch.targets) tokens.insert(tokens.end(), s.begin(), s.end());
  return ops::cross_entropy(net.unembed(p, h), tokens);
}

StepResult train_step_denoise(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                              const RunConfig& config, const DenoiseDraws& draws) {
  Tape tape;
  const BoundParams p = net.bind(tape, params);
  return finish(net, tape, p, denoise_loss(net, p, batch, config, draws));
}

StepResult train_step_denoise(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                              const RunConfig& config, Rng& rng) {
  return train_step_denoise(net, params, batch, config, draw_denoise(config, batch.targets.size(), rng));
}

StepResult train_step_decode(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                             const RunConfig& config, const DecodeDraws& draws) {
  Tape tape;
  const BoundParams p = net.bind(tape, params);
  return finish(net, tape, p, decode_loss(net, p, batch, config, draws));
}

StepResult train_step_decode(const DenoiserNet& net, const ParamSet& params, const Batch& batch,
                             const RunConfig& config, Rng& rng) {
  return train_step_decode(net, params, batch, config, draw_decode(config, batch.targets.size(), rng));
}

// ------------------------------------------------------------------ metrics

std::string metrics_header() { return "step,branch,loss,lr,grad_norm"; }

std::string metrics_line(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%s,%.17g,%.17g,%.17g", static_cast<unsigned long long>(r.step),
                to_string(r.branch).c_str(), r.loss, r.lr, r.grad_norm);
  return buf;
}

// ------------------------------------------------------------------ trainer

Trainer::Trainer(RunConfig config, std::string echo)
    : config_(std::move(config)),
      echo_(echo.empty() ? config_.to_text() : std::move(echo)),
      data_((config_.validate(), build_training_data(config_))),
      net_(init_net(config_, data_)),
      ema_(net_.params()),
      adam_m_(zeros_like(net_.params())),
      adam_v_(zeros_like(net_.params())) {}

Trainer::Trainer(const Checkpoint& ck)
    : config_(ck.config()),
      echo_(ck.config_echo),
      data_(build_training_data(config_, ck.provider())),
      net_(config_.net_config(), ck.params),
      ema_(ck.ema),
      adam_m_(ck.adam_m),
      adam_v_(ck.adam_v),
      counters_(ck.counters) {
  if (ck.corpus_spec != config_.corpus_spec()) throw CheckpointError("checkpoint: corpus spec does not match its config");
  if (ema_.names() != net_.params().names() || adam_m_.names() != net_.params().names() ||
      adam_v_.names() != net_.params().names()) {
    throw CheckpointError("checkpoint: EMA or optimizer state does not match the parameters");
  }
}

double Trainer::learning_rate(std::uint64_t step) const {
  const auto& tr = config_.train;
  const auto warm = static_cast<std::uint64_t>(std::ceil(tr.warmup_frac * static_cast<double>(tr.steps)));
  if (warm > 0 && step < warm) return tr.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  return tr.lr;
}

StepRecord Trainer::step() {
  const auto& tr = config_.train;
  Rng rng = Rng(tr.seed, kStepStream).split(counters_.step);
  StepRecord rec;
  rec.step = counters_.step;
  rec.branch = rng.uniform() < tr.mode_prob_denoise ? Mode::denoise : Mode::decode;

  std::vector<std::size_t> idx(tr.batch_size);
  for (auto& i : idx) i = rng.below(data_.targets.size());
  std::vector<bool> drop;
  if (!data_.conditions.empty()) {
    drop = draw_condition_dropout(idx.size(), tr.condition_dropout, rng);
    counters_.condition_draws += drop.size();
    counters_.condition_dropped += static_cast<std::uint64_t>(std::count(drop.begin(), drop.end(), true));
  }
  const Batch batch = make_batch(data_, idx, drop);
  StepResult result;
  std::string engine_error;
  try {
    result = rec.branch == Mode::denoise ? train_step_denoise(net_, net_.params(), batch, config_, rng)
                                         : train_step_decode(net_, net_.params(), batch, config_, rng);
  } catch (const std::domain_error& e) {
    // Debug builds trap non-finite values inside the engine.
    engine_error = e.what();
    result.loss = std::nan("");
  }
  rec.loss = result.loss;
  rec.grad_norm = engine_error.empty() ? global_norm(result.grads) : std::nan("");
  rec.lr = learning_rate(rec.step);
  if (!std::isfinite(rec.loss) || !std::isfinite(rec.grad_norm)) {
    std::ostringstream diag;
    diag << "step=" << rec.step << "\nbranch=" << to_string(rec.branch) << "\nloss=" << format_double(rec.loss)
         << "\ngrad_norm=" << format_double(rec.grad_norm) << "\nparams_finite=" << net_.params().all_finite()
         << "\nconfig_fingerprint=" << config_.fingerprint() << "\n";
    if (!engine_error.empty()) diag << "engine_error=" << engine_error << "\n";
    for (std::size_t i = 0; i < result.grads.size(); ++i) {
      if (!result.grads[i].all_finite()) diag << "nonfinite_grad=" << net_.params().names()[i] << "\n";
    }
    throw NumericError("training diverged at step " + std::to_string(rec.step) + " (" + to_string(rec.branch) +
                           " loss " + format_double(rec.loss) + ")",
                       diag.str());
  }
  apply_update(result, rec.lr);
  ++counters_.step;
  ++(rec.branch == Mode::denoise ? counters_.denoise_steps : counters_.decode_steps);
  return rec;
}

void Trainer::apply_update(const StepResult& result, double lr) {
  const auto& tr = config_.train;
  const double norm = global_norm(result.grads);
  const double clip = tr.grad_clip > 0.0 && norm > tr.grad_clip ? tr.grad_clip / norm : 1.0;
  ++counters_.adam_t;
  const double t = static_cast<double>(counters_.adam_t);
  const double c1 = 1.0 - std::pow(tr.beta1, t);
  const double c2 = 1.0 - std::pow(tr.beta2, t);
  // EMA decay ramps up so that early averages are not dominated by the init.
  const double n = static_cast<double>(counters_.step);
  const double decay = std::min(tr.ema_decay, (1.0 + n) / (10.0 + n));
  ParamSet& params = net_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (net_.trainable(i)) {
      double* w = params[i].data();
      double* m = adam_m_[i].data();
      double* v = adam_v_[i].data();
      const double* g = result.grads[i].data();
      for (std::size_t k = 0; k < params[i].size(); ++k) {
        const double gk = g[k] * clip;
        m[k] = tr.beta1 * m[k] + (1.0 - tr.beta1) * gk;
        v[k] = tr.beta2 * v[k] + (1.0 - tr.beta2) * gk * gk;
        const double step = (m[k] / c1) / (std::sqrt(v[k] / c2) + tr.adam_eps);
        w[k] -= lr * (step + tr.weight_decay * w[k]);
      }
    }
    double* e = ema_[i].data();
    const double* w = params[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) e[k] = decay * e[k] + (1.0 - decay) * w[k];
  }
}

void Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  while (counters_.step < config_.train.steps) {
    const StepRecord rec = step();
    if (on_step) on_step(rec);
  }
}

void Trainer::run(std::size_t steps, const std::function<void(const StepRecord&)>& on_step) {
  for (std::size_t i = 0; i < steps; ++i) {
    const StepRecord rec = step();
    if (on_step) on_step(rec);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config_echo = echo_;
  ck.corpus_spec = config_.corpus_spec();
  ck.counters = counters_;
  ck.emb_table = data_.provider.table();
  ck.emb_mean = data_.provider.mean();
  ck.emb_std = data_.provider.stddev();
  ck.params = net_.params();
  ck.ema = ema_;
  ck.adam_m = adam_m_;
  ck.adam_v = adam_v_;
  return ck;
}

// ------------------------------------------------------------------ checkpoint

namespace {

class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void bytes(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void array(const std::string& name, const Array& a) {
    bytes(name);
    u64(a.rank());
    for (auto d : a.shape()) u64(d);
    for (double v : a.values()) u64(std::bit_cast<std::uint64_t>(v));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes() { return raw(u64()); }
  std::pair<std::string, Array> array() {
    std::string name = bytes();
    const auto rank = u64();
    if (rank == 0 || rank > 4) throw CheckpointError("checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = u64();
      if (d == 0 || d > (std::size_t{1} << 32)) throw CheckpointError("checkpoint: bad extent for '" + name + "'");
      count *= d;
    }
    need(count * 8);
    std::vector<double> data(count);
    for (auto& v : data) v = std::bit_cast<double>(u64());
    return {std::move(name), Array(std::move(shape), std::move(data))};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

const char* const kGroups[] = {"param/", "ema/", "adam_m/", "adam_v/"};

}  // namespace

std::string Checkpoint::serialize() const {
  Writer w;
  w.str().append(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.bytes(config_echo);
  w.bytes(corpus_spec);
  for (auto v : {counters.step, counters.denoise_steps, counters.decode_steps, counters.condition_draws,
                 counters.condition_dropped, counters.adam_t}) {
    w.u64(v);
  }
  const ParamSet* groups[] = {&params, &ema, &adam_m, &adam_v};
  std::uint64_t n = 3;
  for (const auto* g : groups) n += g->size();
  w.u64(n);
  w.array("emb.table", emb_table);
  w.array("emb.mean", emb_mean);
  w.array("emb.std", emb_std);
  for (int gi = 0; gi < 4; ++gi) {
    for (std::size_t i = 0; i < groups[gi]->size(); ++i) {
      w.array(kGroups[gi] + groups[gi]->names()[i], (*groups[gi])[i]);
    }
  }
  return std::move(w.str());
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic bytes (not an elflow checkpoint)");
  }
  r.raw(sizeof(kMagic));
  const auto version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_echo = r.bytes();
  ck.corpus_spec = r.bytes();
  auto& c = ck.counters;
  for (auto* v : {&c.step, &c.denoise_steps, &c.decode_steps, &c.condition_draws, &c.condition_dropped, &c.adam_t}) {
    *v = r.u64();
  }
  const auto n = r.u64();
  ParamSet* groups[] = {&ck.params, &ck.ema, &ck.adam_m, &ck.adam_v};
  int last_group = -1;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, a] = r.array();
    if (i < 3) {
      static const char* const kEmb[] = {"emb.table", "emb.mean", "emb.std"};
      if (name != kEmb[i]) throw CheckpointError("checkpoint: expected '" + std::string(kEmb[i]) + "', found '" + name + "'");
      (i == 0 ? ck.emb_table : i == 1 ? ck.emb_mean : ck.emb_std) = std::move(a);
      continue;
    }
    int gi = -1;
    for (int g = 0; g < 4; ++g) {
      if (name.rfind(kGroups[g], 0) == 0) gi = g;
    }
    if (gi < 0 || gi < last_group) throw CheckpointError("checkpoint: unexpected array '" + name + "'");
    last_group = gi;
    groups[gi]->add(name.substr(std::strlen(kGroups[gi])), std::move(a));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after the last array");
  try {
    (void)ck.config();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: stored config is invalid: ") + e.what());
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(std::string(e.what()) + " in '" + path + "'");
  }
}

// ------------------------------------------------------------------ model

Model Model::from_checkpoint(const Checkpoint& ck, bool use_ema) {
  RunConfig config = ck.config();
  DenoiserNet net(config.net_config(), ck.params);
  ParamSet weights = use_ema ? ck.ema : ck.params;
  if (weights.names() != net.params().names()) throw CheckpointError("checkpoint: EMA weights do not match the network");
  return Model{std::move(config), ck.config_echo, ck.provider(), std::move(net), std::move(weights),
               ck.counters.decode_steps > 0};
}

Model Model::from_trainer(const Trainer& trainer, bool use_ema) {
  return Model{trainer.config(), trainer.echo(), trainer.data().provider, trainer.net(),
               use_ema ? trainer.ema() : trainer.params(), trainer.counters().decode_steps > 0};
}

Checkpoint train_cached(const RunConfig& config, const std::string& dir,
                        const std::function<void(const StepRecord&)>& on_step) {
  namespace fs = std::filesystem;
  const fs::path path = fs::path(dir) / (config.training_fingerprint() + ".bin");
  if (fs::exists(path)) {
    try {
      Checkpoint ck = Checkpoint::load(path.string());
      if (ck.counters.step == config.train.steps && ck.config().training_fingerprint() == config.training_fingerprint()) {
        return ck;
      }
    } catch (const std::exception&) {
      // Stale or damaged cache entry; retrain below.
    }
  }
  Trainer trainer(config);
  std::string metrics = metrics_header() + "\n";
  trainer.run([&](const StepRecord& r) {
    metrics += metrics_line(r) + "\n";
    if (on_step) on_step(r);
  });
  Checkpoint ck = trainer.checkpoint();
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / (config.training_fingerprint() + ".metrics.csv"), std::ios::binary);
    out << metrics;
  }
  const fs::path tmp = path.string() + ".tmp";
  ck.save(tmp.string());
  fs::rename(tmp, path);
  return ck;
}

}  // namespace elf
