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

#include "elf/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace elf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ELF_DOUBLE(KEY, MEMBER)                                                                  \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); },       \
        [](const RunConfig& c) { return format_double(c.MEMBER); }}
#define ELF_SIZE(KEY, MEMBER)                                                                    \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = static_cast<std::size_t>(parse_uint(KEY, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define ELF_U64(KEY, MEMBER)                                                                     \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_uint(KEY, v); },         \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define ELF_BOOL(KEY, MEMBER)                                                                    \
  Field{KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },         \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"corpus.task",
            [](RunConfig& c, const std::string& v) {
              if (v == "markov") {
                c.corpus.task = CorpusTask::markov;
              } else if (v == "copy") {
                c.corpus.task = CorpusTask::copy;
              } else if (v == "reverse") {
                c.corpus.task = CorpusTask::reverse;
              } else {
                throw ConfigError("config: 'corpus.task' must be markov, copy or reverse, got '" + v + "'");
              }
            },
            [](const RunConfig& c) { return to_string(c.corpus.task); }},
      ELF_SIZE("corpus.vocab", corpus.vocab),
      ELF_SIZE("corpus.order", corpus.order),
      ELF_DOUBLE("corpus.alpha", corpus.alpha),
      ELF_U64("corpus.seed", corpus.seed),
      ELF_SIZE("corpus.seq_len", corpus.seq_len),
      ELF_SIZE("corpus.cond_len", corpus.cond_len),
      ELF_SIZE("corpus.total_len", corpus.total_len),
      ELF_SIZE("corpus.n_train", corpus.n_train),
      ELF_SIZE("corpus.norm_tokens", corpus.norm_tokens),
      ELF_SIZE("corpus.d_emb", corpus.d_emb),
      ELF_SIZE("net.d_bottleneck", net.d_bottleneck),
      ELF_SIZE("net.d_model", net.d_model),
      ELF_SIZE("net.heads", net.heads),
      ELF_SIZE("net.layers", net.layers),
      ELF_SIZE("net.mlp_ratio", net.mlp_ratio),
      ELF_SIZE("net.n_time", net.n_time),
      ELF_SIZE("net.n_cfg", net.n_cfg),
      ELF_SIZE("net.n_mode", net.n_mode),
      ELF_BOOL("net.positions", net.positions),
      ELF_BOOL("net.tie_unembed", net.tie_unembed),
      Field{"net.pred_target",
            [](RunConfig& c, const std::string& v) {
              try {
                c.net.target = parse_prediction_target(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config: 'net.pred_target': ") + e.what());
              }
            },
            [](const RunConfig& c) { return to_string(c.net.target); }},
      ELF_DOUBLE("flow.denoise_p_mean", flow.denoise.mean),
      ELF_DOUBLE("flow.denoise_p_std", flow.denoise.stddev),
      ELF_DOUBLE("flow.noise_scale", flow.noise_scale),
      ELF_DOUBLE("flow.decode_p_mean", flow.decode.mean),
      ELF_DOUBLE("flow.decode_p_std", flow.decode.stddev),
      ELF_DOUBLE("flow.decode_noise_scale", flow.decode_noise_scale),
      ELF_BOOL("flow.noise_in_velocity", flow.noise_in_velocity),
      ELF_DOUBLE("train.mode_prob_denoise", train.mode_prob_denoise),
      ELF_DOUBLE("train.self_cond_prob", train.self_cond_prob),
      ELF_DOUBLE("train.cfg_min", train.cfg_min),
      ELF_DOUBLE("train.cfg_max", train.cfg_max),
      ELF_DOUBLE("train.cfg_power", train.cfg_power),
      ELF_DOUBLE("train.condition_dropout", train.condition_dropout),
      ELF_SIZE("train.batch_size", train.batch_size),
      ELF_SIZE("train.steps", train.steps),
      ELF_DOUBLE("train.lr", train.lr),
      ELF_DOUBLE("train.beta1", train.beta1),
      ELF_DOUBLE("train.beta2", train.beta2),
      ELF_DOUBLE("train.weight_decay", train.weight_decay),
      ELF_DOUBLE("train.adam_eps", train.adam_eps),
      ELF_DOUBLE("train.ema_decay", train.ema_decay),
      ELF_DOUBLE("train.warmup_frac", train.warmup_frac),
      ELF_DOUBLE("train.grad_clip", train.grad_clip),
      ELF_U64("train.seed", train.seed),
      ELF_SIZE("train.ckpt_every", train.ckpt_every),
      ELF_SIZE("sample.steps", sample.steps),
      Field{"sample.schedule",
            [](RunConfig& c, const std::string& v) {
              try {
                c.sample.schedule = parse_schedule_kind(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config: 'sample.schedule': ") + e.what());
              }
            },
            [](const RunConfig& c) { return to_string(c.sample.schedule); }},
      ELF_DOUBLE("sample.p_mean", sample.grid.mean),
      ELF_DOUBLE("sample.p_std", sample.grid.stddev),
      ELF_DOUBLE("sample.gamma", sample.gamma),
      ELF_DOUBLE("sample.cfg", sample.cfg),
      ELF_DOUBLE("sample.cond_cfg", sample.cond_cfg),
      ELF_U64("sample.seed", sample.seed),
      ELF_SIZE("sample.n", sample.n),
      ELF_BOOL("sample.frozen_grid", sample.frozen_grid),
      ELF_BOOL("sample.use_ema", sample.use_ema),
      ELF_SIZE("sample.chunk", sample.chunk),
      ELF_BOOL("eval.per_sample_entropy", eval.per_sample_entropy),
  };
  return table;
}

#undef ELF_DOUBLE
#undef ELF_SIZE
#undef ELF_U64
#undef ELF_BOOL

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

bool unit(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

std::string to_string(CorpusTask task) {
  switch (task) {
    case CorpusTask::markov: return "markov";
    case CorpusTask::copy: return "copy";
    case CorpusTask::reverse: return "reverse";
  }
  return "markov";
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::uniform ? "uniform" : "logit_normal"; }

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "uniform") return ScheduleKind::uniform;
  if (name == "logit_normal" || name == "logit-normal") return ScheduleKind::logit_normal;
  throw std::invalid_argument("unknown schedule '" + name + "' (expected uniform or logit_normal)");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::fingerprint() const { return fnv1a_hex(to_text()); }

std::string RunConfig::training_fingerprint() const {
  std::string text;
  for (const auto& f : fields()) {
    if (f.key.rfind("sample.", 0) == 0 || f.key.rfind("eval.", 0) == 0 || f.key == "train.ckpt_every") continue;
    text += f.key + "=" + f.get(*this) + "\n";
  }
  return fnv1a_hex(text);
}

std::string RunConfig::corpus_spec() const {
  std::string out;
  for (const auto& f : fields()) {
    if (f.key.rfind("corpus.", 0) == 0) out += f.key + "=" + f.get(*this) + "\n";
  }
  return out;
}

NetConfig RunConfig::net_config() const {
  NetConfig n = net;
  n.vocab = corpus.vocab;
  n.seq_len = corpus.seq_len;
  n.cond_len = corpus.cond_len;
  n.d_emb = corpus.d_emb;
  n.noise_scale = flow.noise_scale;
  return n;
}

void RunConfig::validate() const {
  require(corpus.vocab >= 2, "corpus.vocab must be at least 2");
  require(corpus.order == 1 || corpus.order == 2, "corpus.order must be 1 or 2");
  require(corpus.alpha > 0.0, "corpus.alpha must be positive");
  require(corpus.seq_len > 0, "corpus.seq_len must be positive");
  require(corpus.n_train > 0, "corpus.n_train must be positive");
  require(corpus.norm_tokens >= 2, "corpus.norm_tokens must be at least 2");
  require(corpus.d_emb > 0, "corpus.d_emb must be positive");
  if (corpus.task == CorpusTask::markov) {
    require(corpus.cond_len == 0, "corpus.cond_len must be 0 for the markov task");
  } else {
    require(corpus.cond_len == corpus.seq_len, "copy/reverse need corpus.cond_len == corpus.seq_len");
  }
  require(corpus.cond_len + corpus.seq_len <= corpus.total_len, "corpus.cond_len + corpus.seq_len exceeds corpus.total_len");
  require(flow.denoise.stddev > 0.0 && flow.decode.stddev > 0.0, "schedule stddevs must be positive");
  require(flow.noise_scale > 0.0 && flow.decode_noise_scale > 0.0, "noise scales must be positive");
  require(unit(train.mode_prob_denoise), "train.mode_prob_denoise must lie in [0, 1]");
  require(unit(train.self_cond_prob), "train.self_cond_prob must lie in [0, 1]");
  require(unit(train.condition_dropout), "train.condition_dropout must lie in [0, 1]");
  require(train.cfg_min > 0.0 && train.cfg_min <= train.cfg_max, "train.cfg_min must be positive and <= train.cfg_max");
  require(train.cfg_power > 0.0, "train.cfg_power must be positive");
  require(train.batch_size > 0, "train.batch_size must be positive");
  require(train.lr > 0.0, "train.lr must be positive");
  require(unit(train.beta1) && unit(train.beta2), "train.beta1/beta2 must lie in [0, 1]");
  require(unit(train.ema_decay), "train.ema_decay must lie in [0, 1]");
  require(unit(train.warmup_frac), "train.warmup_frac must lie in [0, 1]");
  require(train.grad_clip >= 0.0, "train.grad_clip must be non-negative");
  require(sample.steps >= 1, "sample.steps must be at least 1");
  require(sample.grid.stddev > 0.0, "sample.p_std must be positive");
  require(sample.gamma >= 0.0, "sample.gamma must be non-negative");
  require(sample.cfg > 0.0, "sample.cfg must be positive");
  require(sample.n > 0 && sample.chunk > 0, "sample.n and sample.chunk must be positive");
  try {
    net_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace elf
