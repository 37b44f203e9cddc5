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

// elflow: train, sample, eval, sweep and inspect from the command line.
//
// Exit codes: 0 ok, 2 usage, config or input error, 3 numeric failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "elf/config.hpp"
#include "elf/eval.hpp"
#include "elf/sampler.hpp"
#include "elf/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr const char* kSidecarFormat = "elflow-samples";
constexpr int kSidecarVersion = 1;

/// Input problems that map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw UsageError("write failed: " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Config text from a file; a missing or unreadable file is a config error.
std::string read_config_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw elf::ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

elf::RunConfig parse_config(const std::string& text, const std::string& path) {
  try {
    return elf::RunConfig::parse(text);
  } catch (const elf::ConfigError& e) {
    throw elf::ConfigError(path + ": " + e.what());
  }
}

void apply_overrides(elf::RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw elf::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
}

elf::Checkpoint load_checkpoint(const std::string& path) {
  try {
    return elf::Checkpoint::load(path);
  } catch (const elf::CheckpointError& e) {
    throw UsageError(e.what());
  }
}

/// Sampler flags shared by sample and sweep; unset flags keep the config value.
struct SamplerFlags {
  std::optional<std::size_t> steps;
  std::optional<double> gamma;
  std::optional<double> cfg;
  std::optional<double> cond_cfg;
  std::optional<std::string> schedule;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
  bool raw = false;

  void add_to(CLI::App* app, bool with_seed) {
    app->add_option("--steps", steps, "Sampling steps");
    app->add_option("--gamma", gamma, "Noise re-injection scale (0 = ODE)");
    app->add_option("--cfg", cfg, "Self-conditioning guidance scale");
    app->add_option("--cond-cfg", cond_cfg, "Condition guidance scale (conditional models)");
    app->add_option("--schedule", schedule, "Time grid: uniform or logit_normal");
    if (with_seed) app->add_option("--seed", seed, "Sampling seed");
    app->add_option("--n", n, "Number of sequences");
    app->add_flag("--raw", raw, "Use the raw parameters instead of the EMA");
  }

  void apply(elf::RunConfig& run) const {
    auto& s = run.sample;
    if (steps) s.steps = *steps;
    if (gamma) s.gamma = *gamma;
    if (cfg) s.cfg = *cfg;
    if (cond_cfg) s.cond_cfg = *cond_cfg;
    if (schedule) s.schedule = elf::parse_schedule_kind(*schedule);
    if (seed) s.seed = *seed;
    if (n) s.n = *n;
    if (raw) s.use_ema = false;
    run.validate();
  }
};

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  std::size_t log_every = 500;
};

int cmd_train(const TrainArgs& a) {
  const std::string echo = read_config_text(a.config);
  elf::RunConfig cfg = parse_config(echo, a.config);
  apply_overrides(cfg, a.sets);
  const std::string effective = a.sets.empty() ? echo : cfg.to_text();

  const fs::path out(a.out);
  fs::create_directories(out);
  write_file(out / "config.echo", effective);
  std::ofstream metrics(out / "metrics.csv");
  metrics << "# fingerprint=" << cfg.fingerprint() << " seed=" << cfg.train.seed << "\n"
          << elf::metrics_header() << "\n";

  elf::Trainer trainer(cfg, effective);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t every = cfg.train.ckpt_every;
  try {
    while (trainer.counters().step < cfg.train.steps) {
      const elf::StepRecord r = trainer.step();
      metrics << elf::metrics_line(r) << "\n";
      const std::uint64_t done = r.step + 1;
      if (a.log_every > 0 && done % a.log_every == 0) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "step %llu/%zu  %s loss %.4f  lr %.3g  %.0fs\n", static_cast<unsigned long long>(done),
                     cfg.train.steps, elf::to_string(r.branch).c_str(), r.loss, r.lr, s);
      }
      if (every > 0 && done % every == 0 && done < cfg.train.steps) {
        trainer.checkpoint().save((out / ("ckpt_" + std::to_string(done) + ".bin")).string());
      }
    }
  } catch (const elf::NumericError& e) {
    metrics.flush();
    write_file(out / "diagnostics.txt", e.diagnostics());
    std::cerr << "error: " << e.what() << "\ndiagnostics written to " << (out / "diagnostics.txt").string() << "\n";
    return kExitNumeric;
  }
  const fs::path final_path = out / ("ckpt_" + std::to_string(cfg.train.steps) + ".bin");
  trainer.checkpoint().save(final_path.string());
  std::cerr << "wrote " << final_path.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ sample

struct SampleArgs {
  std::string ckpt;
  std::string out;
  std::string conditions;
  SamplerFlags flags;
};

std::string dump_text(const std::vector<elf::TokenSequence>& seqs) {
  std::string out;
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i > 0) out += ' ';
      out += std::to_string(s[i]);
    }
    out += '\n';
  }
  return out;
}

/// Parses one id per field, one sequence per line.
std::vector<elf::TokenSequence> parse_dump(const std::string& text, const std::string& what) {
  std::vector<elf::TokenSequence> seqs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    elf::TokenSequence s;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      int id = 0;
      try {
        id = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw UsageError(what + ":" + std::to_string(lineno) + ": '" + tok + "' is not a token id");
      s.push_back(id);
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

int cmd_sample(const SampleArgs& a) {
  const elf::Checkpoint ck = load_checkpoint(a.ckpt);
  elf::RunConfig cfg = ck.config();
  a.flags.apply(cfg);
  const elf::Model model = elf::Model::from_checkpoint(ck, cfg.sample.use_ema);
  const auto& c = cfg.corpus;

  std::optional<std::vector<elf::Seq2SeqPair>> prompts;
  std::vector<elf::TokenSequence> conditions;
  if (c.cond_len > 0) {
    if (!a.conditions.empty()) {
      conditions = parse_dump(read_file(a.conditions), a.conditions);
      if (conditions.size() != cfg.sample.n) {
        if (a.flags.n) throw UsageError("--conditions holds " + std::to_string(conditions.size()) + " lines, --n asks for " + std::to_string(cfg.sample.n));
        cfg.sample.n = conditions.size();
      }
      prompts.emplace();
      const elf::TaskKind kind = c.task == elf::CorpusTask::copy ? elf::TaskKind::copy : elf::TaskKind::reverse;
      for (const auto& cond : conditions) {
        if (cond.size() != c.cond_len) throw UsageError("condition length must be " + std::to_string(c.cond_len));
        prompts->push_back(elf::make_seq2seq_pair(kind, cond));
      }
    } else {
      prompts = elf::heldout_prompts(cfg, cfg.sample.n, cfg.sample.seed);
      for (const auto& p : *prompts) conditions.push_back(p.condition);
    }
  } else if (!a.conditions.empty()) {
    throw UsageError("--conditions given but the model is unconditional");
  }

  const elf::GenerateResult gen = elf::generate(model, cfg.sample, prompts ? &conditions : nullptr);
  for (const auto& w : gen.warnings) std::cerr << "warning: " << w << "\n";

  json side;
  side["format"] = kSidecarFormat;
  side["version"] = kSidecarVersion;
  side["fingerprint"] = cfg.fingerprint();
  side["training_fingerprint"] = cfg.training_fingerprint();
  side["seed"] = cfg.sample.seed;
  side["checkpoint"] = a.ckpt;
  side["config_echo"] = ck.config_echo;
  side["config"] = cfg.to_text();
  side["sampler"] = {{"steps", cfg.sample.steps},
                     {"schedule", elf::to_string(cfg.sample.schedule)},
                     {"gamma", cfg.sample.gamma},
                     {"cfg", cfg.sample.cfg},
                     {"cond_cfg", cfg.sample.cond_cfg},
                     {"use_ema", cfg.sample.use_ema},
                     {"kind", cfg.sample.gamma > 0.0 ? "sde" : "ode"}};
  side["grid"] = gen.grid.times;
  side["warnings"] = gen.warnings;
  side["n"] = gen.tokens.size();
  side["seq_len"] = c.seq_len;
  side["vocab"] = c.vocab;
  json samples = json::array();
  if (c.task == elf::CorpusTask::markov) {
    const elf::MarkovSource source = elf::build_source(cfg);
    const auto nll = elf::per_sample_nll(source, gen.tokens);
    for (std::size_t i = 0; i < nll.size(); ++i) {
      samples.push_back({{"index", i}, {"oracle_nll", nll[i]}, {"oracle_ppl", std::exp(nll[i])}});
    }
    side["oracle_ppl"] = elf::oracle_perplexity(source, gen.tokens);
  } else {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gen.tokens.size(); ++i) {
      const bool hit = gen.tokens[i] == (*prompts)[i].target;
      hits += hit;
      samples.push_back({{"index", i}, {"condition", (*prompts)[i].condition}, {"target", (*prompts)[i].target},
                         {"exact_match", hit}});
    }
    side["exact_match"] = static_cast<double>(hits) / static_cast<double>(gen.tokens.size());
  }
  side["samples"] = std::move(samples);

  write_file(a.out, dump_text(gen.tokens));
  write_file(a.out + ".json", side.dump(1) + "\n");
  std::cerr << "wrote " << gen.tokens.size() << " sequences to " << a.out << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string dump;
  std::string sidecar;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const std::string side_path = a.sidecar.empty() ? a.dump + ".json" : a.sidecar;
  json side;
  try {
    side = json::parse(read_file(side_path));
  } catch (const json::exception& e) {
    throw UsageError(side_path + ": not a sample sidecar (" + e.what() + ")");
  }
  if (!side.is_object() || side.value("format", "") != kSidecarFormat || side.value("version", 0) != kSidecarVersion) {
    throw UsageError(side_path + ": not a version " + std::to_string(kSidecarVersion) + " sample sidecar");
  }
  elf::RunConfig cfg;
  try {
    cfg = elf::RunConfig::parse(side.at("config").get<std::string>());
  } catch (const json::exception& e) {
    throw UsageError(side_path + ": missing config (" + e.what() + ")");
  }

  const auto seqs = parse_dump(read_file(a.dump), a.dump);
  if (seqs.empty()) throw UsageError(a.dump + ": empty sample dump");
  const std::size_t L = cfg.corpus.seq_len;
  const std::size_t V = cfg.corpus.vocab;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].size() != L) {
      throw UsageError(a.dump + ": sequence " + std::to_string(i) + " has " + std::to_string(seqs[i].size()) +
                       " tokens, the sidecar schema says " + std::to_string(L));
    }
    for (int id : seqs[i]) {
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw UsageError(a.dump + ": token id " + std::to_string(id) + " outside the vocabulary of " + std::to_string(V));
      }
    }
  }
  if (side.contains("n") && side["n"].get<std::size_t>() != seqs.size()) {
    throw UsageError(a.dump + ": holds " + std::to_string(seqs.size()) + " sequences, the sidecar lists " +
                     std::to_string(side["n"].get<std::size_t>()));
  }

  elf::MetricsRow row;
  if (cfg.corpus.task == elf::CorpusTask::markov) {
    row = elf::evaluate_samples(elf::build_source(cfg), seqs, cfg, cfg.sample);
  } else {
    // No oracle for seq2seq tasks: perplexity is left undefined.
    row.fingerprint = cfg.fingerprint();
    row.steps = cfg.sample.steps;
    row.sampler = cfg.sample.gamma > 0.0 ? "sde" : "ode";
    row.gamma = cfg.sample.gamma;
    row.omega = cfg.sample.cfg;
    row.gen_ppl = std::nan("");
    row.entropy = cfg.eval.per_sample_entropy ? elf::unigram_entropy_per_sample(seqs, V) : elf::unigram_entropy(seqs, V);
    row.distinct = elf::distinct_fraction(seqs);
    row.n = seqs.size();
    row.seed = cfg.sample.seed;
  }
  row.axis = "none";
  row.value = "";
  const std::vector<elf::MetricsRow> rows{row};
  const std::string csv = elf::rows_to_csv(rows);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
  return 0;
}

// ------------------------------------------------------------------ sweep

struct SweepArgs {
  std::string ckpt;
  std::string config;
  std::string axis;
  std::string values;
  std::string seeds = "0,1,2";
  std::string out;
  std::string cache;
  std::vector<std::string> sets;
  SamplerFlags flags;
};

int cmd_sweep(const SweepArgs& a) {
  elf::SweepSpec spec;
  spec.axis = elf::parse_sweep_axis(a.axis);
  spec.values = split(a.values, ',');
  spec.seeds.clear();
  for (const auto& s : split(a.seeds, ',')) spec.seeds.push_back(std::stoull(s));

  elf::RunConfig base;
  std::optional<elf::Checkpoint> ck;
  if (!a.ckpt.empty()) {
    ck = load_checkpoint(a.ckpt);
    base = ck->config();
  } else if (!a.config.empty()) {
    base = parse_config(read_config_text(a.config), a.config);
  } else {
    throw UsageError("sweep needs --ckpt or --config");
  }
  apply_overrides(base, a.sets);
  a.flags.apply(base);

  const bool training = elf::is_training_axis(spec.axis);
  if (training && a.config.empty()) throw UsageError("axis '" + a.axis + "' retrains per value and needs --config");
  const fs::path out(a.out);
  const std::string cache = a.cache.empty() ? (out / "cache").string() : a.cache;
  elf::ModelProvider models = [&](const elf::RunConfig& cfg) {
    if (!training && ck) return elf::Model::from_checkpoint(*ck, cfg.sample.use_ema);
    std::cerr << "training " << cfg.training_fingerprint() << " (" << cfg.train.steps << " steps, cache " << cache << ")\n";
    return elf::Model::from_checkpoint(elf::train_cached(cfg, cache), cfg.sample.use_ema);
  };
  const auto rows = elf::run_sweep(spec, base, models);
  write_file(out / "sweep.csv", elf::rows_to_csv(rows));
  write_file(out / "frontier.dat", "# entropy gen_ppl  fingerprint=" + base.fingerprint() + " axis=" + a.axis +
                                       " seeds=" + a.seeds + "\n" + elf::frontier_plot_data(rows));
  std::cerr << "wrote " << rows.size() << " rows to " << (out / "sweep.csv").string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ inspect

int cmd_inspect(const std::string& path, bool as_json) {
  const elf::Checkpoint ck = load_checkpoint(path);
  const elf::RunConfig cfg = ck.config();
  const auto& k = ck.counters;
  json info;
  info["fingerprint"] = cfg.fingerprint();
  info["training_fingerprint"] = cfg.training_fingerprint();
  info["seed"] = cfg.train.seed;
  info["counters"] = {{"step", k.step},
                      {"denoise_steps", k.denoise_steps},
                      {"decode_steps", k.decode_steps},
                      {"condition_draws", k.condition_draws},
                      {"condition_dropped", k.condition_dropped},
                      {"adam_t", k.adam_t}};
  info["parameters"] = ck.params.scalar_count();
  json arrays = json::array();
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    arrays.push_back({{"name", ck.params.names()[i]}, {"shape", ck.params[i].shape()}});
  }
  info["arrays"] = std::move(arrays);
  info["config_echo"] = ck.config_echo;
  if (as_json) {
    std::cout << info.dump(1) << "\n";
    return 0;
  }
  std::cout << "checkpoint   " << path << "\n"
            << "fingerprint  " << cfg.fingerprint() << " (training " << cfg.training_fingerprint() << ")\n"
            << "steps        " << k.step << " (denoise " << k.denoise_steps << ", decode " << k.decode_steps << ")\n"
            << "parameters   " << ck.params.scalar_count() << " in " << ck.params.size() << " arrays\n";
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    std::cout << "  " << ck.params.names()[i] << " " << elf::shape_string(ck.params[i].shape()) << "\n";
  }
  std::cout << "config\n" << ck.config_echo;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedded language flows on synthetic corpora"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model from a config file");
  t->add_option("--config", train.config, "key=value config file")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--set", train.sets, "Override a config key (key=value), repeatable");
  t->add_option("--log-every", train.log_every, "Progress line interval in steps (0 = quiet)");

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Generate token sequences from a checkpoint");
  s->add_option("--ckpt", sample.ckpt, "Checkpoint file")->required();
  s->add_option("--out", sample.out, "Dump path; the sidecar goes to <out>.json")->required();
  s->add_option("--conditions", sample.conditions, "Condition prompts, one per line (conditional models)");
  sample.flags.add_to(s, true);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a sample dump against the oracle");
  e->add_option("--dump", eval.dump, "Sample dump")->required();
  e->add_option("--sidecar", eval.sidecar, "Sidecar JSON (default <dump>.json)");
  e->add_option("--out", eval.out, "CSV output (default stdout)");

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "Sweep one axis over seeds and write CSV and frontier data");
  w->add_option("--ckpt", sweep.ckpt, "Checkpoint for sampling axes");
  w->add_option("--config", sweep.config, "Config for training axes");
  w->add_option("--axis", sweep.axis, "omega, steps, gamma, schedule, bottleneck, mode_prob or pred_target")->required();
  w->add_option("--values", sweep.values, "Comma-separated axis values")->required();
  w->add_option("--seeds", sweep.seeds, "Comma-separated seeds");
  w->add_option("--out", sweep.out, "Output directory")->required();
  w->add_option("--cache", sweep.cache, "Checkpoint cache for training axes (default <out>/cache)");
  w->add_option("--set", sweep.sets, "Override a config key (key=value), repeatable");
  sweep.flags.add_to(w, false);

  std::string inspect_path;
  bool inspect_json = false;
  auto* i = app.add_subcommand("inspect", "Describe a checkpoint");
  i->add_option("ckpt", inspect_path, "Checkpoint file")->required();
  i->add_flag("--json", inspect_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (*t) return cmd_train(train);
    if (*s) return cmd_sample(sample);
    if (*e) return cmd_eval(eval);
    if (*w) return cmd_sweep(sweep);
    if (*i) return cmd_inspect(inspect_path, inspect_json);
  } catch (const elf::NumericError& err) {
    std::cerr << "error: " << err.what() << "\n" << err.diagnostics() << "\n";
    return kExitNumeric;
  } catch (const elf::ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
