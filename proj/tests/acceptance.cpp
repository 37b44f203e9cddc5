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

// Acceptance run: trains (or loads cached) models and prints one PASS/FAIL
// line per criterion. Exit status is 0 only when every selected criterion
// passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "elf/config.hpp"
#include "elf/eval.hpp"
#include "elf/flow.hpp"
#include "elf/sampler.hpp"
#include "elf/trainer.hpp"

namespace fs = std::filesystem;
using namespace elf;

namespace {

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "/" : "") + fmt(f, v[i]);
  return out;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) { std::fprintf(stderr, "[acceptance] %s\n", msg.c_str()); }

double max_abs_diff(const Array& a, const Array& b) {
  if (!a.same_shape(b)) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ------------------------------------------------------------------ configs

/// The default toy run: defaults as shipped.
RunConfig toy_config() { return RunConfig{}; }

/// Inflated-embedding runs for the prediction-target comparison.
RunConfig pred_target_config(std::size_t steps) {
  RunConfig c;
  c.corpus.d_emb = 128;
  c.net.d_bottleneck = 32;
  c.train.steps = steps;
  c.validate();
  return c;
}

RunConfig copy_config(std::size_t steps) {
  RunConfig c;
  c.corpus.task = CorpusTask::copy;
  c.corpus.cond_len = c.corpus.seq_len;
  c.train.steps = steps;
  c.validate();
  return c;
}

// ------------------------------------------------------------------ harness

class Context {
 public:
  explicit Context(std::string cache) : cache_(std::move(cache)) {}

  const Checkpoint& checkpoint(const RunConfig& cfg) {
    const std::string fp = cfg.training_fingerprint();
    auto it = checkpoints_.find(fp);
    if (it != checkpoints_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    progress("model " + fp + " (" + to_string(cfg.corpus.task) + ", d_emb " + std::to_string(cfg.corpus.d_emb) +
             ", " + to_string(cfg.net.target) + ", seed " + std::to_string(cfg.train.seed) + ", " +
             std::to_string(cfg.train.steps) + " steps)");
    std::uint64_t last = 0;
    Checkpoint ck = train_cached(cfg, cache_, [&](const StepRecord& r) {
      if ((r.step + 1) % 1000 == 0 || r.step + 1 == cfg.train.steps) {
        last = r.step + 1;
        progress("  step " + std::to_string(last) + "  " + fmt("%.0fs", elapsed(t0)));
      }
    });
    if (last == 0) progress("  loaded from cache");
    return checkpoints_.emplace(fp, std::move(ck)).first->second;
  }

  Model model(const RunConfig& cfg) { return Model::from_checkpoint(checkpoint(cfg), cfg.sample.use_ema); }

  std::string metrics_path(const RunConfig& cfg) const {
    return (fs::path(cache_) / (cfg.training_fingerprint() + ".metrics.csv")).string();
  }
  const std::string& cache() const { return cache_; }

 private:
  std::string cache_;
  std::map<std::string, Checkpoint> checkpoints_;
};

struct Sampled {
  double ppl = 0.0;
  double entropy = 0.0;
};

Sampled sample_metrics(const Model& model, const MarkovSource& source, const SamplerConfig& sc) {
  const GenerateResult gen = generate(model, sc);
  return {oracle_perplexity(source, gen.tokens), unigram_entropy(gen.tokens, source.vocab_size())};
}

// ------------------------------------------------------------------ 1

Verdict algebra() {
  Rng rng(11, 1);
  const Array x = gaussian(rng, {6, 5});
  const Array eps = gaussian(rng, {6, 5});
  const double s = 2.0;
  std::vector<std::string> bad;

  const Array z1 = interpolate(x, eps, 1.0, s);
  const Array z0 = interpolate(x, eps, 0.0, s);
  Array s_eps = eps;
  for (auto& v : s_eps.values()) v *= s;
  if (!(z1 == x)) bad.push_back("z(t=1) != x");
  if (!(z0 == s_eps)) bad.push_back("z(t=0) != s*eps");

  double round_trip = 0.0;
  double loss_gap = 0.0;
  for (double t : {0.0, 0.1, 0.37, 0.5, 0.9, 0.999}) {
    const Array z = interpolate(x, eps, t, s);
    const Array x_hat = gaussian(rng, x.shape());
    round_trip = std::max(round_trip, max_abs_diff(v_to_x(x_to_v(x_hat, z, t), z, t), x_hat));
    const double lv = mse_velocity_loss(x_to_v(x_hat, z, t), velocity_target(x, eps, s));
    double lx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) lx += (x_hat[i] - x[i]) * (x_hat[i] - x[i]);
    lx /= static_cast<double>(x.size()) * (1.0 - t) * (1.0 - t);
    loss_gap = std::max(loss_gap, std::abs(lv - lx) / std::max(1.0, std::abs(lx)));
  }
  if (round_trip > 1e-10) bad.push_back("x_to_v round trip " + fmt("%.1e", round_trip));
  if (loss_gap > 1e-10) bad.push_back("v/x loss gap " + fmt("%.1e", loss_gap));

  const Array v = velocity_target(x, eps, s);
  if (!(cfg_target(v, gaussian(rng, x.shape()), gaussian(rng, x.shape()), 1.0) == v)) bad.push_back("cfg_target(1) != v");

  // SDE with gamma 0 against the ODE step on an untrained tiny model.
  RunConfig tiny;
  tiny.corpus.vocab = 6;
  tiny.corpus.seq_len = 4;
  tiny.corpus.d_emb = 8;
  tiny.corpus.n_train = 16;
  tiny.corpus.norm_tokens = 256;
  tiny.net.d_bottleneck = 4;
  tiny.net.d_model = 16;
  tiny.net.heads = 2;
  tiny.validate();
  Trainer tr(tiny);
  const Model model = Model::from_trainer(tr, false);
  const DenoiseFn fn = make_denoiser(model, 1.5, nullptr, 1.0);
  double sde_gap = 0.0;
  for (double t : {0.0, 0.3, 0.8}) {
    const Array z = gaussian(rng, {8, 8});
    const Array carry = gaussian(rng, {8, 8});
    Rng r1(5);
    const StepOutput a = sde_step(z, t, 0.1, 0.0, s, fn, carry, r1);
    const StepOutput b = ode_step(z, t, 0.1, fn, carry);
    sde_gap = std::max({sde_gap, max_abs_diff(a.z, b.z), max_abs_diff(a.x_hat, b.x_hat)});
  }
  if (sde_gap > 1e-12) bad.push_back("sde(gamma=0) vs ode " + fmt("%.1e", sde_gap));

  std::string detail = "endpoints exact, round trip " + fmt("%.1e", round_trip) + ", loss gap " +
                       fmt("%.1e", loss_gap) + ", cfg(1) bitwise, sde/ode " + fmt("%.1e", sde_gap);
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ------------------------------------------------------------------ 2

Verdict gradients() {
  double worst_dn = 0.0;
  double worst_dc = 0.0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    RunConfig cfg;
    cfg.corpus.task = point % 2 == 0 ? CorpusTask::markov : CorpusTask::copy;
    cfg.corpus.vocab = 6;
    cfg.corpus.seq_len = 4;
    cfg.corpus.cond_len = cfg.corpus.task == CorpusTask::copy ? 4 : 0;
    cfg.corpus.total_len = 8;
    cfg.corpus.n_train = 16;
    cfg.corpus.norm_tokens = 256;
    cfg.corpus.d_emb = 8;
    cfg.corpus.seed = 100 + point;
    cfg.net.d_bottleneck = 4;
    cfg.net.d_model = 16;
    cfg.net.heads = 2;
    cfg.net.layers = 2;
    cfg.net.mlp_ratio = 2;
    cfg.net.n_time = 2;
    cfg.net.n_cfg = 2;
    cfg.net.n_mode = 2;
    cfg.validate();
    const TrainingData data = build_training_data(cfg);
    Rng init(point, 17);
    const DenoiserNet net(cfg.net_config(), init);
    const std::vector<std::size_t> idx{point % 16, (point + 5) % 16};
    const Batch batch = make_batch(data, idx);
    Rng rng(point, 23);
    DenoiseDraws dn = draw_denoise(cfg, 2, rng);
    // The self-conditioned target is a stop-gradient of the parameters, which
    // finite differences cannot respect; check the differentiable path.
    dn.self_cond.assign(2, false);
    const DecodeDraws dc = draw_decode(cfg, 2, rng);
    auto denoise = [&](Tape&, std::span<const Var> leaves) {
      return denoise_loss(net, BoundParams{std::vector<Var>(leaves.begin(), leaves.end())}, batch, cfg, dn);
    };
    auto decode = [&](Tape&, std::span<const Var> leaves) {
      return decode_loss(net, BoundParams{std::vector<Var>(leaves.begin(), leaves.end())}, batch, cfg, dc);
    };
    worst_dn = std::max(worst_dn, grad_check(denoise, net.params().values(), 1e-5, 1e-6));
    worst_dc = std::max(worst_dc, grad_check(decode, net.params().values(), 1e-5, 1e-6));
  }
  return {worst_dn < 1e-4 && worst_dc < 1e-4,
          "worst relative error over 10 points: denoise " + fmt("%.2e", worst_dn) + ", decode " + fmt("%.2e", worst_dc)};
}

// ------------------------------------------------------------------ 3

Verdict determinism() {
  RunConfig cfg = toy_config();
  cfg.train.steps = 100;
  auto run = [&](std::string& csv, std::string& dump) {
    Trainer tr(cfg);
    csv = metrics_header() + "\n";
    tr.run([&](const StepRecord& r) { csv += metrics_line(r) + "\n"; });
    const GenerateResult gen = generate(Model::from_trainer(tr), cfg.sample);
    std::ostringstream out;
    for (const auto& s : gen.tokens) {
      for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
      out << "\n";
    }
    dump = out.str();
  };
  std::string csv_a, dump_a, csv_b, dump_b;
  run(csv_a, dump_a);
  run(csv_b, dump_b);
  const bool pass = csv_a == csv_b && dump_a == dump_b;
  return {pass, std::string("100-step metrics CSV ") + (csv_a == csv_b ? "identical" : "DIFFERS") + " (" +
                    std::to_string(csv_a.size()) + " bytes), sample dump " +
                    (dump_a == dump_b ? "identical" : "DIFFERS") + " (" + std::to_string(dump_a.size()) + " bytes)"};
}

// ------------------------------------------------------------------ 4

Verdict decode_fidelity(Context& ctx) {
  const RunConfig cfg = toy_config();
  const Model model = ctx.model(cfg);
  const MarkovSource source = build_source(cfg);
  Rng rng(77, 3);
  const auto seqs = sample_corpus(source, 512, cfg.corpus.seq_len, rng);
  const Array x = model.provider.embed_batch(seqs);
  std::vector<double> accs;
  for (double p : {0.95, 0.99}) {
    const Array eps = gaussian(rng, x.shape());
    const Array z = interpolate(x, eps, p, cfg.flow.decode_noise_scale);
    const auto ids = decode_tokens(model, z, 1.0, nullptr);
    std::size_t hit = 0;
    for (std::size_t r = 0; r < ids.size(); ++r) hit += ids[r] == seqs[r / cfg.corpus.seq_len][r % cfg.corpus.seq_len];
    accs.push_back(static_cast<double>(hit) / static_cast<double>(ids.size()));
  }
  return {accs[0] > 0.99 && accs[1] > 0.99,
          "token accuracy at p=0.95: " + fmt("%.4f", accs[0]) + ", p=0.99: " + fmt("%.4f", accs[1]) + " (8192 tokens)"};
}

// ------------------------------------------------------------------ 5

Verdict quality(Context& ctx) {
  const RunConfig cfg = toy_config();
  const Model model = ctx.model(cfg);
  const MarkovSource source = build_source(cfg);
  const double ref_ppl = std::exp(source.entropy_rate());
  const double ref_h = source.unigram_entropy();
  int passed = 0;
  std::vector<double> ppl, ent;
  for (auto seed : kSeeds) {
    SamplerConfig sc = cfg.sample;
    sc.steps = 64;
    sc.gamma = 1.0;
    sc.cfg = 1.0;
    sc.seed = seed;
    const Sampled m = sample_metrics(model, source, sc);
    ppl.push_back(m.ppl);
    ent.push_back(m.entropy);
    passed += std::abs(m.ppl - ref_ppl) <= 0.25 * ref_ppl && std::abs(m.entropy - ref_h) <= 0.15;
  }
  return {passed >= 2, "oracle PPL " + fmt("%.3f", ref_ppl) + " vs samples " + join(ppl) + "; entropy " +
                           fmt("%.3f", ref_h) + " vs " + join(ent) + "; " + std::to_string(passed) + "/3 seeds pass"};
}

// ------------------------------------------------------------------ 6

Verdict cfg_tradeoff(Context& ctx) {
  const RunConfig cfg = toy_config();
  SweepSpec spec;
  spec.axis = SweepAxis::omega;
  spec.values = {"0.5", "1", "2", "3"};
  spec.seeds = kSeeds;
  const auto rows = run_sweep(spec, cfg, [&](const RunConfig& c) { return ctx.model(c); });
  std::vector<double> omega, ppl, ent;
  std::map<double, std::vector<double>> by_omega_ppl, by_omega_h;
  for (const auto& r : rows) {
    omega.push_back(r.omega);
    ppl.push_back(r.gen_ppl);
    ent.push_back(r.entropy);
    by_omega_ppl[r.omega].push_back(r.gen_ppl);
    by_omega_h[r.omega].push_back(r.entropy);
  }
  const fs::path dir = fs::path(ctx.cache()) / "sweeps";
  fs::create_directories(dir);
  std::ofstream(dir / "omega.csv") << rows_to_csv(rows);
  std::ofstream(dir / "omega_frontier.dat") << "# entropy gen_ppl  fingerprint=" << cfg.fingerprint() << "\n"
                                            << frontier_plot_data(rows);
  const double rho_ppl = spearman(omega, ppl);
  const double rho_h = spearman(omega, ent);
  std::string means;
  for (const auto& [w, v] : by_omega_ppl) {
    double mp = 0.0, mh = 0.0;
    for (double x : v) mp += x / v.size();
    for (double x : by_omega_h[w]) mh += x / v.size();
    means += " w=" + fmt("%g", w) + ":" + fmt("%.2f", mp) + "/" + fmt("%.3f", mh);
  }
  return {rho_ppl <= 0.0 && rho_h <= -0.5, "Spearman(omega, PPL) " + fmt("%+.3f", rho_ppl) +
                                               ", Spearman(omega, entropy) " + fmt("%+.3f", rho_h) +
                                               "; mean PPL/entropy" + means};
}

// ------------------------------------------------------------------ 7

Verdict sampler_trend(Context& ctx) {
  const RunConfig cfg = toy_config();
  const Model model = ctx.model(cfg);
  const MarkovSource source = build_source(cfg);
  auto run = [&](std::size_t steps, double gamma, std::uint64_t seed) {
    SamplerConfig sc = cfg.sample;
    sc.steps = steps;
    sc.gamma = gamma;
    sc.seed = seed;
    return sample_metrics(model, source, sc).ppl;
  };
  int sde_wins = 0, ode_mono = 0, sde_mono = 0;
  std::vector<double> ode16, sde16, ode8, ode64, sde8, sde64;
  for (auto seed : kSeeds) {
    ode16.push_back(run(16, 0.0, seed));
    sde16.push_back(run(16, 1.0, seed));
    ode8.push_back(run(8, 0.0, seed));
    ode64.push_back(run(64, 0.0, seed));
    sde8.push_back(run(8, 1.0, seed));
    sde64.push_back(run(64, 1.0, seed));
    sde_wins += sde16.back() <= ode16.back();
    ode_mono += ode64.back() <= ode8.back();
    sde_mono += sde64.back() <= sde8.back();
  }
  const bool pass = sde_wins >= 2 && ode_mono >= 2 && sde_mono >= 2;
  return {pass, "16 steps SDE " + join(sde16) + " vs ODE " + join(ode16) + " (" + std::to_string(sde_wins) +
                    "/3); ODE 64 " + join(ode64) + " vs 8 " + join(ode8) + " (" + std::to_string(ode_mono) +
                    "/3); SDE 64 " + join(sde64) + " vs 8 " + join(sde8) + " (" + std::to_string(sde_mono) + "/3)"};
}

// ------------------------------------------------------------------ 8

Verdict prediction_target(Context& ctx, std::size_t steps) {
  const RunConfig base = pred_target_config(steps);
  SweepSpec spec;
  spec.axis = SweepAxis::pred_target;
  spec.values = {"x", "eps"};
  spec.seeds = kSeeds;
  const auto rows = run_sweep(spec, base, [&](const RunConfig& c) { return ctx.model(c); });
  std::map<std::uint64_t, double> x_ppl, eps_ppl;
  for (const auto& r : rows) (r.value == "x" ? x_ppl : eps_ppl)[r.seed] = r.gen_ppl;
  int wins = 0;
  std::vector<double> xs, es;
  for (auto seed : kSeeds) {
    xs.push_back(x_ppl.at(seed));
    es.push_back(eps_ppl.at(seed));
    wins += x_ppl.at(seed) < eps_ppl.at(seed);
  }
  const fs::path dir = fs::path(ctx.cache()) / "sweeps";
  fs::create_directories(dir);
  std::ofstream(dir / "pred_target.csv") << rows_to_csv(rows);
  return {wins == 3, "d_emb 128, " + std::to_string(steps) + " steps each: x-pred PPL " + join(xs) + " vs eps-pred " +
                         join(es) + " (" + std::to_string(wins) + "/3 seeds)"};
}

// ------------------------------------------------------------------ 9

Verdict conditional(Context& ctx, std::size_t steps) {
  const RunConfig cfg = copy_config(steps);
  const Checkpoint& ck = ctx.checkpoint(cfg);
  const Model model = Model::from_checkpoint(ck, true);
  double em1 = 0.0, em2 = 0.0;
  for (auto seed : kSeeds) {
    const auto prompts = heldout_prompts(cfg, 200, seed);
    std::vector<TokenSequence> conds, targets;
    for (const auto& p : prompts) {
      conds.push_back(p.condition);
      targets.push_back(p.target);
    }
    SamplerConfig sc = cfg.sample;
    sc.steps = 64;
    sc.gamma = 0.0;
    sc.n = prompts.size();
    sc.seed = seed;
    sc.cond_cfg = 1.0;
    em1 += exact_match_accuracy(generate(model, sc, &conds).tokens, targets) / kSeeds.size();
    sc.cond_cfg = 2.0;
    em2 += exact_match_accuracy(generate(model, sc, &conds).tokens, targets) / kSeeds.size();
  }
  const auto& k = ck.counters;
  const double rate = static_cast<double>(k.condition_dropped) / static_cast<double>(std::max<std::uint64_t>(1, k.condition_draws));
  const bool enough = k.condition_draws >= 10000;
  const bool pass = em2 - em1 >= 0.02 && enough && std::abs(rate - 0.1) <= 0.01;
  return {pass, "copy exact match s_c=1 " + fmt("%.4f", em1) + ", s_c=2 " + fmt("%.4f", em2) + " (gain " +
                    fmt("%+.4f", em2 - em1) + ", 200 prompts x 3 seeds); condition dropout " + fmt("%.4f", rate) +
                    " over " + std::to_string(k.condition_draws) + " training draws"};
}

// ------------------------------------------------------------------ 10

Verdict schedule_effect(Context& ctx) {
  const RunConfig cfg = toy_config();
  const Model model = ctx.model(cfg);
  const MarkovSource source = build_source(cfg);
  int wins = 0;
  std::vector<double> ln, un;
  for (auto seed : kSeeds) {
    SamplerConfig sc = cfg.sample;
    sc.steps = 8;
    sc.gamma = 0.0;
    sc.seed = seed;
    sc.schedule = ScheduleKind::logit_normal;
    ln.push_back(sample_metrics(model, source, sc).ppl);
    sc.schedule = ScheduleKind::uniform;
    un.push_back(sample_metrics(model, source, sc).ppl);
    wins += ln.back() <= un.back();
  }
  return {wins >= 2, "8 ODE steps: logit-normal PPL " + join(ln) + " vs uniform " + join(un) + " (" +
                         std::to_string(wins) + "/3 seeds)"};
}

// ------------------------------------------------------------------ extra

/// Mean denoise loss over the first and last `window` denoise steps of a CSV.
std::pair<double, double> loss_drop(const std::string& path, std::size_t window) {
  std::ifstream in(path);
  std::string line;
  std::vector<double> losses;
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    if (a == std::string::npos || line.compare(a + 1, 8, "denoise,") != 0) continue;
    losses.push_back(std::stod(line.substr(a + 9, line.find(',', a + 9) - a - 9)));
  }
  if (losses.size() < 2 * window) return {NAN, NAN};
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    first += losses[i] / window;
    last += losses[losses.size() - 1 - i] / window;
  }
  return {first, last};
}

Verdict early_loss(Context& ctx) {
  int ok = 0;
  std::vector<double> ratios;
  for (auto seed : kSeeds) {
    RunConfig cfg = toy_config();
    cfg.train.steps = 2000;
    cfg.train.seed = seed;
    ctx.checkpoint(cfg);
    const auto [first, last] = loss_drop(ctx.metrics_path(cfg), 50);
    ratios.push_back(last / first);
    ok += last <= 0.5 * first;
  }
  return {ok == 3, "denoise loss after 2000 steps relative to the first 50 denoise steps: " + join(ratios) +
                       " (need <= 0.5 for seeds 0-2)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elflow acceptance criteria"};
  std::string cache = "acceptance_cache";
  std::string only;
  std::size_t pred_steps = 4000;
  std::size_t copy_steps = 4000;
  app.add_option("--cache", cache, "Checkpoint cache directory");
  app.add_option("--only", only, "Comma-separated criteria to run (1-10, 'extra' for the loss check; default all)");
  app.add_option("--pred-steps", pred_steps, "Training steps per prediction-target run");
  app.add_option("--copy-steps", copy_steps, "Training steps for the copy-task model");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  {
    std::istringstream in(only);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) selected.insert(item);
    }
  }
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id) > 0; };

  Context ctx(cache);
  struct Criterion {
    std::string id;
    std::string name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {"1", "algebraic reductions", [] { return algebra(); }},
      {"2", "gradient suite", [] { return gradients(); }},
      {"3", "determinism", [] { return determinism(); }},
      {"4", "decode fidelity", [&] { return decode_fidelity(ctx); }},
      {"5", "generative quality vs oracle", [&] { return quality(ctx); }},
      {"6", "CFG trade-off trend", [&] { return cfg_tradeoff(ctx); }},
      {"7", "sampler trend", [&] { return sampler_trend(ctx); }},
      {"8", "prediction-target trend", [&] { return prediction_target(ctx, pred_steps); }},
      {"9", "conditional generation + CFG", [&] { return conditional(ctx, copy_steps); }},
      {"10", "time-schedule effect", [&] { return schedule_effect(ctx); }},
      {"extra", "loss halves within 2000 steps", [&] { return early_loss(ctx); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    const std::string label = c.id == "extra" ? "check" : "criterion " + c.id;
    std::printf("%s %s (%s): %s [%.0fs]\n", v.pass ? "PASS" : "FAIL", label.c_str(), c.name.c_str(), v.detail.c_str(),
                elapsed(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
