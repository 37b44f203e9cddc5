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
#include "elf/net.hpp"
#include "elf/trainer.hpp"
#include "helpers.hpp"

using namespace elf;
using elf::testing::max_abs_diff;

namespace {

NetConfig small(std::size_t cond_len = 0) {
  NetConfig c;
  c.vocab = 6;
  c.seq_len = 4;
  c.cond_len = cond_len;
  c.d_emb = 8;
  c.d_bottleneck = 4;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 2;
  c.mlp_ratio = 2;
  return c;
}

Array run(const DenoiserNet& net, const Array& z, std::vector<double> t, std::vector<double> w, Mode mode,
          const Array* self_cond = nullptr, const Array* cond = nullptr) {
  Tape tape;
  const BoundParams p = net.bind(tape, net.params());
  std::optional<Var> sc;
  std::optional<Var> c;
  if (self_cond != nullptr) sc = tape.constant(*self_cond);
  if (cond != nullptr) c = tape.constant(*cond);
  return net.forward(p, NetRequest{tape.constant(z), t, w, mode, sc, c}).value();
}

}  // namespace

TEST_CASE("output covers target rows only") {
  Rng rng(1);
  const DenoiserNet plain(small(), rng);
  const DenoiserNet cond(small(3), rng);
  const Array z = gaussian(rng, {2 * 4, 8});
  const Array c = gaussian(rng, {2 * 3, 8});
  CHECK(run(plain, z, {0.2, 0.7}, {1, 2}, Mode::denoise).shape() == Shape{8, 8});
  CHECK(run(cond, z, {0.2, 0.7}, {1, 2}, Mode::denoise, nullptr, &c).shape() == Shape{8, 8});
  CHECK(run(cond, z, {0.2, 0.7}, {1, 2}, Mode::denoise).shape() == Shape{8, 8});
  CHECK(run(cond, z, {1, 1}, {1, 1}, Mode::decode, nullptr, &c).shape() == Shape{8, 8});
  CHECK_THROWS(run(plain, z, {0.2, 0.7}, {1, 2}, Mode::denoise, nullptr, &c));
  CHECK_THROWS(run(plain, z, {0.2, 0.7}, {1, 2}, Mode::decode, &z));
  CHECK_THROWS(run(plain, z, {0.2}, {1, 2}, Mode::denoise));
  CHECK_THROWS(run(plain, gaussian(rng, {7, 8}), {0.2, 0.7}, {1, 2}, Mode::denoise));
}

TEST_CASE("attention without positions is permutation equivariant") {
  NetConfig cfg = small();
  cfg.positions = false;
  Rng rng(2);
  const DenoiserNet net(cfg, rng);
  const Array z = gaussian(rng, {4, 8});
  Array swapped = z;
  for (std::size_t c = 0; c < 8; ++c) std::swap(swapped.at(1, c), swapped.at(3, c));
  const Array a = run(net, z, {0.4}, {1.5}, Mode::denoise);
  const Array b = run(net, swapped, {0.4}, {1.5}, Mode::denoise);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(std::abs(a.at(1, c) - b.at(3, c)) < 1e-12);
    CHECK(std::abs(a.at(3, c) - b.at(1, c)) < 1e-12);
    CHECK(std::abs(a.at(0, c) - b.at(0, c)) < 1e-12);
  }
}

TEST_CASE("zero self-conditioning is the null path and blocks gradients") {
  Rng rng(3);
  const DenoiserNet net(small(), rng);
  const Array z = gaussian(rng, {4, 8});
  const Array zeros(Shape{4, 8});
  CHECK(run(net, z, {0.3}, {1}, Mode::denoise, &zeros) == run(net, z, {0.3}, {1}, Mode::denoise));

  Tape tape;
  const BoundParams p = net.bind(tape, net.params());
  Var prev = tape.parameter(gaussian(rng, {4, 8}));
  const std::vector<double> t{0.3};
  const std::vector<double> w{1.0};
  Var out = net.forward(p, NetRequest{tape.constant(z), t, w, Mode::denoise, prev, std::nullopt});
  Gradients g = tape.backward(ops::sum(ops::mul(out, out)));
  for (double v : g[prev].values()) CHECK(v == 0.0);

  // With a zero carry the projection output depends only on z and the bias.
  Tape t2;
  const BoundParams p2 = net.bind(t2, net.params());
  Var a = net.self_condition(p2, t2.constant(z), t2.constant(zeros));
  Var b = net.self_condition(p2, t2.constant(z), std::nullopt);
  CHECK(a.value() == b.value());
}

TEST_CASE("argmax readout") {
  CHECK(argmax_rows(Array::matrix({{0.1, 2.0, -1.0}})) == std::vector<int>{1});
  CHECK(argmax_rows(Array(Shape{2, 5})) == std::vector<int>{0, 0});
  CHECK(argmax_rows(Array::matrix({{1.0, 3.0, 3.0}})) == std::vector<int>{1});
  Rng rng(4);
  const DenoiserNet net(small(), rng);
  Tape tape;
  const BoundParams p = net.bind(tape, net.params());
  const Array logits = net.unembed(p, tape.constant(Array(Shape{3, 8}))).value();
  CHECK(argmax_rows(logits) == std::vector<int>{0, 0, 0});
}

TEST_CASE("sinusoidal encoding") {
  const auto e0 = sinusoidal_encoding(0.0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[4 + i] == 1.0);
  }
  const auto e = sinusoidal_encoding(3.0, 8);
  CHECK(e[0] == doctest::Approx(std::sin(3.0)));
  CHECK(e[5] == doctest::Approx(std::cos(3.0 * std::pow(10000.0, -0.25))));
}

TEST_CASE("forward and backward pass the finite-difference check") {
  Rng rng(5);
  const DenoiserNet net(small(3), rng);
  const Array z = gaussian(rng, {8, 8});
  const Array c = gaussian(rng, {6, 8});
  const Array prev = gaussian(rng, {8, 8});
  const Array target = gaussian(rng, {8, 8});
  const std::vector<double> t{0.25, 0.6};
  const std::vector<double> w{0.7, 3.0};
  auto f = [&](Tape& tape, std::span<const Var> leaves) {
    BoundParams p{std::vector<Var>(leaves.begin(), leaves.end())};
    Var out = net.forward(p, NetRequest{tape.constant(z), t, w, Mode::denoise, tape.constant(prev), tape.constant(c)});
    return ops::mse(out, target);
  };
  CHECK(grad_check(f, net.params().values(), 1e-5, 1e-6) < 1e-4);
}

TEST_CASE("restoring parameters") {
  Rng rng(6);
  const DenoiserNet net(small(), rng);
  const DenoiserNet back(small(), net.params());
  CHECK(back.params() == net.params());
  ParamSet wrong = net.params();
  wrong["head.b"] = Array(Shape{3});
  CHECK_THROWS(DenoiserNet(small(), wrong));
  CHECK(net.params().scalar_count() > 0);
  CHECK(net.params().all_finite());
}

TEST_CASE("tied unembedding is frozen") {
  NetConfig cfg = small();
  cfg.tie_unembed = true;
  Rng rng(7);
  const Array table = gaussian(rng, {6, 8});
  CHECK_THROWS(DenoiserNet(cfg, rng));
  const DenoiserNet net(cfg, rng, &table);
  const std::size_t w = net.params().index_of("unembed.w");
  CHECK_FALSE(net.trainable(w));
  CHECK(net.params()[w].at(2, 5) == table.at(5, 2));
}

TEST_CASE("guidance scale and self-conditioning influence a briefly trained net") {
  RunConfig cfg = testing::tiny_config();
  cfg.train.steps = 30;
  cfg.train.lr = 3e-3;
  Trainer tr(cfg);
  tr.run();
  const DenoiserNet& net = tr.net();
  Rng rng(8);
  const Array z = gaussian(rng, {4, 8});
  const Array a = run(net, z, {0.4}, {1.0}, Mode::denoise);
  const Array b = run(net, z, {0.4}, {1.01}, Mode::denoise);
  CHECK(max_abs_diff(a, b) > 1e-9);
  const Array carry = gaussian(rng, {4, 8});
  const Array two = run(net, z, {0.4}, {1.0}, Mode::denoise, &carry);
  CHECK(max_abs_diff(a, two) > 1e-6);
}
