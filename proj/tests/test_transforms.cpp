// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <variant>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/rng.hpp"
#include "sepquant/trainer.hpp"
#include "sepquant/transforms.hpp"

using namespace sepquant;

namespace {

ArchSpec tiny_arch() {
  ArchSpec a;
  a.image_size = 8;
  a.classes = 4;
  a.stem_channels = 4;
  a.stem_stride = 2;
  a.block_channels = {4, 8};
  return a;
}

// Baseline graph with randomized weights and non-trivial BN statistics so a
// fold has something to absorb.
Graph randomized_baseline(std::uint64_t seed) {
  Graph g = init_weights(build_baseline_mini(tiny_arch()), seed);
  Rng rng(stream_seed(seed, "bn-stats"));
  for (auto& layer : g.layers) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      for (std::size_t c = 0; c < bn->gamma.size(); ++c) {
        bn->gamma[c] = 0.5f + static_cast<float>(rng.next_double()) * 1.5f;
        bn->beta[c] = static_cast<float>(rng.next_double()) - 0.5f;
        bn->mean[c] = static_cast<float>(rng.next_double()) * 2.0f - 1.0f;
        bn->variance[c] = 0.25f + static_cast<float>(rng.next_double()) * 3.75f;
      }
    }
  }
  return g;
}

}  // namespace

TEST_CASE("bn_channel_alpha matches the closed form") {
  BatchNormLayer bn;
  bn.gamma = {2.0f, 3.0f};
  bn.beta = {0.0f, 0.0f};
  bn.mean = {0.0f, 0.0f};
  bn.variance = {3.999f, 0.0f};
  bn.epsilon = 1e-3f;
  const auto alpha = bn_channel_alpha(bn);
  REQUIRE(alpha.size() == 2);
  CHECK(alpha[0] == doctest::Approx(2.0f / 2.0f));
  CHECK(alpha[1] == doctest::Approx(3.0f / std::sqrt(1e-3f)));
}

TEST_CASE("fold_batchnorm preserves the function") {
  const Graph g = randomized_baseline(17);
  const auto [folded, report] = fold_batchnorm(g);

  // One folded pair per BN: two per block, two blocks.
  CHECK(report.folded.size() == 4);
  CHECK(folded.layers.size() == g.layers.size() - 4);
  for (const auto& layer : folded.layers) {
    CHECK_FALSE(std::holds_alternative<BatchNormLayer>(layer));
  }

  GenSpec spec;
  spec.seed = 23;
  spec.classes = 4;
  spec.image_size = 8;
  spec.train_count = 8;
  spec.val_count = 16;
  spec.holdout_count = 8;
  const GeneratedData d = generate(spec);
  for (std::int64_t i = 0; i < d.val.size(); ++i) {
    const TensorF32 img = image_at(d.val, i);
    const TensorF32 a = forward(g, img, nullptr);
    const TensorF32 b = forward(folded, img, nullptr);
    for (std::size_t k = 0; k < a.data.size(); ++k) {
      CHECK(a.data[k] == doctest::Approx(b.data[k]).epsilon(1e-4));
    }
  }
}

TEST_CASE("fold report carries alpha and shift per folded pair") {
  const Graph g = randomized_baseline(29);
  const auto [folded, report] = fold_batchnorm(g);
  const auto& first = report.folded.front();
  CHECK(first.conv_layer == 1);
  CHECK(first.bn_layer == 2);
  const auto& bn = std::get<BatchNormLayer>(g.layers[2]);
  const auto alpha = bn_channel_alpha(bn);
  REQUIRE(first.alpha.size() == alpha.size());
  for (std::size_t c = 0; c < alpha.size(); ++c) {
    CHECK(first.alpha[c] == doctest::Approx(alpha[c]));
    CHECK(first.shift[c] == doctest::Approx(bn.beta[c] - alpha[c] * bn.mean[c]));
    CHECK(first.alpha[c] >= first.alpha_min);
    CHECK(first.alpha[c] <= first.alpha_max);
  }
}

TEST_CASE("fold scales depthwise kernels per channel") {
  Graph g;
  g.input_shape = Shape{1, 2, 2, 2};
  DepthwiseConv2DLayer dw;
  dw.stride = 1;
  dw.padding = Padding::kSame;
  dw.weights = TensorF32(Shape{1, 1, 2, 1}, {1.0f, 1.0f});
  g.layers.emplace_back(std::move(dw));
  BatchNormLayer bn;
  bn.gamma = {2.0f, 4.0f};
  bn.beta = {1.0f, -1.0f};
  bn.mean = {0.5f, 0.25f};
  bn.variance = {1.0f - 1e-3f, 4.0f - 1e-3f};
  bn.epsilon = 1e-3f;
  g.layers.emplace_back(std::move(bn));
  g.layers.emplace_back(GlobalAvgPoolLayer{});

  const auto [folded, report] = fold_batchnorm(g);
  const auto& fdw = std::get<DepthwiseConv2DLayer>(folded.layers[0]);
  CHECK(fdw.weights.data[0] == doctest::Approx(2.0f));  // alpha0 = 2/sqrt(1)
  CHECK(fdw.weights.data[1] == doctest::Approx(2.0f));  // alpha1 = 4/sqrt(4)
  REQUIRE(fdw.bias.has_value());
  CHECK((*fdw.bias)[0] == doctest::Approx(1.0f - 2.0f * 0.5f));
  CHECK((*fdw.bias)[1] == doctest::Approx(-1.0f - 2.0f * 0.25f));
}

TEST_CASE("fold rejects a BN with no conv before it") {
  Graph g;
  g.input_shape = Shape{1, 2, 2, 2};
  BatchNormLayer bn;
  bn.gamma = {1.0f, 1.0f};
  bn.beta = {0.0f, 0.0f};
  bn.mean = {0.0f, 0.0f};
  bn.variance = {1.0f, 1.0f};
  g.layers.emplace_back(std::move(bn));
  g.layers.emplace_back(GlobalAvgPoolLayer{});
  CHECK_THROWS_AS(fold_batchnorm(g), DataError);

  // BN after an activation is just as invalid.
  Graph h = build_baseline_mini(tiny_arch());
  std::swap(h.layers[2], h.layers[3]);
  CHECK_THROWS_AS(fold_batchnorm(h), DataError);
}

TEST_CASE("make_friendly rewrites blocks and is idempotent") {
  const ArchSpec spec = tiny_arch();
  const Graph base = build_baseline_mini(spec);
  const Graph friendly = make_friendly(base);
  CHECK(same_structure(friendly, build_friendly_mini(spec)));
  CHECK(same_structure(make_friendly(friendly), friendly));
}

TEST_CASE("make_friendly keeps weights and rejects foreign graphs") {
  Graph base = init_weights(build_baseline_mini(tiny_arch()), 3);
  const Graph friendly = make_friendly(base);
  CHECK(std::get<Conv2DLayer>(friendly.layers[0]).weights ==
        std::get<Conv2DLayer>(base.layers[0]).weights);
  CHECK(std::get<DepthwiseConv2DLayer>(friendly.layers[1]).weights ==
        std::get<DepthwiseConv2DLayer>(base.layers[1]).weights);
  // New DW bias exists and is zero.
  const auto& dw = std::get<DepthwiseConv2DLayer>(friendly.layers[1]);
  REQUIRE(dw.bias.has_value());
  for (float v : *dw.bias) CHECK(v == 0.0f);

  Graph mangled = base;
  mangled.layers.erase(mangled.layers.begin() + 2);  // drop the BN after the first DW
  CHECK_THROWS_AS(make_friendly(mangled), DataError);
}

TEST_CASE("inject_dead_channels writes the kernel and the BN stats") {
  Graph g = init_weights(build_baseline_mini(tiny_arch()), 31);
  const std::size_t dw_at = 1;
  const Graph injected = inject_dead_channels(g, dw_at, {1, 3});

  const auto& dw = std::get<DepthwiseConv2DLayer>(injected.layers[dw_at]);
  const auto& orig = std::get<DepthwiseConv2DLayer>(g.layers[dw_at]);
  const std::int64_t ch = dw.weights.shape.dims[2];
  for (std::int64_t ky = 0; ky < 3; ++ky) {
    for (std::int64_t kx = 0; kx < 3; ++kx) {
      for (std::int64_t c = 0; c < ch; ++c) {
        const float v = dw.weights.at(ky, kx, c, 0);
        const float o = orig.weights.at(ky, kx, c, 0);
        if (c == 1 || c == 3) {
          CHECK(v == ((ky == 1 && kx == 1) ? kDeadChannelTap : 0.0f));
        } else {
          CHECK(v == o);
        }
      }
    }
  }
  const auto& bn = std::get<BatchNormLayer>(injected.layers[dw_at + 1]);
  const auto& obn = std::get<BatchNormLayer>(g.layers[dw_at + 1]);
  for (std::int64_t c = 0; c < ch; ++c) {
    if (c == 1 || c == 3) {
      CHECK(bn.mean[c] == 0.0f);
      CHECK(bn.variance[c] == doctest::Approx(1e-8f));
    } else {
      CHECK(bn.mean[c] == obn.mean[c]);
      CHECK(bn.variance[c] == obn.variance[c]);
    }
    CHECK(bn.gamma[c] == obn.gamma[c]);
    CHECK(bn.beta[c] == obn.beta[c]);
  }
}

TEST_CASE("injected channels dominate the folded weight range") {
  const Graph g = randomized_baseline(37);
  const Graph injected = inject_dead_channels(g, 1, {2});
  const auto [folded, report] = fold_batchnorm(injected);
  const auto& dw = std::get<DepthwiseConv2DLayer>(folded.layers[1]);
  const std::int64_t ch = dw.weights.shape.dims[2];
  float inj_max = 0.0f, other_max = 0.0f;
  for (std::int64_t k = 0; k < 9; ++k) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const float mag = std::fabs(dw.weights.data[k * ch + c]);
      if (c == 2) inj_max = std::max(inj_max, mag);
      else other_max = std::max(other_max, mag);
    }
  }
  CHECK(inj_max > 10.0f * other_max);
}

TEST_CASE("inject_dead_channels validates its arguments") {
  const Graph g = build_baseline_mini(tiny_arch());
  CHECK_THROWS_AS(inject_dead_channels(g, 0, {0}), DataError);   // not a DW layer
  CHECK_THROWS_AS(inject_dead_channels(g, 1, {99}), DataError);  // channel out of range
  CHECK_THROWS_AS(inject_dead_channels(g, 1, {-1}), DataError);
  CHECK_THROWS_AS(inject_dead_channels(g, 99, {0}), DataError);  // layer out of range
  const Graph same = inject_dead_channels(g, 1, {});
  CHECK(same == g);
}
