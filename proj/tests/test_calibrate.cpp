// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "sepquant/calibrate.hpp"
#include "sepquant/dataset.hpp"
#include "sepquant/error.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/rng.hpp"
#include "sepquant/tensor.hpp"
#include "sepquant/trainer.hpp"

using namespace sepquant;

namespace {

ArchSpec tiny_arch() {
  ArchSpec a;
  a.image_size = 8;
  a.classes = 4;
  a.stem_channels = 4;
  a.stem_stride = 2;
  a.block_channels = {4};
  return a;
}

GeneratedData tiny_data(std::uint64_t seed = 3) {
  GenSpec spec;
  spec.seed = seed;
  spec.classes = 4;
  spec.image_size = 8;
  spec.train_count = 64;
  spec.val_count = 16;
  spec.holdout_count = 8;
  return generate(spec);
}

TensorStats stats_with(double min, double max, std::vector<std::pair<int, std::uint64_t>> bins) {
  TensorStats st;
  st.min = min;
  st.max = max;
  st.histogram.assign(kHistogramBins, 0);
  for (auto [b, c] : bins) {
    st.histogram[static_cast<std::size_t>(b)] = c;
    st.sample_count += c;
  }
  return st;
}

}  // namespace

TEST_CASE("stats_from_values records exact extremes and bins") {
  const float values[] = {1.0f, 2.0f, 3.0f};
  const TensorStats st = stats_from_values(values, 3);
  CHECK(st.min == 1.0);
  CHECK(st.max == 3.0);
  CHECK(st.sample_count == 3);
  CHECK(st.histogram[0] == 1);                  // 1.0 at the low edge
  CHECK(st.histogram[1024] == 1);               // 2.0 exactly mid-range
  CHECK(st.histogram[kHistogramBins - 1] == 1); // 3.0 clamped into the top bin
  std::uint64_t total = 0;
  for (auto h : st.histogram) total += h;
  CHECK(total == 3);
}

TEST_CASE("constant tensors collapse into bin zero") {
  const float values[] = {5.0f, 5.0f};
  const TensorStats st = stats_from_values(values, 2);
  CHECK(st.min == 5.0);
  CHECK(st.max == 5.0);
  CHECK(st.histogram[0] == 2);
  CHECK(st.sample_count == 2);
}

TEST_CASE("stats reject empty and non-finite input") {
  CHECK_THROWS_AS(stats_from_values(nullptr, 0), DataError);
  const float bad[] = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(stats_from_values(bad, 2), DataError);
  const float inf[] = {std::numeric_limits<float>::infinity()};
  CHECK_THROWS_AS(stats_from_values(inf, 1), DataError);
}

TEST_CASE("MinMax merge is order independent") {
  MinMax a, b, c;
  a.add(1.0f);
  a.add(-2.0f);
  b.add(7.0f);
  c.merge(a);
  c.merge(b);
  MinMax d;
  d.merge(b);
  d.merge(a);
  CHECK(c.min == d.min);
  CHECK(c.max == d.max);
  CHECK(c.min == -2.0);
  CHECK(c.max == 7.0);
  MinMax empty;
  c.merge(empty);
  CHECK(c.min == -2.0);
  CHECK(c.max == 7.0);
}

TEST_CASE("collect_stats covers input, layers and weight tensors") {
  const GeneratedData d = tiny_data();
  const Graph g = init_weights(build_baseline_mini(tiny_arch()), 5);
  const Dataset calib = calibration_subset(d.train, 1);
  const CalibrationRecord rec = collect_stats(g, calib);

  CHECK(rec.tensors.count("input") == 1);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    CHECK(rec.tensors.count(layer_stats_key(i)) == 1);
  }
  // Weighted layers only: stem 0, DW 1, PW 4, dense 8.
  CHECK(rec.tensors.count("weight:0") == 1);
  CHECK(rec.tensors.count("weight:1") == 1);
  CHECK(rec.tensors.count("weight:4") == 1);
  CHECK(rec.tensors.count("weight:8") == 1);
  CHECK(rec.tensors.size() == g.layers.size() + 1 + 4);

  // ReLU6 outputs live in [0, 6].
  const TensorStats& act = rec.tensors.at(layer_stats_key(3));
  CHECK(act.min >= 0.0);
  CHECK(act.max <= 6.0);
  // Input pixels live in [0, 1].
  const TensorStats& in = rec.tensors.at("input");
  CHECK(in.min >= 0.0);
  CHECK(in.max <= 1.0);
  CHECK(in.sample_count == static_cast<std::uint64_t>(calib.size()) * 64);

  CHECK_THROWS_AS(collect_stats(g, Dataset{}), DataError);
}

TEST_CASE("split stats union matches full-set extremes") {
  const GeneratedData d = tiny_data(11);
  const Graph g = init_weights(build_baseline_mini(tiny_arch()), 7);

  Dataset first = calibration_subset(d.train, 2);
  // Halve: first 4 vs last 4 of the 8 picked images.
  auto slice = [&](std::int64_t from, std::int64_t count) {
    Dataset out;
    out.split = first.split;
    out.classes = first.classes;
    out.images = TensorF32(Shape{count, 8, 8, 1});
    for (std::int64_t i = 0; i < count; ++i) {
      const TensorF32 img = image_at(first, from + i);
      std::copy(img.data.begin(), img.data.end(), out.images.data.begin() + i * 64);
      out.labels.push_back(first.labels[static_cast<std::size_t>(from + i)]);
    }
    return out;
  };
  const Dataset a = slice(0, 4);
  const Dataset b = slice(4, 4);
  const CalibrationRecord ra = collect_stats(g, a);
  const CalibrationRecord rb = collect_stats(g, b);
  const CalibrationRecord rf = collect_stats(g, first);
  for (const char* key : {"input", "layer:0", "layer:6", "layer:9"}) {
    const auto& sa = ra.tensors.at(key);
    const auto& sb = rb.tensors.at(key);
    const auto& sf = rf.tensors.at(key);
    CHECK(sf.min == std::min(sa.min, sb.min));
    CHECK(sf.max == std::max(sa.max, sb.max));
    CHECK(sf.sample_count == sa.sample_count + sb.sample_count);
  }
}

TEST_CASE("calibration_subset picks the first images per class") {
  Dataset d;
  d.classes = 3;
  d.split = Split::kTrain;
  d.images = TensorF32(Shape{5, 2, 2, 1});
  for (std::size_t i = 0; i < d.images.data.size(); ++i) {
    d.images.data[i] = static_cast<float>(i);
  }
  d.labels = {0, 1, 1, 0, 2};

  const Dataset sub = calibration_subset(d, 1);
  REQUIRE(sub.size() == 3);
  CHECK(sub.labels == std::vector<std::uint16_t>{0, 1, 2});
  CHECK(sub.images.data[0] == 0.0f);   // image 0
  CHECK(sub.images.data[4] == 4.0f);   // image 1
  CHECK(sub.images.data[8] == 16.0f);  // image 4

  const Dataset two = calibration_subset(d, 2);
  CHECK(two.size() == 5);  // class 2 has only one sample; the rest give two

  Dataset missing = d;
  missing.labels = {0, 1, 1, 0, 0};
  CHECK_THROWS_WITH_AS(calibration_subset(missing, 1),
                       doctest::Contains("class 2"), DataError);
  CHECK_THROWS_AS(calibration_subset(d, 0), DataError);
}

TEST_CASE("loss_for_clip is zero when every center is representable") {
  // Range [0, 204.8]: bin width 0.1, centers 0.05 + 0.1b. Clip [0, 6.375]
  // gives delta = 0.025, so every center in bins 0..63 is exactly a code.
  TensorStats st = stats_with(0.0, 204.8, {{0, 5}, {10, 3}, {63, 2}});
  const ClipLoss loss = loss_for_clip(st, 0.0, 6.375);
  CHECK(loss.quantization < 1e-12);
  CHECK(loss.saturation == 0.0);
}

TEST_CASE("loss_for_clip counts excluded mass as pure saturation") {
  TensorStats st = stats_with(0.0, 204.8, {{1000, 7}});
  const ClipLoss loss = loss_for_clip(st, 0.0, 6.375);
  const double center = 0.05 + 0.1 * 1000;  // 100.05
  const double err = center - 6.375;        // clamped to the top code
  CHECK(loss.quantization == 0.0);
  CHECK(loss.saturation == doctest::Approx(7.0 * err * err).epsilon(1e-9));
  CHECK(loss.total() == loss.quantization + loss.saturation);
}

TEST_CASE("loss_for_clip rejects degenerate ranges and bad histograms") {
  TensorStats st = stats_with(0.0, 1.0, {{0, 1}});
  CHECK_THROWS_AS(loss_for_clip(st, 0.5, 0.5), DataError);
  CHECK_THROWS_AS(loss_for_clip(st, 0.7, 0.5), DataError);
  st.histogram.resize(10);
  CHECK_THROWS_AS(loss_for_clip(st, 0.0, 1.0), DataError);
}

TEST_CASE("outlier clipping pays off only when the outlier mass is tiny") {
  // Uniform mass over [0, 1] (bins 0..19 of a [0, 100] histogram) plus one
  // outlier bin at the top. With squared-error loss the trade is explicit:
  // saturating the outlier costs mass * 98.4^2, clipping saves about
  // (delta_full^2 - delta_clip^2)/12 per uniform sample.
  auto outlier_stats = [](std::uint64_t uniform_per_bin, std::uint64_t outlier_count) {
    std::vector<std::pair<int, std::uint64_t>> bins;
    for (int b = 0; b < 20; ++b) bins.emplace_back(b, uniform_per_bin);
    bins.emplace_back(kHistogramBins - 1, outlier_count);
    return stats_with(0.0, 100.0, bins);
  };

  // 0.1% outlier mass: keeping the outlier representable wins.
  {
    const TensorStats st = outlier_stats(50, 1);
    const double full = loss_for_clip(st, 0.0, 100.0).total();
    const double clipped = loss_for_clip(st, 0.0, 100.0 - 63.0 * 100.0 / 64.0).total();
    CHECK(full < clipped);
    const SearchResult brute = brute_force_qparams(st);
    CHECK(brute.clip_max == 100.0);
    CHECK(brute.qparams == choose_qparams_from_range(0.0, 100.0));
    const SearchResult greedy = greedy_search_qparams(st);
    CHECK(greedy.qparams == brute.qparams);
  }

  // Vanishing outlier mass: the search clips the outlier away. The optimum
  // is 4 grid steps (6.25), not the tightest clip: there the bin width is
  // almost exactly 2 codes, so the uniform centers land on the lattice.
  {
    const TensorStats st = outlier_stats(10'000'000, 1);
    const SearchResult brute = brute_force_qparams(st);
    CHECK(brute.clip_max < 10.0);
    CHECK(brute.clip_max == doctest::Approx(6.25));
    const SearchResult greedy = greedy_search_qparams(st);
    CHECK(greedy.clip_max == doctest::Approx(brute.clip_max));
    CHECK(greedy.loss == doctest::Approx(brute.loss));
    CHECK(greedy.qparams.delta < choose_qparams_from_range(0.0, 100.0).delta / 10.0);
  }
}

TEST_CASE("greedy matches brute force on unimodal histograms") {
  // Histograms from collect_stats always span [min, max]: the range comes
  // from the observed extremes, so the first and last bins carry mass.
  Rng rng(stream_seed(1234, "unimodal"));
  for (int trial = 0; trial < 20; ++trial) {
    const double lo = rng.next_double() * 10.0 - 5.0;
    const double hi = lo + 0.5 + rng.next_double() * 20.0;
    const int peak = static_cast<int>(rng.next_below(kHistogramBins));
    const int width = std::max(peak, kHistogramBins - 1 - peak) + 1;
    std::vector<std::pair<int, std::uint64_t>> bins;
    for (int b = 0; b < kHistogramBins; ++b) {
      const double x = static_cast<double>(b - peak) / width;
      bins.emplace_back(b, static_cast<std::uint64_t>(1000.0 * std::exp(-4.0 * x * x)));
    }
    const TensorStats st = stats_with(lo, hi, bins);
    const SearchResult g = greedy_search_qparams(st);
    const SearchResult b = brute_force_qparams(st);
    CHECK(g.qparams == b.qparams);
    CHECK(g.loss == doctest::Approx(b.loss));
  }
}

TEST_CASE("greedy stays within 5 percent of the grid optimum") {
  // Sample-derived mixtures with occasional far outliers, built through the
  // production stats path.
  Rng rng(stream_seed(99, "histograms"));
  std::vector<float> samples;
  for (int trial = 0; trial < 50; ++trial) {
    const int modes = 1 + static_cast<int>(rng.next_below(4));
    samples.clear();
    double max_sigma = 0.0;
    double mean0 = 0.0;
    for (int m = 0; m < modes; ++m) {
      const double mu = rng.next_double() * 10.0 - 5.0;
      const double sigma = 0.05 + rng.next_double() * 2.0;
      if (m == 0) mean0 = mu;
      max_sigma = std::max(max_sigma, sigma);
      for (int i = 0; i < 4096 / modes; ++i) {
        samples.push_back(static_cast<float>(mu + sigma * rng.next_normal()));
      }
    }
    if (rng.next_below(2) == 0) {
      const int outliers = 1 + static_cast<int>(rng.next_below(3));
      for (int i = 0; i < outliers; ++i) {
        const double scale = 5.0 + rng.next_double() * 15.0;
        const double sign = rng.next_below(2) == 0 ? 1.0 : -1.0;
        samples.push_back(static_cast<float>(mean0 + sign * scale * max_sigma));
      }
    }
    const TensorStats st = stats_from_values(samples.data(), samples.size());
    const SearchResult g = greedy_search_qparams(st);
    const SearchResult b = brute_force_qparams(st);
    CHECK(b.loss <= g.loss + 1e-12);
    CHECK(g.loss <= 1.05 * b.loss + 1e-12);
  }
}

TEST_CASE("degenerate stats fall back to the full-range parameters") {
  const float fives[] = {5.0f, 5.0f, 5.0f};
  const TensorStats st = stats_from_values(fives, 3);
  const SearchResult g = greedy_search_qparams(st);
  CHECK(g.loss == 0.0);
  CHECK(g.qparams == choose_qparams_from_range(5.0, 5.0));
  const SearchResult b = brute_force_qparams(st);
  CHECK(b.qparams == g.qparams);

  TensorStats empty;
  empty.histogram.assign(kHistogramBins, 0);
  const SearchResult e = greedy_search_qparams(empty);
  CHECK(e.qparams == choose_qparams_from_range(0.0, 0.0));
}

TEST_CASE("build_quantized_graph rejects unfolded BN and missing stats") {
  const GeneratedData d = tiny_data();
  const Graph g = init_weights(build_baseline_mini(tiny_arch()), 5);
  const CalibrationRecord rec = collect_stats(g, calibration_subset(d.train, 1));
  CHECK_THROWS_WITH_AS(build_quantized_graph(g, rec),
                       doctest::Contains("fold batch_norm"), DataError);

  CHECK_THROWS_WITH_AS(build_quantized_graph(g, CalibrationRecord{}),
                       doctest::Contains("missing calibration stats for input"), DataError);
}

TEST_CASE("build_quantized_graph wires qparams through the chain") {
  Graph g;
  g.input_shape = Shape{1, 1, 1, 2};
  DenseLayer head;
  head.weights = TensorF32(Shape{1, 1, 2, 2}, {1.0f, -0.5f, 0.25f, 0.75f});
  head.bias = {1.0f, -3.0f};
  g.layers.emplace_back(std::move(head));
  g.layers.emplace_back(ActivationLayer{ActivationKind::kRelu});
  g.layers.emplace_back(SoftmaxLayer{});

  CalibrationRecord rec;
  const float input_vals[] = {0.0f, 0.25f, 0.5f, 1.0f};
  const float logit_vals[] = {-4.0f, -1.0f, 0.0f, 2.0f, 5.0f};
  rec.tensors["input"] = stats_from_values(input_vals, 4);
  rec.tensors["weight:0"] =
      stats_from_tensor(std::get<DenseLayer>(g.layers[0]).weights);
  rec.tensors["layer:0"] = stats_from_values(logit_vals, 5);

  const QuantizedGraph qg = build_quantized_graph(g, rec);
  REQUIRE(qg.layers.size() == 3);
  REQUIRE(qg.output_qparams.size() == 3);
  CHECK(std::holds_alternative<QDenseLayer>(qg.layers[0]));
  CHECK(std::holds_alternative<QActivationLayer>(qg.layers[1]));
  CHECK(std::holds_alternative<QSoftmaxLayer>(qg.layers[2]));

  // Activations and softmax inherit the producer's output params.
  CHECK(qg.output_qparams[1] == qg.output_qparams[0]);
  CHECK(qg.output_qparams[2] == qg.output_qparams[0]);

  // Bias codes sit at exactly delta_in * delta_w.
  const auto& qd = std::get<QDenseLayer>(qg.layers[0]);
  const double scale = qg.input_qparams.delta * qd.weights.qparams.delta;
  CHECK(qd.bias[0] == static_cast<std::int32_t>(std::round(1.0 / scale)));
  CHECK(qd.bias[1] == static_cast<std::int32_t>(std::round(-3.0 / scale)));

  // Weight bytes round-trip through the chosen params within half a step.
  const auto& w = std::get<DenseLayer>(g.layers[0]).weights;
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    const float deq = dequantize_value(qd.weights.data[i], qd.weights.qparams);
    CHECK(std::fabs(deq - w.data[i]) <= qd.weights.qparams.delta / 2 + 1e-7);
  }
}

TEST_CASE("all-zero weights quantize to the zero point") {
  Graph g;
  g.input_shape = Shape{1, 1, 1, 2};
  DenseLayer head;
  head.weights = TensorF32(Shape{1, 1, 2, 2}, 0.0f);
  head.bias = {0.0f, 0.0f};
  g.layers.emplace_back(std::move(head));
  g.layers.emplace_back(SoftmaxLayer{});

  CalibrationRecord rec;
  const float input_vals[] = {0.0f, 1.0f};
  const float logit_vals[] = {0.0f, 0.0f};
  rec.tensors["input"] = stats_from_values(input_vals, 2);
  rec.tensors["weight:0"] = stats_from_tensor(std::get<DenseLayer>(g.layers[0]).weights);
  rec.tensors["layer:0"] = stats_from_values(logit_vals, 2);

  const QuantizedGraph qg = build_quantized_graph(g, rec);
  const auto& qd = std::get<QDenseLayer>(qg.layers[0]);
  for (auto byte : qd.weights.data) {
    CHECK(static_cast<int>(byte) == qd.weights.qparams.zero_point);
  }
}

TEST_CASE("accumulator bound guards the i32 budget") {
  Graph g;
  g.input_shape = Shape{1, 4, 4, 3670};  // 3*3*3670 = 33030 terms > 2^31/255^2
  Conv2DLayer conv;
  conv.stride = 1;
  conv.padding = Padding::kSame;
  conv.weights = TensorF32(Shape{3, 3, 3670, 1});
  g.layers.emplace_back(std::move(conv));
  g.layers.emplace_back(GlobalAvgPoolLayer{});

  CalibrationRecord rec;
  const float input_vals[] = {0.0f, 1.0f};
  rec.tensors["input"] = stats_from_values(input_vals, 2);
  CHECK_THROWS_WITH_AS(build_quantized_graph(g, rec),
                       doctest::Contains("accumulator bound"), DataError);
}
