// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"

namespace sepquant {

namespace {

void histogram_add(TensorStats& st, const float* values, std::size_t count) {
  const double range = st.max - st.min;
  if (range <= 0.0) {
    st.histogram[0] += count;
    st.sample_count += count;
    return;
  }
  const double scale = static_cast<double>(kHistogramBins) / range;
  for (std::size_t i = 0; i < count; ++i) {
    auto bin = static_cast<std::int64_t>((static_cast<double>(values[i]) - st.min) * scale);
    bin = std::clamp<std::int64_t>(bin, 0, kHistogramBins - 1);
    st.histogram[static_cast<std::size_t>(bin)] += 1;
  }
  st.sample_count += count;
}

const TensorF32* layer_weights(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) return &conv->weights;
  if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) return &dw->weights;
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return &d->weights;
  return nullptr;
}

double grid_step(const TensorStats& stats) {
  return (stats.max - stats.min) / static_cast<double>(kClipGridSteps);
}

ClipLoss loss_at(const TensorStats& stats, int lo_idx, int hi_idx, double step) {
  return loss_for_clip(stats, stats.min + lo_idx * step, stats.max - hi_idx * step);
}

SearchResult make_result(const TensorStats& stats, int lo_idx, int hi_idx, double step,
                         double loss) {
  SearchResult r;
  r.clip_min = stats.min + lo_idx * step;
  r.clip_max = stats.max - hi_idx * step;
  r.qparams = choose_qparams_from_range(r.clip_min, r.clip_max);
  r.loss = loss;
  return r;
}

bool degenerate_stats(const TensorStats& stats) {
  return stats.sample_count == 0 || !(stats.max > stats.min);
}

SearchResult degenerate_result(const TensorStats& stats) {
  SearchResult r;
  r.clip_min = stats.min;
  r.clip_max = stats.max;
  r.qparams = choose_qparams_from_range(stats.min, stats.max);
  r.loss = 0.0;
  return r;
}

}  // namespace

TensorStats stats_from_values(const float* values, std::size_t count) {
  if (count == 0) throw DataError("cannot build statistics from zero values");
  TensorStats st;
  MinMax mm;
  for (std::size_t i = 0; i < count; ++i) mm.add(values[i]);
  st.min = mm.min;
  st.max = mm.max;
  st.histogram.assign(kHistogramBins, 0);
  histogram_add(st, values, count);
  return st;
}

TensorStats stats_from_tensor(const TensorF32& t) {
  return stats_from_values(t.data.data(), t.data.size());
}

void MinMax::add(float v) {
  if (!std::isfinite(v)) throw DataError("non-finite value in calibration statistics");
  if (!seen) {
    min = max = v;
    seen = true;
    return;
  }
  min = std::min(min, static_cast<double>(v));
  max = std::max(max, static_cast<double>(v));
}

void MinMax::merge(const MinMax& other) {
  if (!other.seen) return;
  if (!seen) {
    *this = other;
    return;
  }
  min = std::min(min, other.min);
  max = std::max(max, other.max);
}

std::string layer_stats_key(std::size_t layer_index) {
  return "layer:" + std::to_string(layer_index);
}

std::string weight_stats_key(std::size_t layer_index) {
  return "weight:" + std::to_string(layer_index);
}

CalibrationRecord collect_stats(const Graph& g, const Dataset& calib_set) {
  if (calib_set.size() == 0) throw DataError("empty calibration set");
  infer_shapes(g);

  CalibrationRecord rec;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (const TensorF32* w = layer_weights(g.layers[i])) {
      rec.tensors[weight_stats_key(i)] = stats_from_tensor(*w);
    }
  }

  std::map<std::string, MinMax> ranges;
  ActivationTrace trace;
  for (std::int64_t i = 0; i < calib_set.size(); ++i) {
    const TensorF32 img = image_at(calib_set, i);
    forward(g, img, &trace);
    for (float v : img.data) ranges["input"].add(v);
    for (std::size_t l = 0; l < trace.outputs.size(); ++l) {
      auto& mm = ranges[layer_stats_key(l)];
      for (float v : trace.outputs[l].data) mm.add(v);
    }
  }

  for (const auto& [key, mm] : ranges) {
    TensorStats st;
    st.min = mm.min;
    st.max = mm.max;
    st.histogram.assign(kHistogramBins, 0);
    rec.tensors[key] = std::move(st);
  }

  for (std::int64_t i = 0; i < calib_set.size(); ++i) {
    const TensorF32 img = image_at(calib_set, i);
    forward(g, img, &trace);
    histogram_add(rec.tensors["input"], img.data.data(), img.data.size());
    for (std::size_t l = 0; l < trace.outputs.size(); ++l) {
      auto& st = rec.tensors[layer_stats_key(l)];
      histogram_add(st, trace.outputs[l].data.data(), trace.outputs[l].data.size());
    }
  }
  return rec;
}

Dataset calibration_subset(const Dataset& d, int per_class) {
  if (per_class < 1) throw DataError("calibration needs at least one image per class");
  const int classes = d.classes;
  std::vector<std::int64_t> picked;
  std::vector<int> have(static_cast<std::size_t>(classes), 0);
  for (std::int64_t i = 0; i < d.size(); ++i) {
    const int label = d.labels[static_cast<std::size_t>(i)];
    if (have[static_cast<std::size_t>(label)] < per_class) {
      ++have[static_cast<std::size_t>(label)];
      picked.push_back(i);
    }
  }
  for (int c = 0; c < classes; ++c) {
    if (have[static_cast<std::size_t>(c)] == 0) {
      throw DataError("calibration set has no image of class " + std::to_string(c));
    }
  }
  const Shape& s = d.images.shape;
  const std::size_t pixels = static_cast<std::size_t>(s.h() * s.w() * s.c());
  Dataset out;
  out.split = d.split;
  out.classes = classes;
  out.images = TensorF32(Shape{static_cast<std::int64_t>(picked.size()), s.h(), s.w(), s.c()});
  out.labels.reserve(picked.size());
  for (std::size_t k = 0; k < picked.size(); ++k) {
    std::copy_n(d.images.data.begin() + static_cast<std::ptrdiff_t>(picked[k]) *
                    static_cast<std::ptrdiff_t>(pixels),
                pixels,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(k * pixels));
    out.labels.push_back(d.labels[static_cast<std::size_t>(picked[k])]);
  }
  return out;
}

ClipLoss loss_for_clip(const TensorStats& stats, double clip_min, double clip_max) {
  if (!(clip_min < clip_max)) throw DataError("degenerate clip range");
  if (stats.histogram.size() != static_cast<std::size_t>(kHistogramBins)) {
    throw DataError("histogram has the wrong bin count");
  }
  const QuantParams q = choose_qparams_from_range(clip_min, clip_max);
  const double lo = q.delta * (0.0 - q.zero_point);
  const double hi = q.delta * (255.0 - q.zero_point);
  const double bin_width = (stats.max - stats.min) / static_cast<double>(kHistogramBins);
  const double inv_delta = 1.0 / q.delta;
  ClipLoss loss;
  for (int b = 0; b < kHistogramBins; ++b) {
    const auto h = static_cast<double>(stats.histogram[static_cast<std::size_t>(b)]);
    if (h == 0.0) continue;
    const double center = stats.min + (b + 0.5) * bin_width;
    double code = std::round(center * inv_delta) + q.zero_point;
    code = std::clamp(code, 0.0, 255.0);
    const double err = q.delta * (code - q.zero_point) - center;
    const double term = h * err * err;
    if (center < lo || center > hi) {
      loss.saturation += term;
    } else {
      loss.quantization += term;
    }
  }
  return loss;
}

SearchResult greedy_search_qparams(const TensorStats& stats) {
  if (degenerate_stats(stats)) return degenerate_result(stats);
  const double step = grid_step(stats);
  int lo = 0, hi = 0;
  double best = loss_at(stats, lo, hi, step).total();
  bool moved = true;
  while (moved) {
    moved = false;
    for (int j = 0; j < kClipGridSteps; ++j) {
      if (lo + j >= kClipGridSteps || j == hi) continue;
      const double l = loss_at(stats, lo, j, step).total();
      if (l < best) {
        best = l;
        hi = j;
        moved = true;
      }
    }
    for (int i = 0; i < kClipGridSteps; ++i) {
      if (i + hi >= kClipGridSteps || i == lo) continue;
      const double l = loss_at(stats, i, hi, step).total();
      if (l < best) {
        best = l;
        lo = i;
        moved = true;
      }
    }
  }
  return make_result(stats, lo, hi, step, best);
}

SearchResult brute_force_qparams(const TensorStats& stats) {
  if (degenerate_stats(stats)) return degenerate_result(stats);
  const double step = grid_step(stats);
  int best_lo = 0, best_hi = 0;
  double best = loss_at(stats, 0, 0, step).total();
  for (int i = 0; i < kClipGridSteps; ++i) {
    for (int j = 0; i + j < kClipGridSteps; ++j) {
      if (i == 0 && j == 0) continue;
      const double l = loss_at(stats, i, j, step).total();
      if (l < best) {
        best = l;
        best_lo = i;
        best_hi = j;
      }
    }
  }
  return make_result(stats, best_lo, best_hi, step, best);
}

QuantizedGraph build_quantized_graph(const Graph& g, const CalibrationRecord& rec) {
  infer_shapes(g);
  QuantizedGraph qg;
  qg.input_shape = g.input_shape;
  qg.meta = g.meta;

  auto stats_for = [&rec](const std::string& key) -> const TensorStats& {
    const auto it = rec.tensors.find(key);
    if (it == rec.tensors.end()) throw DataError("missing calibration stats for " + key);
    return it->second;
  };

  auto check_accumulator = [](std::size_t idx, std::int64_t terms) {
    if (terms * 255LL * 255LL >= (1LL << 31)) {
      throw DataError("layer " + std::to_string(idx) +
                      ": accumulator bound exceeded (kernel*channels too large for i32)");
    }
  };

  auto quantize_bias = [](const std::vector<float>& b, double delta_in, double delta_w) {
    const double scale = delta_in * delta_w;
    std::vector<std::int32_t> out(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double v = std::round(static_cast<double>(b[i]) / scale);
      if (v < static_cast<double>(std::numeric_limits<std::int32_t>::min()) ||
          v > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
        throw DataError("quantized bias exceeds the i32 range");
      }
      out[i] = static_cast<std::int32_t>(v);
    }
    return out;
  };

  qg.input_qparams = greedy_search_qparams(stats_for("input")).qparams;
  QuantParams cur = qg.input_qparams;

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& layer = g.layers[i];
    if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      const Shape& ws = conv->weights.shape;
      check_accumulator(i, ws.dims[0] * ws.dims[1] * ws.dims[2]);
      QConv2DLayer ql;
      ql.stride = conv->stride;
      ql.padding = conv->padding;
      const QuantParams wq = greedy_search_qparams(stats_for(weight_stats_key(i))).qparams;
      ql.weights = quantize_tensor(conv->weights, wq);
      if (conv->bias) ql.bias = quantize_bias(*conv->bias, cur.delta, wq.delta);
      const QuantParams oq = greedy_search_qparams(stats_for(layer_stats_key(i))).qparams;
      qg.layers.emplace_back(std::move(ql));
      qg.output_qparams.push_back(oq);
      cur = oq;
    } else if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      const Shape& ws = dw->weights.shape;
      check_accumulator(i, ws.dims[0] * ws.dims[1]);
      QDepthwiseConv2DLayer ql;
      ql.stride = dw->stride;
      ql.padding = dw->padding;
      const QuantParams wq = greedy_search_qparams(stats_for(weight_stats_key(i))).qparams;
      ql.weights = quantize_tensor(dw->weights, wq);
      if (dw->bias) ql.bias = quantize_bias(*dw->bias, cur.delta, wq.delta);
      const QuantParams oq = greedy_search_qparams(stats_for(layer_stats_key(i))).qparams;
      qg.layers.emplace_back(std::move(ql));
      qg.output_qparams.push_back(oq);
      cur = oq;
    } else if (std::holds_alternative<BatchNormLayer>(layer)) {
      throw DataError("layer " + std::to_string(i) +
                      ": fold batch_norm before quantization");
    } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
      qg.layers.emplace_back(QActivationLayer{act->kind});
      qg.output_qparams.push_back(cur);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      qg.layers.emplace_back(QGlobalAvgPoolLayer{});
      const QuantParams oq = greedy_search_qparams(stats_for(layer_stats_key(i))).qparams;
      qg.output_qparams.push_back(oq);
      cur = oq;
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      check_accumulator(i, d->weights.shape.dims[2]);
      QDenseLayer ql;
      const QuantParams wq = greedy_search_qparams(stats_for(weight_stats_key(i))).qparams;
      ql.weights = quantize_tensor(d->weights, wq);
      ql.bias = quantize_bias(d->bias, cur.delta, wq.delta);
      const QuantParams oq = greedy_search_qparams(stats_for(layer_stats_key(i))).qparams;
      qg.layers.emplace_back(std::move(ql));
      qg.output_qparams.push_back(oq);
      cur = oq;
    } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
      qg.layers.emplace_back(QSoftmaxLayer{});
      qg.output_qparams.push_back(cur);
    } else {
      throw InternalError("build_quantized_graph: unknown layer kind");
    }
  }
  return qg;
}

}  // namespace sepquant
