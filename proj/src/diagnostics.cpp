// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/int8_engine.hpp"
#include "sepquant/transforms.hpp"

namespace sepquant {

namespace {

float median_of(std::vector<float> v) {
  if (v.empty()) throw InternalError("median of empty vector");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  float m = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1,
                     v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5f * (m + v[mid - 1]);
  }
  return m;
}

SqnrValue sqnr_from_power(double signal, double error) {
  SqnrValue v;
  if (signal <= 0.0) {
    v.tag = SqnrTag::kZeroSignal;
  } else if (error <= 0.0) {
    v.tag = SqnrTag::kExact;
    v.db = std::numeric_limits<double>::infinity();
  } else {
    v.db = 10.0 * std::log10(signal / error);
  }
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const TensorF32* float_layer_weights(const LayerSpec& layer, int* channel_axis) {
  if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
    *channel_axis = 3;
    return &conv->weights;
  }
  if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
    *channel_axis = 2;
    return &dw->weights;
  }
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    *channel_axis = 3;
    return &d->weights;
  }
  return nullptr;
}

const TensorU8* quant_layer_weights(const QLayerSpec& layer) {
  if (const auto* conv = std::get_if<QConv2DLayer>(&layer)) return &conv->weights;
  if (const auto* dw = std::get_if<QDepthwiseConv2DLayer>(&layer)) return &dw->weights;
  if (const auto* d = std::get_if<QDenseLayer>(&layer)) return &d->weights;
  return nullptr;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  return out;
}

}  // namespace

std::vector<AlphaReport> bn_alpha(const Graph& g, double flag_ratio) {
  if (!(flag_ratio > 0.0)) throw DataError("flag ratio must be positive");
  std::vector<AlphaReport> reports;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto* bn = std::get_if<BatchNormLayer>(&g.layers[i]);
    if (!bn) continue;
    AlphaReport r;
    r.bn_layer_index = i;
    r.conv_layer_index = i == 0 ? 0 : i - 1;
    r.alpha = bn_channel_alpha(*bn);
    r.median_alpha = median_of(r.alpha);
    const double cut = flag_ratio * static_cast<double>(r.median_alpha);
    for (std::size_t c = 0; c < r.alpha.size(); ++c) {
      if (static_cast<double>(r.alpha[c]) > cut) r.flagged.push_back(static_cast<int>(c));
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<SqnrValue> weight_channel_sqnr(const TensorF32& reference, const TensorU8& quantized,
                                           int channel_axis) {
  if (channel_axis < 0 || channel_axis > 3) throw DataError("channel axis must be in [0, 3]");
  if (!(reference.shape == quantized.shape)) {
    throw DataError("weight tensors have different shapes");
  }
  const std::int64_t channels = reference.shape.dims[static_cast<std::size_t>(channel_axis)];
  std::vector<double> signal(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> error(static_cast<std::size_t>(channels), 0.0);

  const Shape& s = reference.shape;
  std::size_t flat = 0;
  for (std::int64_t a = 0; a < s.dims[0]; ++a) {
    for (std::int64_t b = 0; b < s.dims[1]; ++b) {
      for (std::int64_t c = 0; c < s.dims[2]; ++c) {
        for (std::int64_t d = 0; d < s.dims[3]; ++d, ++flat) {
          const std::int64_t idx[4] = {a, b, c, d};
          const std::size_t ch = static_cast<std::size_t>(idx[channel_axis]);
          const double ref = reference.data[flat];
          const double deq = dequantize_value(quantized.data[flat], quantized.qparams);
          signal[ch] += ref * ref;
          error[ch] += (ref - deq) * (ref - deq);
        }
      }
    }
  }
  std::vector<SqnrValue> out(static_cast<std::size_t>(channels));
  for (std::size_t ch = 0; ch < out.size(); ++ch) {
    out[ch] = sqnr_from_power(signal[ch], error[ch]);
  }
  return out;
}

DegradationReport layer_degradation(const Graph& g, const QuantizedGraph& qg,
                                    const Dataset& probe, double threshold_db,
                                    RequantMode mode) {
  if (g.layers.size() != qg.layers.size()) {
    throw DataError("float and quantized graphs have different layer counts");
  }
  if (probe.size() == 0) throw DataError("empty probe set");

  DegradationReport report;
  report.threshold_db = threshold_db;
  const std::size_t layers = g.layers.size();
  std::vector<double> signal(layers, 0.0);
  std::vector<double> error(layers, 0.0);

  std::int64_t float_correct = 0, int8_correct = 0, agree = 0;
  ActivationTrace ftrace;
  std::vector<TensorF32> qtrace;
  for (std::int64_t i = 0; i < probe.size(); ++i) {
    const TensorF32 img = image_at(probe, i);
    const TensorF32 probs = forward(g, img, &ftrace);
    const QuantForwardResult qr = forward_quantized(qg, img, mode, &qtrace);
    if (ftrace.outputs.size() != layers || qtrace.size() != layers) {
      throw InternalError("trace length does not match layer count");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const TensorF32& ref = ftrace.outputs[l];
      const TensorF32& got = qtrace[l];
      if (!(ref.shape == got.shape)) throw DataError("layer output shapes diverge");
      for (std::size_t k = 0; k < ref.data.size(); ++k) {
        const double r = ref.data[k];
        const double d = r - static_cast<double>(got.data[k]);
        signal[l] += r * r;
        error[l] += d * d;
      }
    }
    const int flabel = argmax_class(probs);
    const int truth = probe.labels[static_cast<std::size_t>(i)];
    if (flabel == truth) ++float_correct;
    if (qr.label == truth) ++int8_correct;
    if (flabel == qr.label) ++agree;
  }

  report.layer_sqnr.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    report.layer_sqnr[l] = sqnr_from_power(signal[l], error[l]);
    if (report.first_low_layer < 0 && report.layer_sqnr[l].tag == SqnrTag::kNormal &&
        report.layer_sqnr[l].db < threshold_db) {
      report.first_low_layer = static_cast<int>(l);
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    int axis = 3;
    const TensorF32* fw = float_layer_weights(g.layers[l], &axis);
    const TensorU8* qw = quant_layer_weights(qg.layers[l]);
    if ((fw == nullptr) != (qw == nullptr)) {
      throw DataError("weighted layers do not line up between graphs");
    }
    if (fw == nullptr) continue;
    WeightSqnrReport wr;
    wr.layer_index = l;
    wr.channel_sqnr = weight_channel_sqnr(*fw, *qw, axis);
    report.weight_sqnr.push_back(std::move(wr));
  }

  const auto n = static_cast<double>(probe.size());
  report.float_top1 = static_cast<double>(float_correct) / n;
  report.int8_top1 = static_cast<double>(int8_correct) / n;
  report.top1_agreement = static_cast<double>(agree) / n;
  return report;
}

std::string sqnr_csv_value(const SqnrValue& v) {
  switch (v.tag) {
    case SqnrTag::kExact: return "inf";
    case SqnrTag::kZeroSignal: return "nan";
    default: return format_double(v.db);
  }
}

void export_alpha_csv(const AlphaReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "channel_index,alpha\n";
  for (std::size_t c = 0; c < report.alpha.size(); ++c) {
    out << c << "," << format_double(static_cast<double>(report.alpha[c])) << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

void export_degradation_csv(const DegradationReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "layer,sqnr_db\n";
  for (std::size_t l = 0; l < report.layer_sqnr.size(); ++l) {
    out << l << "," << sqnr_csv_value(report.layer_sqnr[l]) << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace sepquant
