// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/int8_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "conv_util.hpp"
#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"

namespace sepquant {

namespace {

struct Requant {
  RequantMode mode;
  double m;
  FixedMultiplier fm;
  int zp;

  Requant(double m_, int zp_, RequantMode mode_) : mode(mode_), m(m_), zp(zp_) {
    if (mode == RequantMode::kFixedMultiplier) fm = quantize_multiplier(m_);
  }

  std::uint8_t operator()(std::int32_t acc) const {
    if (mode == RequantMode::kFloatMultiplier) {
      const double r = std::round(static_cast<double>(acc) * m) + zp;
      return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
    }
    const std::int64_t v = static_cast<std::int64_t>(apply_fixed_multiplier(acc, fm)) + zp;
    return static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
  }
};

void check_qparams(const QuantParams& q, const char* what) {
  if (!q.valid()) throw DataError(std::string(what) + ": invalid quantization params");
}

std::int32_t bias_at(const std::vector<std::int32_t>& bias, std::size_t i) {
  return bias.empty() ? 0 : bias[i];
}

void check_bias(const std::vector<std::int32_t>& bias, std::int64_t channels, const char* what) {
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != channels) {
    throw DataError(std::string(what) + ": bias length does not match output channels");
  }
}

}  // namespace

FixedMultiplier quantize_multiplier(double m) {
  if (!std::isfinite(m) || m <= 0.0) {
    throw DataError("requantization multiplier must be positive and finite");
  }
  int exp = 0;
  const double frac = std::frexp(m, &exp);
  auto q = static_cast<std::int64_t>(std::round(frac * static_cast<double>(1LL << 31)));
  if (q == (1LL << 31)) {
    q >>= 1;
    ++exp;
  }
  const int right_shift = 31 - exp;
  if (right_shift < 0) throw DataError("requantization multiplier too large for fixed point");
  return FixedMultiplier{static_cast<std::int32_t>(q), right_shift};
}

std::int32_t apply_fixed_multiplier(std::int32_t value, FixedMultiplier fm) {
  const std::int64_t prod = static_cast<std::int64_t>(value) * fm.multiplier;
  std::int64_t rounded;
  if (fm.right_shift == 0) {
    rounded = prod;
  } else if (fm.right_shift > 62) {
    rounded = 0;
  } else {
    const std::int64_t half = 1LL << (fm.right_shift - 1);
    rounded = prod >= 0 ? (prod + half) >> fm.right_shift
                        : -((-prod + half) >> fm.right_shift);
  }
  rounded = std::clamp<std::int64_t>(rounded, std::numeric_limits<std::int32_t>::min(),
                                     std::numeric_limits<std::int32_t>::max());
  return static_cast<std::int32_t>(rounded);
}

std::uint8_t requantize(std::int32_t acc, double m, int zero_point, RequantMode mode) {
  return Requant(m, zero_point, mode)(acc);
}

TensorU8 qconv2d(const TensorU8& input, const TensorU8& weights,
                 const std::vector<std::int32_t>& bias, int stride, Padding padding,
                 const QuantParams& out_qparams, RequantMode mode) {
  const Shape& is = input.shape;
  const Shape& ws = weights.shape;
  if (ws.dims[2] != is.c()) throw DataError("qconv2d: channel mismatch");
  check_bias(bias, ws.dims[3], "qconv2d");
  check_qparams(input.qparams, "qconv2d input");
  check_qparams(weights.qparams, "qconv2d weights");
  check_qparams(out_qparams, "qconv2d output");

  const ConvGeometry geo = conv_geometry(is, ws.dims[0], ws.dims[1], stride, padding);
  TensorU8 out(Shape{is.n(), geo.out_h, geo.out_w, ws.dims[3]}, out_qparams);
  const Requant rq(input.qparams.delta * weights.qparams.delta / out_qparams.delta,
                   out_qparams.zero_point, mode);
  const int zin = input.qparams.zero_point;
  const int zw = weights.qparams.zero_point;

  for (std::int64_t n = 0; n < is.n(); ++n) {
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox) {
        for (std::int64_t oc = 0; oc < ws.dims[3]; ++oc) {
          std::int32_t acc = bias_at(bias, static_cast<std::size_t>(oc));
          for (std::int64_t ky = 0; ky < ws.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= is.h()) continue;
            for (std::int64_t kx = 0; kx < ws.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= is.w()) continue;
              for (std::int64_t ic = 0; ic < is.c(); ++ic) {
                const std::int32_t xv = static_cast<std::int32_t>(input.at(n, iy, ix, ic)) - zin;
                const std::int32_t wv =
                    static_cast<std::int32_t>(weights.at(ky, kx, ic, oc)) - zw;
                acc += xv * wv;
              }
            }
          }
          out.at(n, oy, ox, oc) = rq(acc);
        }
      }
    }
  }
  return out;
}

TensorU8 qdepthwise_conv2d(const TensorU8& input, const TensorU8& weights,
                           const std::vector<std::int32_t>& bias, int stride, Padding padding,
                           const QuantParams& out_qparams, RequantMode mode) {
  const Shape& is = input.shape;
  const Shape& ws = weights.shape;
  if (ws.dims[3] != 1) throw DataError("qdepthwise_conv2d: weights must be (kh, kw, c, 1)");
  if (ws.dims[2] != is.c()) throw DataError("qdepthwise_conv2d: channel mismatch");
  check_bias(bias, is.c(), "qdepthwise_conv2d");
  check_qparams(input.qparams, "qdepthwise_conv2d input");
  check_qparams(weights.qparams, "qdepthwise_conv2d weights");
  check_qparams(out_qparams, "qdepthwise_conv2d output");

  const ConvGeometry geo = conv_geometry(is, ws.dims[0], ws.dims[1], stride, padding);
  TensorU8 out(Shape{is.n(), geo.out_h, geo.out_w, is.c()}, out_qparams);
  const Requant rq(input.qparams.delta * weights.qparams.delta / out_qparams.delta,
                   out_qparams.zero_point, mode);
  const int zin = input.qparams.zero_point;
  const int zw = weights.qparams.zero_point;

  for (std::int64_t n = 0; n < is.n(); ++n) {
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox) {
        for (std::int64_t c = 0; c < is.c(); ++c) {
          std::int32_t acc = bias_at(bias, static_cast<std::size_t>(c));
          for (std::int64_t ky = 0; ky < ws.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= is.h()) continue;
            for (std::int64_t kx = 0; kx < ws.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= is.w()) continue;
              const std::int32_t xv = static_cast<std::int32_t>(input.at(n, iy, ix, c)) - zin;
              const std::int32_t wv = static_cast<std::int32_t>(weights.at(ky, kx, c, 0)) - zw;
              acc += xv * wv;
            }
          }
          out.at(n, oy, ox, c) = rq(acc);
        }
      }
    }
  }
  return out;
}

TensorU8 qrelu(const TensorU8& input) {
  check_qparams(input.qparams, "qrelu input");
  TensorU8 out = input;
  const auto lo = static_cast<std::uint8_t>(input.qparams.zero_point);
  for (auto& v : out.data) v = std::max(v, lo);
  return out;
}

TensorU8 qrelu6(const TensorU8& input) {
  check_qparams(input.qparams, "qrelu6 input");
  TensorU8 out = input;
  const auto lo = static_cast<std::uint8_t>(input.qparams.zero_point);
  const std::uint8_t hi = std::max(lo, quantize_value(6.0f, input.qparams));
  for (auto& v : out.data) v = std::clamp(v, lo, hi);
  return out;
}

TensorU8 qglobal_avg_pool(const TensorU8& input, const QuantParams& out_qparams,
                          RequantMode mode) {
  check_qparams(input.qparams, "qglobal_avg_pool input");
  check_qparams(out_qparams, "qglobal_avg_pool output");
  const Shape& is = input.shape;
  const std::int64_t count = is.h() * is.w();
  if (count <= 0) throw DataError("qglobal_avg_pool: empty spatial extent");

  TensorU8 out(Shape{is.n(), 1, 1, is.c()}, out_qparams);
  const Requant rq(input.qparams.delta / (static_cast<double>(count) * out_qparams.delta),
                   out_qparams.zero_point, mode);
  const int zin = input.qparams.zero_point;
  for (std::int64_t n = 0; n < is.n(); ++n) {
    for (std::int64_t c = 0; c < is.c(); ++c) {
      std::int32_t acc = 0;
      for (std::int64_t y = 0; y < is.h(); ++y) {
        for (std::int64_t x = 0; x < is.w(); ++x) {
          acc += static_cast<std::int32_t>(input.at(n, y, x, c)) - zin;
        }
      }
      out.at(n, 0, 0, c) = rq(acc);
    }
  }
  return out;
}

TensorU8 qdense(const TensorU8& input, const TensorU8& weights,
                const std::vector<std::int32_t>& bias, const QuantParams& out_qparams,
                RequantMode mode) {
  const Shape& is = input.shape;
  const Shape& ws = weights.shape;
  if (is.h() != 1 || is.w() != 1) throw DataError("qdense: input must be (n, 1, 1, c)");
  if (ws.dims[0] != 1 || ws.dims[1] != 1 || ws.dims[2] != is.c()) {
    throw DataError("qdense: weights must be (1, 1, in, out) with matching input width");
  }
  check_bias(bias, ws.dims[3], "qdense");
  check_qparams(input.qparams, "qdense input");
  check_qparams(weights.qparams, "qdense weights");
  check_qparams(out_qparams, "qdense output");

  TensorU8 out(Shape{is.n(), 1, 1, ws.dims[3]}, out_qparams);
  const Requant rq(input.qparams.delta * weights.qparams.delta / out_qparams.delta,
                   out_qparams.zero_point, mode);
  const int zin = input.qparams.zero_point;
  const int zw = weights.qparams.zero_point;
  for (std::int64_t n = 0; n < is.n(); ++n) {
    for (std::int64_t oc = 0; oc < ws.dims[3]; ++oc) {
      std::int32_t acc = bias_at(bias, static_cast<std::size_t>(oc));
      for (std::int64_t ic = 0; ic < is.c(); ++ic) {
        acc += (static_cast<std::int32_t>(input.at(n, 0, 0, ic)) - zin) *
               (static_cast<std::int32_t>(weights.at(0, 0, ic, oc)) - zw);
      }
      out.at(n, 0, 0, oc) = rq(acc);
    }
  }
  return out;
}

QuantForwardResult forward_quantized(const QuantizedGraph& qg, const TensorF32& input,
                                     RequantMode mode, std::vector<TensorF32>* trace) {
  if (qg.layers.size() != qg.output_qparams.size()) {
    throw InternalError("quantized graph has mismatched layer and qparam counts");
  }
  const Shape& expect = qg.input_shape;
  const Shape& got = input.shape;
  if (got.h() != expect.h() || got.w() != expect.w() || got.c() != expect.c()) {
    throw DataError("forward_quantized: input shape mismatch");
  }
  if (!input.all_finite()) throw DataError("forward_quantized: non-finite input");
  if (trace) trace->clear();

  TensorU8 cur = quantize_tensor(input, qg.input_qparams);
  QuantForwardResult result;
  bool have_probs = false;

  for (std::size_t i = 0; i < qg.layers.size(); ++i) {
    if (have_probs) throw DataError("softmax must be the final layer");
    const QLayerSpec& layer = qg.layers[i];
    const QuantParams& oq = qg.output_qparams[i];
    if (const auto* conv = std::get_if<QConv2DLayer>(&layer)) {
      cur = qconv2d(cur, conv->weights, conv->bias, conv->stride, conv->padding, oq, mode);
    } else if (const auto* dw = std::get_if<QDepthwiseConv2DLayer>(&layer)) {
      cur = qdepthwise_conv2d(cur, dw->weights, dw->bias, dw->stride, dw->padding, oq, mode);
    } else if (const auto* act = std::get_if<QActivationLayer>(&layer)) {
      cur = act->kind == ActivationKind::kRelu ? qrelu(cur) : qrelu6(cur);
    } else if (std::holds_alternative<QGlobalAvgPoolLayer>(layer)) {
      cur = qglobal_avg_pool(cur, oq, mode);
    } else if (const auto* d = std::get_if<QDenseLayer>(&layer)) {
      cur = qdense(cur, d->weights, d->bias, oq, mode);
    } else if (std::holds_alternative<QSoftmaxLayer>(layer)) {
      result.probs = softmax(dequantize_tensor(cur));
      have_probs = true;
    } else {
      throw InternalError("forward_quantized: unknown layer kind");
    }
    if (trace) trace->push_back(have_probs ? result.probs : dequantize_tensor(cur));
  }
  if (!have_probs) result.probs = dequantize_tensor(cur);
  result.label = argmax_class(result.probs);
  return result;
}

double evaluate_quantized(const QuantizedGraph& qg, const Dataset& d, RequantMode mode) {
  const std::int64_t n = d.size();
  if (n == 0) throw DataError("evaluate_quantized: empty dataset");
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const QuantForwardResult r = forward_quantized(qg, image_at(d, i), mode);
    if (r.label == d.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace sepquant
