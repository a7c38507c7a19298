// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/float_engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conv_util.hpp"
#include "sepquant/error.hpp"

namespace sepquant {

namespace {

void check_input_channels(const char* op, std::int64_t got, std::int64_t want) {
  if (got != want) {
    throw DataError(std::string(op) + ": input has " + std::to_string(got) +
                    " channels, weights expect " + std::to_string(want));
  }
}

}  // namespace

TensorF32 conv2d(const TensorF32& input, const TensorF32& weights,
                 const std::vector<float>* bias, int stride, Padding padding) {
  const Shape& in = input.shape;
  const Shape& w = weights.shape;
  check_input_channels("conv2d", in.c(), w.dims[2]);
  if (bias && static_cast<std::int64_t>(bias->size()) != w.dims[3]) {
    throw DataError("conv2d: bias length mismatch");
  }
  const ConvGeometry geo = conv_geometry(in, w.dims[0], w.dims[1], stride, padding);
  TensorF32 out(Shape{in.n(), geo.out_h, geo.out_w, w.dims[3]});
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox) {
        for (std::int64_t oc = 0; oc < w.dims[3]; ++oc) {
          float acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0f;
          for (std::int64_t ky = 0; ky < w.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.h()) continue;
            for (std::int64_t kx = 0; kx < w.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.w()) continue;
              for (std::int64_t ic = 0; ic < in.c(); ++ic) {
                acc += input.at(n, iy, ix, ic) * weights.at(ky, kx, ic, oc);
              }
            }
          }
          out.at(n, oy, ox, oc) = acc;
        }
      }
    }
  }
  return out;
}

TensorF32 depthwise_conv2d(const TensorF32& input, const TensorF32& weights,
                           const std::vector<float>* bias, int stride, Padding padding) {
  const Shape& in = input.shape;
  const Shape& w = weights.shape;
  check_input_channels("depthwise_conv2d", in.c(), w.dims[2]);
  if (w.dims[3] != 1) throw DataError("depthwise_conv2d: weight multiplier must be 1");
  if (bias && static_cast<std::int64_t>(bias->size()) != in.c()) {
    throw DataError("depthwise_conv2d: bias length mismatch");
  }
  const ConvGeometry geo = conv_geometry(in, w.dims[0], w.dims[1], stride, padding);
  TensorF32 out(Shape{in.n(), geo.out_h, geo.out_w, in.c()});
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox) {
        for (std::int64_t c = 0; c < in.c(); ++c) {
          float acc = bias ? (*bias)[static_cast<std::size_t>(c)] : 0.0f;
          for (std::int64_t ky = 0; ky < w.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.h()) continue;
            for (std::int64_t kx = 0; kx < w.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.w()) continue;
              acc += input.at(n, iy, ix, c) * weights.at(ky, kx, c, 0);
            }
          }
          out.at(n, oy, ox, c) = acc;
        }
      }
    }
  }
  return out;
}

TensorF32 batchnorm_inference(const TensorF32& input, const BatchNormLayer& bn) {
  const auto ch = static_cast<std::size_t>(input.shape.c());
  if (bn.gamma.size() != ch || bn.beta.size() != ch || bn.mean.size() != ch ||
      bn.variance.size() != ch) {
    throw DataError("batch_norm: parameter length mismatch");
  }
  std::vector<float> scale(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (bn.variance[c] < 0.0f) throw DataError("batch_norm: negative variance");
    const double a = static_cast<double>(bn.gamma[c]) /
                     std::sqrt(static_cast<double>(bn.variance[c]) + bn.epsilon);
    scale[c] = static_cast<float>(a);
    shift[c] = static_cast<float>(bn.beta[c] - a * bn.mean[c]);
  }
  TensorF32 out(input.shape);
  const std::size_t numel = input.data.size();
  for (std::size_t i = 0; i < numel; ++i) {
    const std::size_t c = i % ch;
    out.data[i] = input.data[i] * scale[c] + shift[c];
  }
  return out;
}

TensorF32 relu(const TensorF32& input) {
  TensorF32 out(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    out.data[i] = std::max(0.0f, input.data[i]);
  }
  return out;
}

TensorF32 relu6(const TensorF32& input) {
  TensorF32 out(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    out.data[i] = std::min(std::max(0.0f, input.data[i]), 6.0f);
  }
  return out;
}

TensorF32 global_avg_pool(const TensorF32& input) {
  const Shape& in = input.shape;
  TensorF32 out(Shape{in.n(), 1, 1, in.c()});
  const float inv = 1.0f / static_cast<float>(in.h() * in.w());
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t c = 0; c < in.c(); ++c) {
      float acc = 0.0f;
      for (std::int64_t y = 0; y < in.h(); ++y) {
        for (std::int64_t x = 0; x < in.w(); ++x) acc += input.at(n, y, x, c);
      }
      out.at(n, 0, 0, c) = acc * inv;
    }
  }
  return out;
}

TensorF32 dense(const TensorF32& input, const TensorF32& weights,
                const std::vector<float>& bias) {
  const Shape& in = input.shape;
  const Shape& w = weights.shape;
  if (in.h() != 1 || in.w() != 1) throw DataError("dense: input must be (n,1,1,c)");
  check_input_channels("dense", in.c(), w.dims[2]);
  if (static_cast<std::int64_t>(bias.size()) != w.dims[3]) {
    throw DataError("dense: bias length mismatch");
  }
  TensorF32 out(Shape{in.n(), 1, 1, w.dims[3]});
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t o = 0; o < w.dims[3]; ++o) {
      float acc = bias[static_cast<std::size_t>(o)];
      for (std::int64_t i = 0; i < in.c(); ++i) {
        acc += input.at(n, 0, 0, i) * weights.at(0, 0, i, o);
      }
      out.at(n, 0, 0, o) = acc;
    }
  }
  return out;
}

TensorF32 softmax(const TensorF32& input) {
  const Shape& in = input.shape;
  if (in.h() != 1 || in.w() != 1) throw DataError("softmax: input must be (n,1,1,c)");
  TensorF32 out(in);
  for (std::int64_t n = 0; n < in.n(); ++n) {
    float mx = input.at(n, 0, 0, 0);
    for (std::int64_t c = 1; c < in.c(); ++c) mx = std::max(mx, input.at(n, 0, 0, c));
    float sum = 0.0f;
    for (std::int64_t c = 0; c < in.c(); ++c) {
      const float e = std::exp(input.at(n, 0, 0, c) - mx);
      out.at(n, 0, 0, c) = e;
      sum += e;
    }
    const float inv = 1.0f / sum;
    for (std::int64_t c = 0; c < in.c(); ++c) out.at(n, 0, 0, c) *= inv;
  }
  return out;
}

TensorF32 forward(const Graph& g, const TensorF32& input, ActivationTrace* trace) {
  const Shape& in = input.shape;
  const Shape& want = g.input_shape;
  if (in.h() != want.h() || in.w() != want.w() || in.c() != want.c()) {
    throw DataError("forward: input shape does not match the graph input");
  }
  if (trace) {
    trace->outputs.clear();
    trace->outputs.reserve(g.layers.size());
  }
  TensorF32 cur = input;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& layer = g.layers[i];
    if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      cur = conv2d(cur, conv->weights, conv->bias ? &*conv->bias : nullptr, conv->stride,
                   conv->padding);
    } else if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      cur = depthwise_conv2d(cur, dw->weights, dw->bias ? &*dw->bias : nullptr, dw->stride,
                             dw->padding);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      cur = batchnorm_inference(cur, *bn);
    } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
      cur = act->kind == ActivationKind::kRelu ? relu(cur) : relu6(cur);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      cur = global_avg_pool(cur);
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      cur = dense(cur, d->weights, d->bias);
    } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
      cur = softmax(cur);
    } else {
      throw InternalError("forward: unknown layer kind");
    }
    if (trace) trace->outputs.push_back(cur);
  }
  if (!cur.all_finite()) throw DataError("forward: non-finite values in the output");
  return cur;
}

int argmax_class(const TensorF32& logits, std::int64_t n) {
  const Shape& s = logits.shape;
  if (n < 0 || n >= s.n()) throw DataError("argmax_class: batch row out of range");
  int best = 0;
  float best_v = logits.at(n, 0, 0, 0);
  for (std::int64_t c = 1; c < s.c(); ++c) {
    const float v = logits.at(n, 0, 0, c);
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double evaluate(const Graph& g, const Dataset& d) {
  const std::int64_t n = d.size();
  if (n == 0) throw DataError("evaluate: empty dataset");
  const Shape& s = d.images.shape;
  const std::size_t pixels = static_cast<std::size_t>(s.h() * s.w() * s.c());
  std::int64_t correct = 0;
  TensorF32 one(Shape{1, s.h(), s.w(), s.c()});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(d.images.data.begin() + static_cast<std::ptrdiff_t>(i * pixels), pixels,
                one.data.begin());
    const TensorF32 probs = forward(g, one);
    if (argmax_class(probs) == d.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace sepquant
