// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/graph.hpp"

#include <string>

#include "sepquant/error.hpp"

namespace sepquant {

namespace {

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, int stride,
                          Padding padding) {
  if (padding == Padding::kSame) {
    return (in + stride - 1) / stride;
  }
  if (in < k) return 0;
  return (in - k) / stride + 1;
}

[[noreturn]] void fail(std::size_t layer_idx, const std::string& what) {
  throw DataError("layer " + std::to_string(layer_idx) + ": " + what);
}

Shape infer_one(std::size_t idx, const LayerSpec& layer, const Shape& in) {
  if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
    const Shape& w = conv->weights.shape;
    if (w.dims[2] != in.c()) fail(idx, "conv2d channel mismatch");
    if (conv->stride < 1) fail(idx, "conv2d stride must be positive");
    if (conv->bias && static_cast<std::int64_t>(conv->bias->size()) != w.dims[3]) {
      fail(idx, "conv2d bias length mismatch");
    }
    const std::int64_t oh = conv_out_dim(in.h(), w.dims[0], conv->stride, conv->padding);
    const std::int64_t ow = conv_out_dim(in.w(), w.dims[1], conv->stride, conv->padding);
    if (oh <= 0 || ow <= 0) fail(idx, "conv2d kernel/stride/padding produces empty output");
    return Shape{in.n(), oh, ow, w.dims[3]};
  }
  if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
    const Shape& w = dw->weights.shape;
    if (w.dims[2] != in.c()) fail(idx, "depthwise_conv2d channel mismatch");
    if (w.dims[3] != 1) fail(idx, "depthwise_conv2d weight multiplier must be 1");
    if (dw->stride < 1) fail(idx, "depthwise_conv2d stride must be positive");
    if (dw->bias && static_cast<std::int64_t>(dw->bias->size()) != in.c()) {
      fail(idx, "depthwise_conv2d bias length mismatch");
    }
    const std::int64_t oh = conv_out_dim(in.h(), w.dims[0], dw->stride, dw->padding);
    const std::int64_t ow = conv_out_dim(in.w(), w.dims[1], dw->stride, dw->padding);
    if (oh <= 0 || ow <= 0) fail(idx, "depthwise_conv2d kernel/stride/padding produces empty output");
    return Shape{in.n(), oh, ow, in.c()};
  }
  if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
    const auto ch = static_cast<std::size_t>(in.c());
    if (bn->gamma.size() != ch || bn->beta.size() != ch || bn->mean.size() != ch ||
        bn->variance.size() != ch) {
      fail(idx, "batch_norm parameter length mismatch");
    }
    if (bn->epsilon <= 0.0f) fail(idx, "batch_norm epsilon must be positive");
    for (float v : bn->variance) {
      if (v < 0.0f) fail(idx, "batch_norm variance must be non-negative");
    }
    return in;
  }
  if (std::holds_alternative<ActivationLayer>(layer)) {
    return in;
  }
  if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
    return Shape{in.n(), 1, 1, in.c()};
  }
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    const Shape& w = dense->weights.shape;
    if (w.dims[0] != 1 || w.dims[1] != 1) fail(idx, "dense weights must be (1,1,in,out)");
    if (in.h() != 1 || in.w() != 1) fail(idx, "dense input must be (n,1,1,c)");
    if (w.dims[2] != in.c()) fail(idx, "dense input width mismatch");
    if (static_cast<std::int64_t>(dense->bias.size()) != w.dims[3]) {
      fail(idx, "dense bias length mismatch");
    }
    return Shape{in.n(), 1, 1, w.dims[3]};
  }
  if (std::holds_alternative<SoftmaxLayer>(layer)) {
    if (in.h() != 1 || in.w() != 1) fail(idx, "softmax input must be (n,1,1,c)");
    return in;
  }
  fail(idx, "unknown layer kind");
}

void check_arch(const ArchSpec& spec) {
  if (spec.image_size < 1 || spec.in_channels < 1) {
    throw DataError("arch spec: input size must be positive");
  }
  if (spec.classes < 2) throw DataError("arch spec: need at least 2 classes");
  if (spec.stem_channels < 1) throw DataError("arch spec: stem width of zero");
  for (int c : spec.block_channels) {
    if (c < 1) throw DataError("arch spec: block width of zero");
  }
}

BatchNormLayer identity_bn(int channels) {
  BatchNormLayer bn;
  bn.gamma.assign(channels, 1.0f);
  bn.beta.assign(channels, 0.0f);
  bn.mean.assign(channels, 0.0f);
  bn.variance.assign(channels, 1.0f);
  bn.epsilon = 1e-3f;
  return bn;
}

}  // namespace

std::vector<Shape> infer_shapes(const Graph& g) {
  for (auto d : g.input_shape.dims) {
    if (d <= 0) throw DataError("graph input shape has a non-positive dimension");
  }
  std::vector<Shape> shapes;
  shapes.reserve(g.layers.size());
  Shape cur = g.input_shape;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    cur = infer_one(i, g.layers[i], cur);
    shapes.push_back(cur);
  }
  if (!g.layers.empty() && (cur.h() != 1 || cur.w() != 1)) {
    throw DataError("graph does not end in a (batch, classes) tensor");
  }
  return shapes;
}

Graph build_baseline_mini(const ArchSpec& spec) {
  check_arch(spec);
  Graph g;
  g.input_shape = Shape{1, spec.image_size, spec.image_size, spec.in_channels};
  g.meta.name = "baseline-mini";

  Conv2DLayer stem;
  stem.stride = spec.stem_stride;
  stem.padding = Padding::kSame;
  stem.weights = TensorF32(Shape{3, 3, spec.in_channels, spec.stem_channels});
  stem.bias = std::vector<float>(spec.stem_channels, 0.0f);
  g.layers.emplace_back(std::move(stem));

  int ch = spec.stem_channels;
  for (int out_ch : spec.block_channels) {
    DepthwiseConv2DLayer dw;
    dw.stride = 1;
    dw.padding = Padding::kSame;
    dw.weights = TensorF32(Shape{3, 3, ch, 1});
    g.layers.emplace_back(std::move(dw));
    g.layers.emplace_back(identity_bn(ch));
    g.layers.emplace_back(ActivationLayer{ActivationKind::kRelu6});

    Conv2DLayer pw;
    pw.stride = 1;
    pw.padding = Padding::kSame;
    pw.weights = TensorF32(Shape{1, 1, ch, out_ch});
    g.layers.emplace_back(std::move(pw));
    g.layers.emplace_back(identity_bn(out_ch));
    g.layers.emplace_back(ActivationLayer{ActivationKind::kRelu6});
    ch = out_ch;
  }

  g.layers.emplace_back(GlobalAvgPoolLayer{});
  DenseLayer dense;
  dense.weights = TensorF32(Shape{1, 1, ch, spec.classes});
  dense.bias.assign(spec.classes, 0.0f);
  g.layers.emplace_back(std::move(dense));
  g.layers.emplace_back(SoftmaxLayer{});

  infer_shapes(g);
  return g;
}

Graph build_friendly_mini(const ArchSpec& spec) {
  check_arch(spec);
  Graph g;
  g.input_shape = Shape{1, spec.image_size, spec.image_size, spec.in_channels};
  g.meta.name = "friendly-mini";

  Conv2DLayer stem;
  stem.stride = spec.stem_stride;
  stem.padding = Padding::kSame;
  stem.weights = TensorF32(Shape{3, 3, spec.in_channels, spec.stem_channels});
  stem.bias = std::vector<float>(spec.stem_channels, 0.0f);
  g.layers.emplace_back(std::move(stem));

  int ch = spec.stem_channels;
  for (int out_ch : spec.block_channels) {
    DepthwiseConv2DLayer dw;
    dw.stride = 1;
    dw.padding = Padding::kSame;
    dw.weights = TensorF32(Shape{3, 3, ch, 1});
    dw.bias = std::vector<float>(ch, 0.0f);
    g.layers.emplace_back(std::move(dw));

    Conv2DLayer pw;
    pw.stride = 1;
    pw.padding = Padding::kSame;
    pw.weights = TensorF32(Shape{1, 1, ch, out_ch});
    g.layers.emplace_back(std::move(pw));
    g.layers.emplace_back(identity_bn(out_ch));
    g.layers.emplace_back(ActivationLayer{ActivationKind::kRelu});
    ch = out_ch;
  }

  g.layers.emplace_back(GlobalAvgPoolLayer{});
  DenseLayer dense;
  dense.weights = TensorF32(Shape{1, 1, ch, spec.classes});
  dense.bias.assign(spec.classes, 0.0f);
  g.layers.emplace_back(std::move(dense));
  g.layers.emplace_back(SoftmaxLayer{});

  infer_shapes(g);
  return g;
}

bool same_structure(const Graph& a, const Graph& b) {
  if (a.input_shape != b.input_shape) return false;
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const LayerSpec& la = a.layers[i];
    const LayerSpec& lb = b.layers[i];
    if (la.index() != lb.index()) return false;
    if (const auto* ca = std::get_if<Conv2DLayer>(&la)) {
      const auto* cb = std::get_if<Conv2DLayer>(&lb);
      if (ca->stride != cb->stride || ca->padding != cb->padding ||
          ca->weights.shape != cb->weights.shape ||
          ca->bias.has_value() != cb->bias.has_value()) {
        return false;
      }
    } else if (const auto* da = std::get_if<DepthwiseConv2DLayer>(&la)) {
      const auto* db = std::get_if<DepthwiseConv2DLayer>(&lb);
      if (da->stride != db->stride || da->padding != db->padding ||
          da->weights.shape != db->weights.shape ||
          da->bias.has_value() != db->bias.has_value()) {
        return false;
      }
    } else if (const auto* na = std::get_if<BatchNormLayer>(&la)) {
      const auto* nb = std::get_if<BatchNormLayer>(&lb);
      if (na->gamma.size() != nb->gamma.size()) return false;
    } else if (const auto* aa = std::get_if<ActivationLayer>(&la)) {
      const auto* ab = std::get_if<ActivationLayer>(&lb);
      if (aa->kind != ab->kind) return false;
    } else if (const auto* fa = std::get_if<DenseLayer>(&la)) {
      const auto* fb = std::get_if<DenseLayer>(&lb);
      if (fa->weights.shape != fb->weights.shape) return false;
    }
  }
  return true;
}

const char* layer_kind_name(const LayerSpec& layer) {
  switch (layer.index()) {
    case 0: return "conv2d";
    case 1: return "depthwise_conv2d";
    case 2: return "batch_norm";
    case 3: return "activation";
    case 4: return "global_avg_pool";
    case 5: return "dense";
    case 6: return "softmax";
    default: return "unknown";
  }
}

}  // namespace sepquant
