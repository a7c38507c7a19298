// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sepquant/error.hpp"

namespace sepquant {

namespace {

float median_of(std::vector<float> v) {
  if (v.empty()) return 0.0f;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  float m = v[mid];
  if (v.size() % 2 == 0) {
    const float lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = (lo + m) * 0.5f;
  }
  return m;
}

bool is_pointwise(const Conv2DLayer& conv) {
  return conv.weights.shape.dims[0] == 1 && conv.weights.shape.dims[1] == 1;
}

}  // namespace

std::vector<float> bn_channel_alpha(const BatchNormLayer& bn) {
  if (bn.gamma.size() != bn.variance.size()) {
    throw DataError("batch_norm: gamma/variance length mismatch");
  }
  std::vector<float> alpha(bn.gamma.size());
  for (std::size_t c = 0; c < alpha.size(); ++c) {
    if (bn.variance[c] < 0.0f) throw DataError("batch_norm: negative variance");
    alpha[c] = static_cast<float>(
        static_cast<double>(bn.gamma[c]) /
        std::sqrt(static_cast<double>(bn.variance[c]) + bn.epsilon));
    if (!std::isfinite(alpha[c])) throw DataError("batch_norm: non-finite alpha");
  }
  return alpha;
}

std::pair<Graph, FoldReport> fold_batchnorm(const Graph& g) {
  Graph out;
  out.input_shape = g.input_shape;
  out.meta = g.meta;
  FoldReport report;

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& layer = g.layers[i];
    const auto* bn = std::get_if<BatchNormLayer>(&layer);
    if (!bn) {
      out.layers.push_back(layer);
      continue;
    }
    if (i == 0) throw DataError("layer 0: batch_norm has no preceding convolution");
    LayerSpec& prev_spec = out.layers.back();
    const std::vector<float> alpha = bn_channel_alpha(*bn);

    auto fold_into = [&](TensorF32& w, std::optional<std::vector<float>>& bias,
                         std::size_t channel_axis) {
      const std::int64_t channels = w.shape.dims[channel_axis];
      if (static_cast<std::size_t>(channels) != alpha.size()) {
        throw DataError("layer " + std::to_string(i) + ": batch_norm channel mismatch");
      }
      if (!bias) bias = std::vector<float>(static_cast<std::size_t>(channels), 0.0f);
      const Shape& s = w.shape;
      for (std::int64_t ky = 0; ky < s.dims[0]; ++ky)
        for (std::int64_t kx = 0; kx < s.dims[1]; ++kx)
          for (std::int64_t ci = 0; ci < s.dims[2]; ++ci)
            for (std::int64_t co = 0; co < s.dims[3]; ++co) {
              const std::int64_t c = channel_axis == 3 ? co : ci;
              w.at(ky, kx, ci, co) *= alpha[static_cast<std::size_t>(c)];
            }
      FoldedLayerReport fr;
      fr.conv_layer = i - 1;
      fr.bn_layer = i;
      fr.alpha = alpha;
      fr.shift.resize(alpha.size());
      for (std::size_t c = 0; c < alpha.size(); ++c) {
        fr.shift[c] = bn->beta[c] - alpha[c] * bn->mean[c];
        (*bias)[c] = fr.shift[c] + alpha[c] * (*bias)[c];
      }
      fr.alpha_min = *std::min_element(alpha.begin(), alpha.end());
      fr.alpha_max = *std::max_element(alpha.begin(), alpha.end());
      fr.alpha_median = median_of(alpha);
      report.folded.push_back(std::move(fr));
    };

    if (auto* conv = std::get_if<Conv2DLayer>(&prev_spec)) {
      fold_into(conv->weights, conv->bias, 3);
    } else if (auto* dw = std::get_if<DepthwiseConv2DLayer>(&prev_spec)) {
      fold_into(dw->weights, dw->bias, 2);
    } else {
      throw DataError("layer " + std::to_string(i) + ": batch_norm follows " +
                      layer_kind_name(prev_spec) + ", can only fold through a convolution");
    }
  }
  infer_shapes(out);
  return {std::move(out), std::move(report)};
}

Graph make_friendly(const Graph& g) {
  Graph out;
  out.input_shape = g.input_shape;
  out.meta = g.meta;
  const std::size_t n = g.layers.size();
  std::size_t i = 0;
  while (i < n) {
    const LayerSpec& layer = g.layers[i];
    if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      if (i + 2 < n && std::holds_alternative<BatchNormLayer>(g.layers[i + 1])) {
        const auto* act = std::get_if<ActivationLayer>(&g.layers[i + 2]);
        if (!act || act->kind != ActivationKind::kRelu6) {
          throw DataError("layer " + std::to_string(i) +
                          ": unrecognized block structure after the depthwise convolution");
        }
        DepthwiseConv2DLayer friendly = *dw;
        if (!friendly.bias) {
          friendly.bias = std::vector<float>(
              static_cast<std::size_t>(friendly.weights.shape.dims[2]), 0.0f);
        }
        out.layers.emplace_back(std::move(friendly));
        i += 3;
        continue;
      }
      out.layers.push_back(layer);
      ++i;
      continue;
    }
    if (const auto* act = std::get_if<ActivationLayer>(&layer);
        act && act->kind == ActivationKind::kRelu6) {
      bool after_pointwise = false;
      if (!out.layers.empty()) {
        const LayerSpec& prev = out.layers.back();
        if (const auto* conv = std::get_if<Conv2DLayer>(&prev)) {
          after_pointwise = is_pointwise(*conv);
        } else if (std::holds_alternative<BatchNormLayer>(prev) && out.layers.size() >= 2) {
          const auto* conv2 = std::get_if<Conv2DLayer>(&out.layers[out.layers.size() - 2]);
          after_pointwise = conv2 && is_pointwise(*conv2);
        }
      }
      if (!after_pointwise) {
        throw DataError("layer " + std::to_string(i) +
                        ": relu6 outside a recognized separable block");
      }
      out.layers.emplace_back(ActivationLayer{ActivationKind::kRelu});
      ++i;
      continue;
    }
    out.layers.push_back(layer);
    ++i;
  }
  infer_shapes(out);
  return out;
}

Graph inject_dead_channels(const Graph& g, std::size_t layer_index,
                           const std::vector<int>& channels) {
  if (layer_index >= g.layers.size()) {
    throw DataError("inject_dead_channels: layer index out of range");
  }
  Graph out = g;
  if (channels.empty()) return out;
  auto* dw = std::get_if<DepthwiseConv2DLayer>(&out.layers[layer_index]);
  if (!dw) {
    throw DataError("layer " + std::to_string(layer_index) +
                    ": dead-channel injection needs a depthwise convolution");
  }
  if (layer_index + 1 >= out.layers.size()) {
    throw DataError("layer " + std::to_string(layer_index) +
                    ": depthwise convolution has no following batch_norm");
  }
  auto* bn = std::get_if<BatchNormLayer>(&out.layers[layer_index + 1]);
  if (!bn) {
    throw DataError("layer " + std::to_string(layer_index + 1) +
                    ": dead-channel injection needs batch_norm after the depthwise layer");
  }
  const Shape& s = dw->weights.shape;
  const std::int64_t ch = s.dims[2];
  for (int c : channels) {
    if (c < 0 || c >= ch) {
      throw DataError("inject_dead_channels: channel " + std::to_string(c) + " out of range");
    }
    for (std::int64_t ky = 0; ky < s.dims[0]; ++ky)
      for (std::int64_t kx = 0; kx < s.dims[1]; ++kx) dw->weights.at(ky, kx, c, 0) = 0.0f;
    dw->weights.at(s.dims[0] / 2, s.dims[1] / 2, c, 0) = kDeadChannelTap;
    bn->mean[static_cast<std::size_t>(c)] = 0.0f;
    bn->variance[static_cast<std::size_t>(c)] = 1e-8f;
  }
  return out;
}

}  // namespace sepquant
