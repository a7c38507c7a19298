// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sepquant/tensor.hpp"

namespace sepquant {

enum class Padding { kSame, kValid };
enum class ActivationKind { kRelu, kRelu6 };

// Weights are always (kh, kw, in, out); depthwise uses (kh, kw, ch, 1) and
// dense uses (1, 1, in, out). The layout is fixed by the file format.
struct Conv2DLayer {
  int stride = 1;
  Padding padding = Padding::kSame;
  TensorF32 weights;
  std::optional<std::vector<float>> bias;

  bool operator==(const Conv2DLayer&) const = default;
};

struct DepthwiseConv2DLayer {
  int stride = 1;
  Padding padding = Padding::kSame;
  TensorF32 weights;
  std::optional<std::vector<float>> bias;

  bool operator==(const DepthwiseConv2DLayer&) const = default;
};

struct BatchNormLayer {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> variance;
  float epsilon = 1e-3f;

  bool operator==(const BatchNormLayer&) const = default;
};

struct ActivationLayer {
  ActivationKind kind = ActivationKind::kRelu;

  bool operator==(const ActivationLayer&) const = default;
};

struct GlobalAvgPoolLayer {
  bool operator==(const GlobalAvgPoolLayer&) const = default;
};

struct DenseLayer {
  TensorF32 weights;  // (1, 1, in, out)
  std::vector<float> bias;

  bool operator==(const DenseLayer&) const = default;
};

struct SoftmaxLayer {
  bool operator==(const SoftmaxLayer&) const = default;
};

using LayerSpec = std::variant<Conv2DLayer, DepthwiseConv2DLayer, BatchNormLayer,
                               ActivationLayer, GlobalAvgPoolLayer, DenseLayer,
                               SoftmaxLayer>;

struct GraphMeta {
  std::string name;
  std::uint64_t seed = 0;
  std::string notes;

  bool operator==(const GraphMeta&) const = default;
};

// Sequential chain of layers. Immutable by convention: transforms return
// new graphs.
struct Graph {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  GraphMeta meta;

  bool operator==(const Graph&) const = default;
};

// Mini separable-convolution architecture knobs. The defaults give a
// 22-layer baseline: stem conv, three separable blocks, pool, dense,
// softmax.
struct ArchSpec {
  int image_size = 16;
  int in_channels = 1;
  int classes = 8;
  int stem_channels = 8;
  int stem_stride = 2;
  std::vector<int> block_channels{16, 16, 32};
};

// Output shape of every layer, in order. Throws DataError naming the first
// inconsistent layer.
std::vector<Shape> infer_shapes(const Graph& g);

// Block layout: DW conv, BN, ReLU6, PW conv, BN, ReLU6. Conv weights are
// placeholders; run the trainer's init over the result.
Graph build_baseline_mini(const ArchSpec& spec);

// Block layout: DW conv (with bias), PW conv, BN, ReLU. No normalization
// or activation between the depthwise and pointwise convolutions.
Graph build_friendly_mini(const ArchSpec& spec);

// Structural equality: layer kinds, strides, paddings, weight shapes, bias
// presence and activation kinds. Ignores the stored values.
bool same_structure(const Graph& a, const Graph& b);

const char* layer_kind_name(const LayerSpec& layer);

}  // namespace sepquant
