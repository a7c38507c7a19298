// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "sepquant/graph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

// Requantization of the i32 accumulator: out = round(acc * M) + zero_point
// with M = delta_in * delta_w / delta_out. float_multiplier applies M in
// double; fixed_multiplier uses a normalized i32 multiplier in [2^30, 2^31)
// and a right shift, rounding half away from zero.
enum class RequantMode { kFloatMultiplier, kFixedMultiplier };

struct QConv2DLayer {
  int stride = 1;
  Padding padding = Padding::kSame;
  TensorU8 weights;
  std::vector<std::int32_t> bias;  // scale delta_in*delta_w, zero offset

  bool operator==(const QConv2DLayer&) const = default;
};

struct QDepthwiseConv2DLayer {
  int stride = 1;
  Padding padding = Padding::kSame;
  TensorU8 weights;
  std::vector<std::int32_t> bias;

  bool operator==(const QDepthwiseConv2DLayer&) const = default;
};

struct QActivationLayer {
  ActivationKind kind = ActivationKind::kRelu;

  bool operator==(const QActivationLayer&) const = default;
};

struct QGlobalAvgPoolLayer {
  bool operator==(const QGlobalAvgPoolLayer&) const = default;
};

struct QDenseLayer {
  TensorU8 weights;  // (1, 1, in, out)
  std::vector<std::int32_t> bias;

  bool operator==(const QDenseLayer&) const = default;
};

struct QSoftmaxLayer {
  bool operator==(const QSoftmaxLayer&) const = default;
};

using QLayerSpec = std::variant<QConv2DLayer, QDepthwiseConv2DLayer, QActivationLayer,
                                QGlobalAvgPoolLayer, QDenseLayer, QSoftmaxLayer>;

// Fully quantized sequential graph. output_qparams[i] describes layer i's
// output bytes; activations reuse their input's params, softmax output is
// float and carries a placeholder entry.
struct QuantizedGraph {
  Shape input_shape;
  QuantParams input_qparams;
  std::vector<QLayerSpec> layers;
  std::vector<QuantParams> output_qparams;
  GraphMeta meta;

  bool operator==(const QuantizedGraph&) const = default;
};

const char* qlayer_kind_name(const QLayerSpec& layer);

}  // namespace sepquant
