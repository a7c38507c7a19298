// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/qgraph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

// Normalized fixed-point requantization multiplier: M is represented as
// multiplier * 2^-31 * 2^-(right_shift - 31), with multiplier in
// [2^30, 2^31).
struct FixedMultiplier {
  std::int32_t multiplier = 0;
  int right_shift = 0;

  bool operator==(const FixedMultiplier&) const = default;
};

FixedMultiplier quantize_multiplier(double m);

// round(value * M) via i64 product and a rounding right shift, half away
// from zero.
std::int32_t apply_fixed_multiplier(std::int32_t value, FixedMultiplier fm);

std::uint8_t requantize(std::int32_t acc, double m, int zero_point, RequantMode mode);

TensorU8 qconv2d(const TensorU8& input, const TensorU8& weights,
                 const std::vector<std::int32_t>& bias, int stride, Padding padding,
                 const QuantParams& out_qparams, RequantMode mode);

TensorU8 qdepthwise_conv2d(const TensorU8& input, const TensorU8& weights,
                           const std::vector<std::int32_t>& bias, int stride, Padding padding,
                           const QuantParams& out_qparams, RequantMode mode);

// Clamp to [zp, 255]; qparams pass through unchanged.
TensorU8 qrelu(const TensorU8& input);

// Clamp to [zp, quantize_value(6, qparams)].
TensorU8 qrelu6(const TensorU8& input);

TensorU8 qglobal_avg_pool(const TensorU8& input, const QuantParams& out_qparams,
                          RequantMode mode);

TensorU8 qdense(const TensorU8& input, const TensorU8& weights,
                const std::vector<std::int32_t>& bias, const QuantParams& out_qparams,
                RequantMode mode);

struct QuantForwardResult {
  TensorF32 probs;  // float softmax over dequantized logits
  int label = 0;
};

// Runs the graph on one float image (quantized at the input). The optional
// trace receives each layer's dequantized output.
QuantForwardResult forward_quantized(const QuantizedGraph& qg, const TensorF32& input,
                                     RequantMode mode = RequantMode::kFloatMultiplier,
                                     std::vector<TensorF32>* trace = nullptr);

double evaluate_quantized(const QuantizedGraph& qg, const Dataset& d,
                          RequantMode mode = RequantMode::kFloatMultiplier);

}  // namespace sepquant
