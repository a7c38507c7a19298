// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/qgraph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

// Per-BN-layer folded scale profile; flagged channels have
// alpha > flag_ratio * median.
struct AlphaReport {
  std::size_t bn_layer_index = 0;
  std::size_t conv_layer_index = 0;
  std::vector<float> alpha;
  float median_alpha = 0.0f;
  std::vector<int> flagged;
};

std::vector<AlphaReport> bn_alpha(const Graph& g, double flag_ratio = 10.0);

enum class SqnrTag { kNormal, kExact, kZeroSignal };

struct SqnrValue {
  double db = 0.0;
  SqnrTag tag = SqnrTag::kNormal;
};

// 10*log10(signal power / error power) between a float tensor and the
// dequantized u8 tensor, sliced along channel_axis.
std::vector<SqnrValue> weight_channel_sqnr(const TensorF32& reference, const TensorU8& quantized,
                                           int channel_axis);

struct WeightSqnrReport {
  std::size_t layer_index = 0;
  std::vector<SqnrValue> channel_sqnr;
};

struct DegradationReport {
  std::vector<SqnrValue> layer_sqnr;  // one entry per layer
  std::vector<WeightSqnrReport> weight_sqnr;
  double float_top1 = 0.0;
  double int8_top1 = 0.0;
  double top1_agreement = 0.0;
  double threshold_db = 10.0;
  int first_low_layer = -1;  // first layer with SQNR below threshold, -1 if none
};

// Runs both engines over the probe set and compares per-layer dequantized
// outputs against the float activations. The float graph must be the folded
// source of the quantized graph (same layer count).
DegradationReport layer_degradation(const Graph& g, const QuantizedGraph& qg,
                                    const Dataset& probe, double threshold_db = 10.0,
                                    RequantMode mode = RequantMode::kFloatMultiplier);

std::string sqnr_csv_value(const SqnrValue& v);

// CSV with header "channel_index,alpha".
void export_alpha_csv(const AlphaReport& report, const std::string& path);

// CSV with header "layer,sqnr_db".
void export_degradation_csv(const DegradationReport& report, const std::string& path);

}  // namespace sepquant
