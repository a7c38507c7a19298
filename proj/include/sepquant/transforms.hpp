// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sepquant/graph.hpp"

namespace sepquant {

// Per-channel BN scale alpha_c = gamma_c / sqrt(variance_c + epsilon).
// Shared by fold_batchnorm and the diagnostics so the two always agree.
std::vector<float> bn_channel_alpha(const BatchNormLayer& bn);

struct FoldedLayerReport {
  std::size_t conv_layer = 0;  // index in the input graph
  std::size_t bn_layer = 0;
  std::vector<float> alpha;
  std::vector<float> shift;  // beta_c - alpha_c * mean_c
  float alpha_min = 0.0f;
  float alpha_max = 0.0f;
  float alpha_median = 0.0f;
};

struct FoldReport {
  std::vector<FoldedLayerReport> folded;
};

// Absorbs every (conv, BN) pair: w'_c = w_c * alpha_c and
// b'_c = beta_c - alpha_c * mean_c + alpha_c * b_c. A BN that does not
// immediately follow a Conv2D or DepthwiseConv2D is an error.
std::pair<Graph, FoldReport> fold_batchnorm(const Graph& g);

// Rewrites baseline blocks to the quantization-friendly form: drops the
// BN + ReLU6 between the depthwise and pointwise convolutions (the DW conv
// gains a zero bias) and turns the remaining ReLU6 after pointwise layers
// into ReLU. Idempotent; intended for retraining, not numerical equality.
Graph make_friendly(const Graph& g);

// Manufactures the dead-channel pathology: the listed channels of the
// depthwise layer get an all-zero kernel except a single large center tap,
// and the following BN's stats for them become mean 0, variance 1e-8
// (gamma/beta untouched). Folding then plants tap * gamma/sqrt(1e-8+eps)
// outliers into the folded weight tensor.
Graph inject_dead_channels(const Graph& g, std::size_t layer_index,
                           const std::vector<int>& channels);

// Center-tap magnitude used by inject_dead_channels.
constexpr float kDeadChannelTap = 10.0f;

}  // namespace sepquant
