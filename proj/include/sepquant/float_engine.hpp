// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

// Per-layer outputs of one forward pass, indexed like Graph::layers.
struct ActivationTrace {
  std::vector<TensorF32> outputs;
};

TensorF32 conv2d(const TensorF32& input, const TensorF32& weights,
                 const std::vector<float>* bias, int stride, Padding padding);

TensorF32 depthwise_conv2d(const TensorF32& input, const TensorF32& weights,
                           const std::vector<float>* bias, int stride, Padding padding);

TensorF32 batchnorm_inference(const TensorF32& input, const BatchNormLayer& bn);

TensorF32 relu(const TensorF32& input);
TensorF32 relu6(const TensorF32& input);

TensorF32 global_avg_pool(const TensorF32& input);

TensorF32 dense(const TensorF32& input, const TensorF32& weights,
                const std::vector<float>& bias);

// Max-subtracted, per batch row.
TensorF32 softmax(const TensorF32& input);

// Runs the whole chain. Input batch size may differ from g.input_shape's.
TensorF32 forward(const Graph& g, const TensorF32& input,
                  ActivationTrace* trace = nullptr);

// Index of the max logit of batch row n.
int argmax_class(const TensorF32& logits, std::int64_t n = 0);

// Top-1 accuracy of g over d, one image at a time.
double evaluate(const Graph& g, const Dataset& d);

}  // namespace sepquant
