// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 30;
  double weight_decay = 1e-4;  // applied to conv/dense weights only
  std::uint64_t seed = 0;
  double bn_momentum = 0.9;
};

// Per-layer gradient arrays, flat, in the owning tensor's layout. Vectors
// are empty where a layer has no such parameter.
template <typename Real>
struct LayerGradsT {
  std::vector<Real> weights;
  std::vector<Real> bias;
  std::vector<Real> gamma;
  std::vector<Real> beta;
};
using LayerGrads = LayerGradsT<float>;
using LayerGradsD = LayerGradsT<double>;

// Batch statistics of a BN layer (biased variance); empty for other kinds.
struct BnBatchStats {
  std::vector<float> mean;
  std::vector<float> variance;
};

struct TrainState {
  Graph graph;
  std::vector<LayerGrads> velocity;
  long long step = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Graph graph;
  std::vector<EpochStats> history;
};

// He-style init: conv/dense weights ~ N(0, 2/fan_in) (depthwise fan_in is
// kh*kw), biases 0, BN gamma=1 beta=0 mean=0 variance=1.
Graph init_weights(const Graph& g, std::uint64_t seed);

// Mean softmax cross-entropy over the batch plus gradients for every
// trainable tensor. BN uses batch statistics; batch_stats (if given)
// receives them for the moving-average update. The graph's final Softmax
// layer is folded into the loss.
double forward_backward(const Graph& g, const TensorF32& images,
                        const std::vector<std::uint16_t>& labels,
                        std::vector<LayerGrads>& grads,
                        std::vector<BnBatchStats>* batch_stats = nullptr);

// 64-bit evaluation path for gradient verification; same math, Real=double.
double forward_backward_check(const Graph& g, const TensorF32& images,
                              const std::vector<std::uint16_t>& labels,
                              std::vector<LayerGradsD>& grads);

// Loss only, 64-bit path; the finite-difference oracle evaluates this.
double batch_loss_check(const Graph& g, const TensorF32& images,
                        const std::vector<std::uint16_t>& labels);

// Classical momentum: v = momentum*v + (grad + weight_decay*w); w -= lr*v.
// BN moving stats blend toward batch_stats with bn_momentum.
void sgd_step(TrainState& state, const std::vector<LayerGrads>& grads,
              const std::vector<BnBatchStats>& batch_stats, const TrainConfig& cfg);

// Initializes from cfg.seed ("init" stream), then runs SGD with per-epoch
// Fisher-Yates shuffles ("shuffle" stream). Single-threaded, deterministic.
TrainResult train(const Graph& g, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg);

}  // namespace sepquant
