// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/qgraph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

constexpr int kHistogramBins = 2048;
constexpr int kClipGridSteps = 64;

// Exact min/max plus a fixed-bin histogram over [min, max].
struct TensorStats {
  double min = 0.0;
  double max = 0.0;
  std::vector<std::uint64_t> histogram;  // kHistogramBins counts
  std::uint64_t sample_count = 0;

  bool operator==(const TensorStats&) const = default;
};

TensorStats stats_from_values(const float* values, std::size_t count);
TensorStats stats_from_tensor(const TensorF32& t);

// Min/max union plus histogram re-accumulation; associative and
// commutative given the shared two-pass protocol (see collect_stats).
struct MinMax {
  double min = 0.0;
  double max = 0.0;
  bool seen = false;

  void add(float v);
  void merge(const MinMax& other);
};

// Keys: "input", "layer:<index>", "weight:<index>".
struct CalibrationRecord {
  std::map<std::string, TensorStats> tensors;

  bool operator==(const CalibrationRecord&) const = default;
};

std::string layer_stats_key(std::size_t layer_index);
std::string weight_stats_key(std::size_t layer_index);

// Two passes over the calibration images: exact per-tensor min/max first,
// then histograms over the frozen ranges. Weight tensors are read directly.
CalibrationRecord collect_stats(const Graph& g, const Dataset& calib_set);

// Picks one image per class (first per_class occurrences of each label).
Dataset calibration_subset(const Dataset& d, int per_class = 1);

struct ClipLoss {
  double quantization = 0.0;
  double saturation = 0.0;

  double total() const { return quantization + saturation; }
};

// Histogram-weighted squared error of quantizing the bin centers with
// qparams chosen for [clip_min, clip_max]. Mass outside the representable
// range counts as saturation loss.
ClipLoss loss_for_clip(const TensorStats& stats, double clip_min, double clip_max);

struct SearchResult {
  QuantParams qparams;
  double clip_min = 0.0;
  double clip_max = 0.0;
  double loss = 0.0;
};

// Coordinate descent on the 64-position-per-end clip grid: optimize one end
// holding the other until no single-end move improves the loss.
SearchResult greedy_search_qparams(const TensorStats& stats);

// Exhaustive oracle over the full clip grid.
SearchResult brute_force_qparams(const TensorStats& stats);

// Quantizes weights (greedy over weight histograms), biases (i32 at
// delta_in * delta_w exactly), and assigns activation qparams from the
// calibration record. The graph must be BN-folded.
QuantizedGraph build_quantized_graph(const Graph& g, const CalibrationRecord& rec);

}  // namespace sepquant
