// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/qgraph.hpp"

namespace sepquant {

constexpr double kDefaultBudgetMsPerImage = 30.0;
constexpr int kLatencyWarmupImages = 10;

struct RunEntry {
  std::int64_t index = 0;
  double latency_ms = 0.0;
  int predicted = 0;
  int truth = 0;

  bool operator==(const RunEntry&) const = default;
};

struct RunLog {
  std::string engine;  // "float" or "int8"
  std::string model_name;
  std::vector<RunEntry> entries;

  bool operator==(const RunLog&) const = default;
};

// Times single-image inference with a monotonic clock. The first `warmup`
// images are run but excluded from the log; every dataset image is then
// timed and logged.
RunLog measure_latency(const Graph& g, const Dataset& d, int warmup = kLatencyWarmupImages);
RunLog measure_latency(const QuantizedGraph& qg, const Dataset& d,
                       RequantMode mode = RequantMode::kFloatMultiplier,
                       int warmup = kLatencyWarmupImages);

struct ScoreReport {
  std::int64_t images = 0;
  std::int64_t classified_in_budget = 0;  // prefix that fits the cumulative wall
  std::int64_t correct_in_budget = 0;
  double total_inference_ms = 0.0;
  double wall_budget_ms = 0.0;  // budget_ms_per_image * images
  double budget_ms_per_image = kDefaultBudgetMsPerImage;
  double test_metric = 0.0;           // correct_in_budget / images
  double accuracy_over_time = 0.0;    // test_metric / max(total, wall budget)
  double mean_latency_ms = 0.0;
};

// Cumulative-prefix scoring: images are processed in log order and only
// those finishing within the cumulative wall budget count.
ScoreReport compute_score(const RunLog& log,
                          double budget_ms_per_image = kDefaultBudgetMsPerImage);

// CSV with '#' metadata lines and header "index,latency_ms,predicted,truth".
void save_run_log(const RunLog& log, const std::string& path);
RunLog load_run_log(const std::string& path);

}  // namespace sepquant
