// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/qgraph.hpp"
#include "sepquant/score.hpp"
#include "sepquant/trainer.hpp"

namespace sepquant {

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  GenSpec data;
  ArchSpec arch;
  TrainConfig train;
  int calib_per_class = 1;
  RequantMode requant_mode = RequantMode::kFloatMultiplier;
  std::size_t inject_layer = 7;
  std::vector<int> inject_channels{14};
  double budget_ms_per_image = kDefaultBudgetMsPerImage;
  double alpha_flag_ratio = 10.0;
};

// key = value lines under [pipeline], [data], [train], [arch] sections;
// '#' and ';' comments. Unknown keys or sections are errors with file:line.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config_text(const std::string& text, const std::string& source);

struct PipelineSummary {
  double baseline_clean_float = 0.0;  // clean baseline, no injected pathology
  double baseline_float = 0.0;        // injected baseline, float engine
  double baseline_int8 = 0.0;         // injected baseline, quantized
  double friendly_float = 0.0;
  double friendly_int8 = 0.0;
  int baseline_first_low_layer = -1;
  int friendly_first_low_layer = -1;
  std::vector<int> flagged_channels;  // injected BN layer, alpha outliers
  ScoreReport float_score;
  ScoreReport int8_score;
  std::string out_dir;
  std::string summary_path;
};

// Runs the full flow: generate data, train both models, inject the BN
// pathology into the baseline, fold, calibrate, quantize, evaluate both
// engines, diagnose, benchmark and score. Artifacts land under
// cfg.out_dir; a machine-readable summary.json is written at the end.
PipelineSummary run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr);

}  // namespace sepquant
