// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "sepquant/calibrate.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/qgraph.hpp"

namespace sepquant {

constexpr int kModelFormatVersion = 1;

// Models are stored as <prefix>.json (manifest) plus <prefix>.bin (raw
// little-endian arrays with a trailing CRC32).
void save_graph(const Graph& g, const std::string& path_prefix);
Graph load_graph(const std::string& path_prefix);

void save_quantized_graph(const QuantizedGraph& qg, const std::string& path_prefix);
QuantizedGraph load_quantized_graph(const std::string& path_prefix);

// Reads just the manifest "kind" field.
bool model_is_quantized(const std::string& path_prefix);

// Calibration statistics as a versioned binary file with a trailing CRC32.
void save_stats(const CalibrationRecord& rec, const std::string& path);
CalibrationRecord load_stats(const std::string& path);

}  // namespace sepquant
