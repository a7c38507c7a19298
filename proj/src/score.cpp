// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/score.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/int8_engine.hpp"

namespace sepquant {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename Infer>
RunLog measure_with(const Dataset& d, int warmup, Infer&& infer) {
  const std::int64_t n = d.size();
  if (n == 0) throw DataError("cannot measure latency on an empty dataset");
  if (warmup < 0) throw DataError("warmup count must be non-negative");

  RunLog log;
  const std::int64_t warm = std::min<std::int64_t>(warmup, n);
  for (std::int64_t i = 0; i < warm; ++i) {
    (void)infer(image_at(d, i));
  }
  log.entries.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const TensorF32 img = image_at(d, i);
    const auto t0 = Clock::now();
    const int predicted = infer(img);
    const auto t1 = Clock::now();
    log.entries.push_back(RunEntry{i, ms_between(t0, t1), predicted,
                                   static_cast<int>(d.labels[static_cast<std::size_t>(i)])});
  }
  return log;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) fields.push_back(trim(cur));
  return fields;
}

}  // namespace

RunLog measure_latency(const Graph& g, const Dataset& d, int warmup) {
  RunLog log = measure_with(d, warmup, [&g](const TensorF32& img) {
    return argmax_class(forward(g, img));
  });
  log.engine = "float";
  log.model_name = g.meta.name;
  return log;
}

RunLog measure_latency(const QuantizedGraph& qg, const Dataset& d, RequantMode mode,
                       int warmup) {
  RunLog log = measure_with(d, warmup, [&qg, mode](const TensorF32& img) {
    return forward_quantized(qg, img, mode).label;
  });
  log.engine = "int8";
  log.model_name = qg.meta.name;
  return log;
}

ScoreReport compute_score(const RunLog& log, double budget_ms_per_image) {
  if (log.entries.empty()) throw DataError("cannot score an empty run log");
  if (!(budget_ms_per_image > 0.0) || !std::isfinite(budget_ms_per_image)) {
    throw DataError("per-image budget must be positive and finite");
  }
  ScoreReport r;
  r.images = static_cast<std::int64_t>(log.entries.size());
  r.budget_ms_per_image = budget_ms_per_image;
  r.wall_budget_ms = budget_ms_per_image * static_cast<double>(r.images);

  for (const RunEntry& e : log.entries) {
    if (!(e.latency_ms >= 0.0) || !std::isfinite(e.latency_ms)) {
      throw DataError("run log has a negative or non-finite latency");
    }
    r.total_inference_ms += e.latency_ms;
  }

  double elapsed = 0.0;
  for (const RunEntry& e : log.entries) {
    elapsed += e.latency_ms;
    if (elapsed > r.wall_budget_ms) break;
    ++r.classified_in_budget;
    if (e.predicted == e.truth) ++r.correct_in_budget;
  }

  r.test_metric = static_cast<double>(r.correct_in_budget) / static_cast<double>(r.images);
  r.accuracy_over_time = r.test_metric / std::max(r.total_inference_ms, r.wall_budget_ms);
  r.mean_latency_ms = r.total_inference_ms / static_cast<double>(r.images);
  return r;
}

void save_run_log(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "# engine=" << log.engine << "\n";
  out << "# model=" << log.model_name << "\n";
  out << "index,latency_ms,predicted,truth\n";
  for (const RunEntry& e : log.entries) {
    out << e.index << "," << format_double(e.latency_ms) << "," << e.predicted << ","
        << e.truth << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

RunLog load_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  RunLog log;
  std::string line;
  bool saw_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string body = trim(t.substr(1));
      if (body.rfind("engine=", 0) == 0) log.engine = body.substr(7);
      if (body.rfind("model=", 0) == 0) log.model_name = body.substr(6);
      continue;
    }
    if (!saw_header) {
      if (t != "index,latency_ms,predicted,truth") {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad run log header");
      }
      saw_header = true;
      continue;
    }
    const std::vector<std::string> f = split_csv_row(t);
    if (f.size() != 4) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 4 fields");
    }
    try {
      RunEntry e;
      std::size_t used = 0;
      e.index = std::stoll(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument(f[0]);
      e.latency_ms = std::stod(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument(f[1]);
      e.predicted = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
      e.truth = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument(f[3]);
      if (!(e.latency_ms >= 0.0) || !std::isfinite(e.latency_ms)) {
        throw std::invalid_argument(f[1]);
      }
      log.entries.push_back(e);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed run log row");
    }
  }
  if (!saw_header) throw DataError(path + ": missing run log header");
  return log;
}

}  // namespace sepquant
