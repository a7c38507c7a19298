// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "io_util.hpp"
#include "sepquant/calibrate.hpp"
#include "sepquant/diagnostics.hpp"
#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/int8_engine.hpp"
#include "sepquant/model_io.hpp"
#include "sepquant/rng.hpp"
#include "sepquant/transforms.hpp"

namespace sepquant {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) throw std::invalid_argument(s);
    std::size_t used = 0;
    out.push_back(std::stoi(t, &used));
    if (used != t.size()) throw std::invalid_argument(s);
  }
  if (out.empty()) throw std::invalid_argument(s);
  return out;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  const std::uint64_t v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

int parse_int(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

RequantMode parse_requant(const std::string& s) {
  if (s == "float" || s == "float_multiplier") return RequantMode::kFloatMultiplier;
  if (s == "fixed" || s == "fixed_multiplier") return RequantMode::kFixedMultiplier;
  throw std::invalid_argument(s);
}

// Returns false when the key is not recognized in the section.
bool apply_config_value(PipelineConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value) {
  if (section == "pipeline") {
    if (key == "seed") cfg.seed = parse_u64(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "calib_per_class") cfg.calib_per_class = parse_int(value);
    else if (key == "requant") cfg.requant_mode = parse_requant(value);
    else if (key == "inject_layer") cfg.inject_layer = static_cast<std::size_t>(parse_u64(value));
    else if (key == "inject_channels") cfg.inject_channels = parse_int_list(value);
    else if (key == "budget_ms") cfg.budget_ms_per_image = parse_double(value);
    else if (key == "alpha_flag_ratio") cfg.alpha_flag_ratio = parse_double(value);
    else return false;
    return true;
  }
  if (section == "data") {
    if (key == "classes") cfg.data.classes = parse_int(value);
    else if (key == "image_size") cfg.data.image_size = parse_int(value);
    else if (key == "train_count") cfg.data.train_count = parse_int(value);
    else if (key == "val_count") cfg.data.val_count = parse_int(value);
    else if (key == "holdout_count") cfg.data.holdout_count = parse_int(value);
    else return false;
    return true;
  }
  if (section == "train") {
    if (key == "learning_rate") cfg.train.learning_rate = parse_double(value);
    else if (key == "momentum") cfg.train.momentum = parse_double(value);
    else if (key == "batch_size") cfg.train.batch_size = parse_int(value);
    else if (key == "epochs") cfg.train.epochs = parse_int(value);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(value);
    else if (key == "bn_momentum") cfg.train.bn_momentum = parse_double(value);
    else return false;
    return true;
  }
  if (section == "arch") {
    if (key == "stem_channels") cfg.arch.stem_channels = parse_int(value);
    else if (key == "stem_stride") cfg.arch.stem_stride = parse_int(value);
    else if (key == "block_channels") cfg.arch.block_channels = parse_int_list(value);
    else return false;
    return true;
  }
  return false;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json score_to_json(const ScoreReport& r) {
  return json{{"images", r.images},
              {"classified_in_budget", r.classified_in_budget},
              {"correct_in_budget", r.correct_in_budget},
              {"total_inference_ms", r.total_inference_ms},
              {"wall_budget_ms", r.wall_budget_ms},
              {"budget_ms_per_image", r.budget_ms_per_image},
              {"test_metric", r.test_metric},
              {"accuracy_over_time", r.accuracy_over_time},
              {"mean_latency_ms", r.mean_latency_ms}};
}

json sqnr_to_json(const SqnrValue& v) {
  switch (v.tag) {
    case SqnrTag::kExact: return json{{"tag", "exact"}};
    case SqnrTag::kZeroSignal: return json{{"tag", "zero_signal"}};
    default: return json{{"tag", "normal"}, {"db", v.db}};
  }
}

class StageLog {
 public:
  explicit StageLog(std::ostream* log) : log_(log) {}

  template <typename Fn>
  void operator()(const std::string& name, Fn&& fn) const {
    if (log_) *log_ << "[pipeline] " << name << "\n" << std::flush;
    try {
      fn();
    } catch (const InternalError& e) {
      throw InternalError("stage '" + name + "': " + e.what());
    } catch (const std::exception& e) {
      throw DataError("stage '" + name + "': " + e.what());
    }
  }

 private:
  std::ostream* log_;
};

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "epoch,loss,val_acc\n";
  for (const EpochStats& e : history) {
    out << e.epoch << "," << format_double(e.loss) << "," << format_double(e.val_acc) << "\n";
  }
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace

PipelineConfig parse_pipeline_config_text(const std::string& text, const std::string& source) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section = "pipeline";
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw DataError(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "pipeline" && section != "data" && section != "train" &&
          section != "arch") {
        throw DataError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw DataError(where + ": empty key");
    try {
      if (!apply_config_value(cfg, section, key, value)) {
        throw DataError(where + ": unknown key '" + key + "' in [" + section + "]");
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      throw DataError(where + ": bad value '" + value + "' for key '" + key + "'");
    }
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  const std::vector<std::uint8_t> buf = io::read_file(path);
  return parse_pipeline_config_text(std::string(buf.begin(), buf.end()), path);
}

PipelineSummary run_pipeline(const PipelineConfig& cfg, std::ostream* log) {
  namespace fs = std::filesystem;
  const StageLog stage(log);
  PipelineSummary summary;
  summary.out_dir = cfg.out_dir;

  const fs::path out(cfg.out_dir);
  stage("setup", [&] {
    fs::create_directories(out / "data");
    fs::create_directories(out / "models");
    fs::create_directories(out / "stats");
    fs::create_directories(out / "diag");
    fs::create_directories(out / "runs");
  });

  GeneratedData data;
  stage("generate-data", [&] {
    GenSpec spec = cfg.data;
    spec.seed = cfg.seed;
    data = generate(spec);
    save_dataset(data.train, (out / "data" / "train.bin").string());
    save_dataset(data.val, (out / "data" / "val.bin").string());
    save_dataset(data.holdout, (out / "data" / "holdout.bin").string());
  });

  ArchSpec arch = cfg.arch;
  arch.image_size = cfg.data.image_size;
  arch.classes = cfg.data.classes;
  arch.in_channels = 1;

  Graph baseline, friendly;
  stage("train-baseline", [&] {
    TrainConfig tc = cfg.train;
    tc.seed = stream_seed(cfg.seed, "baseline");
    TrainResult res = train(build_baseline_mini(arch), data.train, data.val, tc);
    baseline = std::move(res.graph);
    baseline.meta.name = "baseline";
    save_graph(baseline, (out / "models" / "baseline").string());
    write_history_csv(res.history, (out / "models" / "baseline_history.csv").string());
  });

  stage("train-friendly", [&] {
    TrainConfig tc = cfg.train;
    tc.seed = stream_seed(cfg.seed, "friendly");
    TrainResult res = train(build_friendly_mini(arch), data.train, data.val, tc);
    friendly = std::move(res.graph);
    friendly.meta.name = "friendly";
    save_graph(friendly, (out / "models" / "friendly").string());
    write_history_csv(res.history, (out / "models" / "friendly_history.csv").string());
  });

  Graph injected;
  std::vector<AlphaReport> alpha_reports;
  stage("inject-pathology", [&] {
    injected = inject_dead_channels(baseline, cfg.inject_layer, cfg.inject_channels);
    injected.meta.name = "baseline_injected";
    save_graph(injected, (out / "models" / "baseline_injected").string());
    alpha_reports = bn_alpha(injected, cfg.alpha_flag_ratio);
    for (const AlphaReport& r : alpha_reports) {
      if (r.bn_layer_index == cfg.inject_layer + 1) {
        summary.flagged_channels = r.flagged;
        export_alpha_csv(r, (out / "diag" / "alpha.csv").string());
      }
    }
  });

  Graph folded_injected, folded_friendly;
  stage("fold-batchnorm", [&] {
    folded_injected = fold_batchnorm(injected).first;
    folded_injected.meta.name = "baseline_injected_folded";
    save_graph(folded_injected, (out / "models" / "baseline_injected_folded").string());
    folded_friendly = fold_batchnorm(friendly).first;
    folded_friendly.meta.name = "friendly_folded";
    save_graph(folded_friendly, (out / "models" / "friendly_folded").string());
  });

  CalibrationRecord baseline_stats, friendly_stats;
  stage("calibrate", [&] {
    const Dataset calib = calibration_subset(data.train, cfg.calib_per_class);
    baseline_stats = collect_stats(folded_injected, calib);
    save_stats(baseline_stats, (out / "stats" / "baseline_injected.stats").string());
    friendly_stats = collect_stats(folded_friendly, calib);
    save_stats(friendly_stats, (out / "stats" / "friendly.stats").string());
  });

  QuantizedGraph q_injected, q_friendly;
  stage("quantize", [&] {
    q_injected = build_quantized_graph(folded_injected, baseline_stats);
    q_injected.meta.name = "baseline_injected_q";
    save_quantized_graph(q_injected, (out / "models" / "baseline_injected_q").string());
    q_friendly = build_quantized_graph(folded_friendly, friendly_stats);
    q_friendly.meta.name = "friendly_q";
    save_quantized_graph(q_friendly, (out / "models" / "friendly_q").string());
  });

  stage("evaluate", [&] {
    summary.baseline_clean_float = evaluate(baseline, data.val);
    summary.baseline_float = evaluate(folded_injected, data.val);
    summary.baseline_int8 = evaluate_quantized(q_injected, data.val, cfg.requant_mode);
    summary.friendly_float = evaluate(folded_friendly, data.val);
    summary.friendly_int8 = evaluate_quantized(q_friendly, data.val, cfg.requant_mode);
  });

  DegradationReport baseline_deg, friendly_deg;
  stage("diagnose", [&] {
    baseline_deg = layer_degradation(folded_injected, q_injected, data.val, 10.0,
                                     cfg.requant_mode);
    friendly_deg = layer_degradation(folded_friendly, q_friendly, data.val, 10.0,
                                     cfg.requant_mode);
    summary.baseline_first_low_layer = baseline_deg.first_low_layer;
    summary.friendly_first_low_layer = friendly_deg.first_low_layer;
    export_degradation_csv(baseline_deg,
                           (out / "diag" / "baseline_injected_degradation.csv").string());
    export_degradation_csv(friendly_deg, (out / "diag" / "friendly_degradation.csv").string());

    json report;
    report["format_version"] = 1;
    report["alpha"] = json::array();
    for (const AlphaReport& r : alpha_reports) {
      report["alpha"].push_back(json{{"bn_layer", r.bn_layer_index},
                                     {"conv_layer", r.conv_layer_index},
                                     {"median_alpha", r.median_alpha},
                                     {"flagged", r.flagged}});
    }
    auto deg_json = [](const DegradationReport& d) {
      json j;
      j["first_low_layer"] = d.first_low_layer;
      j["threshold_db"] = d.threshold_db;
      j["float_top1"] = d.float_top1;
      j["int8_top1"] = d.int8_top1;
      j["top1_agreement"] = d.top1_agreement;
      j["layer_sqnr"] = json::array();
      for (const SqnrValue& v : d.layer_sqnr) j["layer_sqnr"].push_back(sqnr_to_json(v));
      return j;
    };
    report["degradation"] =
        json{{"baseline_injected", deg_json(baseline_deg)}, {"friendly", deg_json(friendly_deg)}};
    const std::string text = report.dump(2) + "\n";
    io::write_file((out / "diag" / "report.json").string(),
                   std::vector<std::uint8_t>(text.begin(), text.end()));
  });

  RunLog float_log, int8_log;
  stage("benchmark", [&] {
    float_log = measure_latency(folded_friendly, data.holdout);
    save_run_log(float_log, (out / "runs" / "float.csv").string());
    int8_log = measure_latency(q_friendly, data.holdout, cfg.requant_mode);
    save_run_log(int8_log, (out / "runs" / "int8.csv").string());
  });

  stage("score", [&] {
    summary.float_score = compute_score(float_log, cfg.budget_ms_per_image);
    summary.int8_score = compute_score(int8_log, cfg.budget_ms_per_image);
  });

  stage("summary", [&] {
    json j;
    j["format_version"] = 1;
    json results;
    results["seed"] = cfg.seed;
    results["requant_mode"] =
        cfg.requant_mode == RequantMode::kFloatMultiplier ? "float" : "fixed";
    results["accuracy"] = json{{"baseline_clean_float", summary.baseline_clean_float},
                               {"baseline_float", summary.baseline_float},
                               {"baseline_int8", summary.baseline_int8},
                               {"friendly_float", summary.friendly_float},
                               {"friendly_int8", summary.friendly_int8}};
    results["degradation"] = json{{"baseline_first_low_layer", summary.baseline_first_low_layer},
                                  {"friendly_first_low_layer", summary.friendly_first_low_layer}};
    results["flagged_channels"] = summary.flagged_channels;
    j["results"] = std::move(results);
    j["timing"] = json{{"float", score_to_json(summary.float_score)},
                       {"int8", score_to_json(summary.int8_score)}};
    summary.summary_path = (out / "summary.json").string();
    const std::string text = j.dump(2) + "\n";
    io::write_file(summary.summary_path,
                   std::vector<std::uint8_t>(text.begin(), text.end()));
  });

  if (log) {
    *log << "[pipeline] done: baseline_float=" << summary.baseline_float
         << " baseline_int8=" << summary.baseline_int8
         << " friendly_float=" << summary.friendly_float
         << " friendly_int8=" << summary.friendly_int8 << "\n";
  }
  return summary;
}

}  // namespace sepquant
