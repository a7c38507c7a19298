// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sepquant/calibrate.hpp"
#include "sepquant/dataset.hpp"
#include "sepquant/diagnostics.hpp"
#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/int8_engine.hpp"
#include "sepquant/model_io.hpp"
#include "sepquant/pipeline.hpp"
#include "sepquant/rng.hpp"
#include "sepquant/score.hpp"
#include "sepquant/trainer.hpp"
#include "sepquant/transforms.hpp"

namespace {

using namespace sepquant;
using nlohmann::json;

std::string default_out_root() {
  const char* env = std::getenv("SEPQUANT_OUT");
  return env && *env ? env : "out";
}

RequantMode requant_from_string(const std::string& s) {
  if (s == "float") return RequantMode::kFloatMultiplier;
  if (s == "fixed") return RequantMode::kFixedMultiplier;
  throw DataError("unknown requant mode '" + s + "' (use float or fixed)");
}

void ensure_parent_dir(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

void add_gen_data(CLI::App& app) {
  auto* cmd = app.add_subcommand("gen-data", "Generate the synthetic texture dataset");
  auto spec = std::make_shared<GenSpec>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--seed", spec->seed, "Master seed")->capture_default_str();
  cmd->add_option("--classes", spec->classes, "Number of classes")->capture_default_str();
  cmd->add_option("--image-size", spec->image_size, "Square image size")->capture_default_str();
  cmd->add_option("--train-count", spec->train_count, "Training images")->capture_default_str();
  cmd->add_option("--val-count", spec->val_count, "Validation images")->capture_default_str();
  cmd->add_option("--holdout-count", spec->holdout_count, "Holdout images")
      ->capture_default_str();
  cmd->add_option("--out", *out, "Output directory (default $SEPQUANT_OUT/data)");
  cmd->callback([spec, out] {
    const std::string dir = out->empty() ? default_out_root() + "/data" : *out;
    std::filesystem::create_directories(dir);
    const GeneratedData data = generate(*spec);
    save_dataset(data.train, dir + "/train.bin");
    save_dataset(data.val, dir + "/val.bin");
    save_dataset(data.holdout, dir + "/holdout.bin");
    std::cout << "wrote " << dir << "/{train,val,holdout}.bin\n";
  });
}

void add_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train a model on a generated dataset");
  struct Args {
    std::string train_path, val_path, arch = "baseline", out;
    TrainConfig cfg;
    ArchSpec arch_spec;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--train", a->train_path, "Training dataset file")->required();
  cmd->add_option("--val", a->val_path, "Validation dataset file")->required();
  cmd->add_option("--arch", a->arch, "Architecture: baseline or friendly")
      ->check(CLI::IsMember({"baseline", "friendly"}))
      ->capture_default_str();
  cmd->add_option("--out", a->out, "Output model prefix")->required();
  cmd->add_option("--seed", a->cfg.seed, "Training seed")->capture_default_str();
  cmd->add_option("--epochs", a->cfg.epochs, "Epochs")->capture_default_str();
  cmd->add_option("--lr", a->cfg.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--batch-size", a->cfg.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--momentum", a->cfg.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--weight-decay", a->cfg.weight_decay, "Weight decay")
      ->capture_default_str();
  cmd->add_option("--bn-momentum", a->cfg.bn_momentum, "BN moving-average momentum")
      ->capture_default_str();
  cmd->add_option("--stem-channels", a->arch_spec.stem_channels, "Stem output channels")
      ->capture_default_str();
  cmd->callback([a] {
    const Dataset train_set = load_dataset(a->train_path);
    const Dataset val_set = load_dataset(a->val_path);
    ArchSpec arch = a->arch_spec;
    arch.image_size = static_cast<int>(train_set.images.shape.h());
    arch.in_channels = static_cast<int>(train_set.images.shape.c());
    arch.classes = train_set.classes;
    Graph g = a->arch == "baseline" ? build_baseline_mini(arch) : build_friendly_mini(arch);
    TrainResult res = train(g, train_set, val_set, a->cfg);
    res.graph.meta.name = std::filesystem::path(a->out).filename().string();
    ensure_parent_dir(a->out);
    save_graph(res.graph, a->out);
    if (!res.history.empty()) {
      std::printf("final epoch %d: loss %.6f, val_acc %.4f\n", res.history.back().epoch,
                  res.history.back().loss, res.history.back().val_acc);
    }
    std::cout << "wrote " << a->out << ".json / .bin\n";
  });
}

void add_transform(CLI::App& app) {
  auto* cmd = app.add_subcommand("transform", "Rewrite a float model graph");
  struct Args {
    std::string model, op, out;
    std::size_t layer = 0;
    std::vector<int> channels;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Input model prefix")->required();
  cmd->add_option("--op", a->op, "fold | make-friendly | inject")
      ->check(CLI::IsMember({"fold", "make-friendly", "inject"}))
      ->required();
  cmd->add_option("--out", a->out, "Output model prefix")->required();
  cmd->add_option("--layer", a->layer, "Depthwise layer index (inject)");
  cmd->add_option("--channels", a->channels, "Channel indices (inject)")->delimiter(',');
  cmd->callback([a] {
    const Graph g = load_graph(a->model);
    Graph out;
    if (a->op == "fold") {
      auto [folded, report] = fold_batchnorm(g);
      out = std::move(folded);
      std::printf("folded %zu conv+bn pairs\n", report.folded.size());
    } else if (a->op == "make-friendly") {
      out = make_friendly(g);
    } else {
      if (a->channels.empty()) throw DataError("inject needs --channels");
      out = inject_dead_channels(g, a->layer, a->channels);
    }
    out.meta.name = std::filesystem::path(a->out).filename().string();
    ensure_parent_dir(a->out);
    save_graph(out, a->out);
    std::cout << "wrote " << a->out << ".json / .bin\n";
  });
}

void add_calibrate(CLI::App& app) {
  auto* cmd = app.add_subcommand("calibrate", "Collect activation statistics");
  struct Args {
    std::string model, data, out;
    int per_class = 1;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Float model prefix (BN-folded)")->required();
  cmd->add_option("--data", a->data, "Calibration dataset file")->required();
  cmd->add_option("--out", a->out, "Output stats file")->required();
  cmd->add_option("--per-class", a->per_class, "Images per class")->capture_default_str();
  cmd->callback([a] {
    const Graph g = load_graph(a->model);
    const Dataset d = load_dataset(a->data);
    const Dataset calib = calibration_subset(d, a->per_class);
    const CalibrationRecord rec = collect_stats(g, calib);
    ensure_parent_dir(a->out);
    save_stats(rec, a->out);
    std::cout << "wrote " << a->out << " (" << rec.tensors.size() << " tensors, "
              << calib.size() << " images)\n";
  });
}

void add_quantize(CLI::App& app) {
  auto* cmd = app.add_subcommand("quantize", "Build an 8-bit model from stats");
  struct Args {
    std::string model, stats, out;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Float model prefix (BN-folded)")->required();
  cmd->add_option("--stats", a->stats, "Calibration stats file")->required();
  cmd->add_option("--out", a->out, "Output quantized model prefix")->required();
  cmd->callback([a] {
    const Graph g = load_graph(a->model);
    const CalibrationRecord rec = load_stats(a->stats);
    QuantizedGraph qg = build_quantized_graph(g, rec);
    qg.meta.name = std::filesystem::path(a->out).filename().string();
    ensure_parent_dir(a->out);
    save_quantized_graph(qg, a->out);
    std::cout << "wrote " << a->out << ".json / .bin\n";
  });
}

void add_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Evaluate top-1 accuracy");
  struct Args {
    std::string model, data, requant = "float";
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Model prefix (float or quantized)")->required();
  cmd->add_option("--data", a->data, "Dataset file")->required();
  cmd->add_option("--requant", a->requant, "Requant mode for quantized models")
      ->check(CLI::IsMember({"float", "fixed"}))
      ->capture_default_str();
  cmd->callback([a] {
    const Dataset d = load_dataset(a->data);
    double acc = 0.0;
    if (model_is_quantized(a->model)) {
      acc = evaluate_quantized(load_quantized_graph(a->model), d, requant_from_string(a->requant));
    } else {
      acc = evaluate(load_graph(a->model), d);
    }
    std::printf("top1 %.6f (%lld images)\n", acc, static_cast<long long>(d.size()));
  });
}

void add_diagnose(CLI::App& app) {
  auto* cmd = app.add_subcommand("diagnose", "BN scale profile and int8 degradation");
  struct Args {
    std::string model, quantized, data, out;
    double flag_ratio = 10.0;
    double threshold_db = 10.0;
    std::string requant = "float";
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Float model prefix")->required();
  cmd->add_option("--quantized", a->quantized, "Quantized model prefix (degradation)");
  cmd->add_option("--data", a->data, "Probe dataset file (degradation)");
  cmd->add_option("--out", a->out, "Output directory")->required();
  cmd->add_option("--flag-ratio", a->flag_ratio, "Alpha outlier ratio over median")
      ->capture_default_str();
  cmd->add_option("--threshold-db", a->threshold_db, "Low-SQNR threshold")
      ->capture_default_str();
  cmd->add_option("--requant", a->requant, "Requant mode")
      ->check(CLI::IsMember({"float", "fixed"}))
      ->capture_default_str();
  cmd->callback([a] {
    const Graph g = load_graph(a->model);
    std::filesystem::create_directories(a->out);
    json report;
    report["format_version"] = 1;
    report["alpha"] = json::array();
    const std::vector<AlphaReport> alphas = bn_alpha(g, a->flag_ratio);
    for (const AlphaReport& r : alphas) {
      export_alpha_csv(r, a->out + "/alpha_layer" + std::to_string(r.bn_layer_index) + ".csv");
      report["alpha"].push_back(json{{"bn_layer", r.bn_layer_index},
                                     {"conv_layer", r.conv_layer_index},
                                     {"median_alpha", r.median_alpha},
                                     {"flagged", r.flagged}});
      if (!r.flagged.empty()) {
        std::printf("layer %zu: %zu channel(s) above %.1fx median alpha\n", r.bn_layer_index,
                    r.flagged.size(), a->flag_ratio);
      }
    }
    if (!a->quantized.empty()) {
      if (a->data.empty()) throw DataError("--quantized needs --data for the probe set");
      const QuantizedGraph qg = load_quantized_graph(a->quantized);
      const Dataset probe = load_dataset(a->data);
      const DegradationReport deg = layer_degradation(g, qg, probe, a->threshold_db,
                                                      requant_from_string(a->requant));
      export_degradation_csv(deg, a->out + "/degradation.csv");
      report["degradation"] =
          json{{"first_low_layer", deg.first_low_layer}, {"threshold_db", deg.threshold_db},
               {"float_top1", deg.float_top1},           {"int8_top1", deg.int8_top1},
               {"top1_agreement", deg.top1_agreement}};
      if (deg.first_low_layer >= 0) {
        std::printf("first layer below %.1f dB: %d (%s)\n", a->threshold_db,
                    deg.first_low_layer,
                    qlayer_kind_name(qg.layers[static_cast<std::size_t>(deg.first_low_layer)]));
      } else {
        std::printf("no layer below %.1f dB\n", a->threshold_db);
      }
    }
    const std::string text = report.dump(2) + "\n";
    std::ofstream out(a->out + "/report.json");
    out << text;
    if (!out) throw DataError("failed writing " + a->out + "/report.json");
    std::cout << "wrote " << a->out << "/report.json\n";
  });
}

void add_bench(CLI::App& app) {
  auto* cmd = app.add_subcommand("bench", "Measure per-image latency into a run log");
  struct Args {
    std::string model, data, out, requant = "float";
    int warmup = kLatencyWarmupImages;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--model", a->model, "Model prefix (float or quantized)")->required();
  cmd->add_option("--data", a->data, "Dataset file")->required();
  cmd->add_option("--out", a->out, "Output run log CSV")->required();
  cmd->add_option("--warmup", a->warmup, "Warmup images excluded from the log")
      ->capture_default_str();
  cmd->add_option("--requant", a->requant, "Requant mode for quantized models")
      ->check(CLI::IsMember({"float", "fixed"}))
      ->capture_default_str();
  cmd->callback([a] {
    const Dataset d = load_dataset(a->data);
    RunLog log;
    if (model_is_quantized(a->model)) {
      log = measure_latency(load_quantized_graph(a->model), d,
                            requant_from_string(a->requant), a->warmup);
    } else {
      log = measure_latency(load_graph(a->model), d, a->warmup);
    }
    ensure_parent_dir(a->out);
    save_run_log(log, a->out);
    const ScoreReport r = compute_score(log);
    std::printf("%lld images, mean latency %.3f ms\n", static_cast<long long>(r.images),
                r.mean_latency_ms);
    std::cout << "wrote " << a->out << "\n";
  });
}

void add_score(CLI::App& app) {
  auto* cmd = app.add_subcommand("score", "Score a run log with the prefix budget rule");
  struct Args {
    std::string log, out;
    double budget_ms = kDefaultBudgetMsPerImage;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--log", a->log, "Run log CSV")->required();
  cmd->add_option("--budget-ms", a->budget_ms, "Per-image wall budget in ms")
      ->capture_default_str();
  cmd->add_option("--out", a->out, "Optional JSON report path");
  cmd->callback([a] {
    const RunLog log = load_run_log(a->log);
    const ScoreReport r = compute_score(log, a->budget_ms);
    std::printf("images              %lld\n", static_cast<long long>(r.images));
    std::printf("classified_in_budget %lld\n", static_cast<long long>(r.classified_in_budget));
    std::printf("test_metric         %.8f\n", r.test_metric);
    std::printf("accuracy_over_time  %.10e\n", r.accuracy_over_time);
    std::printf("mean_latency_ms     %.4f\n", r.mean_latency_ms);
    if (!a->out.empty()) {
      json j{{"images", r.images},
             {"classified_in_budget", r.classified_in_budget},
             {"correct_in_budget", r.correct_in_budget},
             {"total_inference_ms", r.total_inference_ms},
             {"wall_budget_ms", r.wall_budget_ms},
             {"budget_ms_per_image", r.budget_ms_per_image},
             {"test_metric", r.test_metric},
             {"accuracy_over_time", r.accuracy_over_time},
             {"mean_latency_ms", r.mean_latency_ms}};
      ensure_parent_dir(a->out);
      std::ofstream out(a->out);
      out << j.dump(2) << "\n";
      if (!out) throw DataError("failed writing " + a->out);
      std::cout << "wrote " << a->out << "\n";
    }
  });
}

void add_pipeline(CLI::App& app) {
  auto* cmd = app.add_subcommand("pipeline", "Run the full train/quantize/score flow");
  struct Args {
    std::string config, out_dir, requant;
    std::uint64_t seed = 0;
    int epochs = -1;
    bool have_seed = false;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--config", a->config, "Config file (key = value with [sections])");
  cmd->add_option("--out", a->out_dir, "Output directory (default $SEPQUANT_OUT)");
  cmd->add_option("--seed", a->seed, "Master seed override");
  cmd->add_option("--epochs", a->epochs, "Training epochs override");
  cmd->add_option("--requant", a->requant, "Requant mode override: float or fixed")
      ->check(CLI::IsMember({"float", "fixed"}));
  auto* seed_opt = cmd->get_option("--seed");
  cmd->callback([a, seed_opt] {
    PipelineConfig cfg;
    if (!a->config.empty()) cfg = load_pipeline_config(a->config);
    else cfg.out_dir = default_out_root();
    if (seed_opt->count() > 0) cfg.seed = a->seed;
    if (!a->out_dir.empty()) cfg.out_dir = a->out_dir;
    if (a->epochs >= 0) cfg.train.epochs = a->epochs;
    if (!a->requant.empty()) cfg.requant_mode = requant_from_string(a->requant);
    const PipelineSummary s = run_pipeline(cfg, &std::cout);
    std::printf("\n%-18s %10s %10s\n", "model", "float", "int8");
    std::printf("%-18s %10.4f %10.4f\n", "baseline(injected)", s.baseline_float,
                s.baseline_int8);
    std::printf("%-18s %10.4f %10.4f\n", "friendly", s.friendly_float, s.friendly_int8);
    std::printf("baseline(clean) float %.4f\n", s.baseline_clean_float);
    std::printf("int8 score: test_metric %.6f, accuracy_over_time %.6e\n",
                s.int8_score.test_metric, s.int8_score.accuracy_over_time);
    std::cout << "summary: " << s.summary_path << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sepquant: separable-conv quantization workbench"};
  app.require_subcommand(1);
  add_gen_data(app);
  add_train(app);
  add_transform(app);
  add_calibrate(app);
  add_quantize(app);
  add_eval(app);
  add_diagnose(app);
  add_bench(app);
  add_score(app);
  add_pipeline(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
