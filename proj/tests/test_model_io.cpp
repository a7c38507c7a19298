// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "sepquant/calibrate.hpp"
#include "sepquant/dataset.hpp"
#include "sepquant/diagnostics.hpp"
#include "sepquant/error.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/model_io.hpp"
#include "sepquant/score.hpp"
#include "sepquant/trainer.hpp"
#include "sepquant/transforms.hpp"

using namespace sepquant;

namespace {

ArchSpec tiny_arch() {
  ArchSpec a;
  a.image_size = 8;
  a.classes = 4;
  a.stem_channels = 4;
  a.stem_stride = 2;
  a.block_channels = {8};
  return a;
}

GeneratedData tiny_data(std::uint64_t seed) {
  GenSpec spec;
  spec.seed = seed;
  spec.classes = 4;
  spec.image_size = 8;
  spec.train_count = 64;
  spec.val_count = 16;
  spec.holdout_count = 8;
  return generate(spec);
}

std::string temp_prefix(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void remove_model(const std::string& prefix) {
  std::filesystem::remove(prefix + ".json");
  std::filesystem::remove(prefix + ".bin");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

void replace_once(std::string& text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, from.size(), to);
}

// Deterministic quantized model: init -> fold -> calibrate -> quantize.
struct QuantFixture {
  Graph graph;
  Graph folded;
  CalibrationRecord stats;
  QuantizedGraph quant;
};

QuantFixture make_quant_fixture(std::uint64_t seed) {
  QuantFixture f;
  f.graph = init_weights(build_friendly_mini(tiny_arch()), seed);
  f.graph.meta.seed = seed;
  f.folded = fold_batchnorm(f.graph).first;
  const GeneratedData d = tiny_data(seed);
  f.stats = collect_stats(f.folded, calibration_subset(d.train, 2));
  f.quant = build_quantized_graph(f.folded, f.stats);
  return f;
}

void append_crc_and_write(std::vector<std::uint8_t> bytes, const std::string& path) {
  const std::uint32_t crc = io::crc32_of(bytes.data(), bytes.size());
  io::put_u32(bytes, crc);
  io::write_file(path, bytes);
}

}  // namespace

TEST_CASE("float graphs round-trip through save and load") {
  Graph g = init_weights(build_baseline_mini(tiny_arch()), 17);
  g.meta.seed = 17;
  g.meta.notes = "round-trip check";
  const std::string prefix = temp_prefix("sepquant_io_baseline");
  save_graph(g, prefix);
  const Graph back = load_graph(prefix);
  CHECK(back == g);
  remove_model(prefix);

  // The friendly layout exercises biased depthwise layers and plain relu.
  Graph f = init_weights(build_friendly_mini(tiny_arch()), 18);
  const std::string fprefix = temp_prefix("sepquant_io_friendly");
  save_graph(f, fprefix);
  CHECK(load_graph(fprefix) == f);
  remove_model(fprefix);
}

TEST_CASE("quantized graphs round-trip through save and load") {
  const QuantFixture f = make_quant_fixture(23);
  const std::string prefix = temp_prefix("sepquant_io_quant");
  save_quantized_graph(f.quant, prefix);
  const QuantizedGraph back = load_quantized_graph(prefix);
  CHECK(back == f.quant);
  remove_model(prefix);
}

TEST_CASE("model_is_quantized reads the manifest kind") {
  const QuantFixture f = make_quant_fixture(29);
  const std::string fprefix = temp_prefix("sepquant_io_kind_float");
  const std::string qprefix = temp_prefix("sepquant_io_kind_quant");
  save_graph(f.graph, fprefix);
  save_quantized_graph(f.quant, qprefix);
  CHECK_FALSE(model_is_quantized(fprefix));
  CHECK(model_is_quantized(qprefix));

  // Loading under the wrong kind names both kinds in the error.
  CHECK_THROWS_WITH_AS(load_graph(qprefix), doctest::Contains("expected 'float'"), DataError);
  CHECK_THROWS_WITH_AS(load_quantized_graph(fprefix),
                       doctest::Contains("expected 'quantized'"), DataError);

  std::string text = read_text(fprefix + ".json");
  replace_once(text, "\"kind\": \"float\"", "\"kind\": \"mystery\"");
  write_text(fprefix + ".json", text);
  CHECK_THROWS_WITH_AS(model_is_quantized(fprefix),
                       doctest::Contains("unknown manifest kind 'mystery'"), DataError);

  remove_model(fprefix);
  remove_model(qprefix);
  CHECK_THROWS_WITH_AS(model_is_quantized(fprefix), doctest::Contains("cannot open"),
                       DataError);
}

TEST_CASE("corrupted model files are rejected") {
  Graph g = init_weights(build_baseline_mini(tiny_arch()), 31);
  const std::string prefix = temp_prefix("sepquant_io_corrupt");
  save_graph(g, prefix);

  SUBCASE("a flipped payload byte breaks the checksum") {
    std::vector<std::uint8_t> bin = io::read_file(prefix + ".bin");
    bin[bin.size() / 2] ^= 0x40;
    io::write_file(prefix + ".bin", bin);
    CHECK_THROWS_WITH_AS(load_graph(prefix), doctest::Contains("checksum mismatch"),
                         DataError);
  }

  SUBCASE("a truncated blob cannot even hold the checksum") {
    io::write_file(prefix + ".bin", {0x01, 0x02, 0x03});
    CHECK_THROWS_WITH_AS(load_graph(prefix), doctest::Contains("too small"), DataError);
  }

  SUBCASE("unsupported format versions are refused") {
    std::string text = read_text(prefix + ".json");
    replace_once(text, "\"format_version\": 1", "\"format_version\": 9");
    write_text(prefix + ".json", text);
    CHECK_THROWS_WITH_AS(load_graph(prefix),
                         doctest::Contains("unsupported format version 9"), DataError);
  }

  SUBCASE("unknown layer kinds are named with the format version") {
    std::string text = read_text(prefix + ".json");
    replace_once(text, "\"kind\": \"conv2d\"", "\"kind\": \"helix\"");
    write_text(prefix + ".json", text);
    CHECK_THROWS_WITH_AS(load_graph(prefix),
                         doctest::Contains("unknown layer kind 'helix' (format_version 1)"),
                         DataError);
  }

  SUBCASE("non-JSON manifests fail with the path") {
    write_text(prefix + ".json", "not a manifest");
    CHECK_THROWS_WITH_AS(load_graph(prefix), doctest::Contains((prefix + ".json").c_str()),
                         DataError);
  }

  remove_model(prefix);
}

TEST_CASE("calibration stats round-trip with a checksum") {
  const QuantFixture f = make_quant_fixture(37);
  const std::string path = temp_prefix("sepquant_io_stats.bin");
  save_stats(f.stats, path);
  const CalibrationRecord back = load_stats(path);
  CHECK(back == f.stats);

  std::vector<std::uint8_t> raw = io::read_file(path);
  raw[raw.size() / 2] ^= 0x10;
  io::write_file(path, raw);
  CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("checksum mismatch"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("stats files with bad headers are rejected") {
  const std::string path = temp_prefix("sepquant_io_stats_bad.bin");

  SUBCASE("wrong magic") {
    std::vector<std::uint8_t> bytes;
    io::put_u32(bytes, 0xDEADBEEFu);
    io::put_u32(bytes, 1);
    io::put_u32(bytes, 0);
    append_crc_and_write(std::move(bytes), path);
    CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("not a calibration stats file"),
                         DataError);
  }

  SUBCASE("unsupported version") {
    std::vector<std::uint8_t> bytes;
    io::put_u32(bytes, 0x54535153u);
    io::put_u32(bytes, 2);
    io::put_u32(bytes, 0);
    append_crc_and_write(std::move(bytes), path);
    CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("unsupported stats version 2"),
                         DataError);
  }

  SUBCASE("trailing bytes after the last record") {
    std::vector<std::uint8_t> bytes;
    io::put_u32(bytes, 0x54535153u);
    io::put_u32(bytes, 1);
    io::put_u32(bytes, 0);
    io::put_u32(bytes, 7);
    append_crc_and_write(std::move(bytes), path);
    CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("trailing bytes"), DataError);
  }

  SUBCASE("histogram bin count must match the build") {
    std::vector<std::uint8_t> bytes;
    io::put_u32(bytes, 0x54535153u);
    io::put_u32(bytes, 1);
    io::put_u32(bytes, 1);
    io::put_u16(bytes, 1);
    bytes.push_back('x');
    io::put_f64(bytes, 0.0);
    io::put_f64(bytes, 1.0);
    io::put_u64(bytes, 5);
    io::put_u32(bytes, 7);
    for (int i = 0; i < 7; ++i) io::put_u64(bytes, 0);
    append_crc_and_write(std::move(bytes), path);
    CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("histogram bin count 7"),
                         DataError);
  }

  SUBCASE("duplicate keys") {
    std::vector<std::uint8_t> bytes;
    io::put_u32(bytes, 0x54535153u);
    io::put_u32(bytes, 1);
    io::put_u32(bytes, 2);
    for (int rec = 0; rec < 2; ++rec) {
      io::put_u16(bytes, 1);
      bytes.push_back('x');
      io::put_f64(bytes, 0.0);
      io::put_f64(bytes, 1.0);
      io::put_u64(bytes, 5);
      io::put_u32(bytes, static_cast<std::uint32_t>(kHistogramBins));
      for (int i = 0; i < kHistogramBins; ++i) io::put_u64(bytes, 0);
    }
    append_crc_and_write(std::move(bytes), path);
    CHECK_THROWS_WITH_AS(load_stats(path), doctest::Contains("duplicate stats key"),
                         DataError);
  }

  std::filesystem::remove(path);
}

RunLog golden_run_log() {
  RunLog log;
  log.engine = "int8";
  log.model_name = "friendly_init";
  for (int i = 0; i < 12; ++i) {
    log.entries.push_back({i, 0.25 + 0.0625 * (i % 4), i % 5, (i * 2) % 5});
  }
  return log;
}

TEST_CASE("golden fixtures stay loadable and bit-identical") {
  const std::string dir = SEPQUANT_GOLDEN_DIR;
  const QuantFixture f = make_quant_fixture(333);
  const RunLog run = golden_run_log();
  const AlphaReport alpha = bn_alpha(f.graph).at(0);
  const DegradationReport deg = layer_degradation(f.folded, f.quant, tiny_data(333).val);

  if (std::getenv("SEPQUANT_REGEN_GOLDEN") != nullptr) {
    std::filesystem::create_directories(dir);
    save_graph(f.graph, dir + "/friendly_init");
    save_quantized_graph(f.quant, dir + "/friendly_init_quant");
    save_stats(f.stats, dir + "/friendly_init_stats.bin");
    save_run_log(run, dir + "/friendly_init_run.csv");
    export_alpha_csv(alpha, dir + "/friendly_init_alpha.csv");
    export_degradation_csv(deg, dir + "/friendly_init_degradation.csv");
    MESSAGE("regenerated golden fixtures in " << dir);
  } else {
    REQUIRE_MESSAGE(std::filesystem::exists(dir + "/friendly_init.json"),
                    "golden fixtures missing; run with SEPQUANT_REGEN_GOLDEN=1");
    CHECK(load_graph(dir + "/friendly_init") == f.graph);
    CHECK(load_quantized_graph(dir + "/friendly_init_quant") == f.quant);
    CHECK(load_stats(dir + "/friendly_init_stats.bin") == f.stats);
    CHECK(load_run_log(dir + "/friendly_init_run.csv") == run);

    // Serialization itself must be reproducible byte for byte. The manifest
    // embeds its .bin basename, so the scratch copies keep the golden names.
    const std::filesystem::path scratch =
        std::filesystem::temp_directory_path() / "sepquant_golden_check";
    std::filesystem::create_directories(scratch);
    for (const char* stem : {"friendly_init", "friendly_init_quant"}) {
      const std::string fresh = (scratch / stem).string();
      const std::string golden = dir + "/" + stem;
      if (std::string(stem) == "friendly_init") {
        save_graph(f.graph, fresh);
      } else {
        save_quantized_graph(f.quant, fresh);
      }
      CHECK(io::read_file(fresh + ".json") == io::read_file(golden + ".json"));
      CHECK(io::read_file(fresh + ".bin") == io::read_file(golden + ".bin"));
    }
    const std::string stats_path = (scratch / "friendly_init_stats.bin").string();
    save_stats(f.stats, stats_path);
    CHECK(io::read_file(stats_path) == io::read_file(dir + "/friendly_init_stats.bin"));
    const std::string run_path = (scratch / "friendly_init_run.csv").string();
    save_run_log(run, run_path);
    CHECK(io::read_file(run_path) == io::read_file(dir + "/friendly_init_run.csv"));
    const std::string alpha_path = (scratch / "friendly_init_alpha.csv").string();
    export_alpha_csv(alpha, alpha_path);
    CHECK(io::read_file(alpha_path) == io::read_file(dir + "/friendly_init_alpha.csv"));
    const std::string deg_path = (scratch / "friendly_init_degradation.csv").string();
    export_degradation_csv(deg, deg_path);
    CHECK(io::read_file(deg_path) == io::read_file(dir + "/friendly_init_degradation.csv"));
    std::filesystem::remove_all(scratch);
  }
}
