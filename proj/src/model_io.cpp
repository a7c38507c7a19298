// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/model_io.hpp"

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "io_util.hpp"
#include "sepquant/error.hpp"

namespace sepquant {

namespace {

using nlohmann::json;

constexpr std::uint32_t kStatsMagic = 0x54535153u;  // "SQST"
constexpr std::uint32_t kStatsVersion = 1;

const char* padding_name(Padding p) { return p == Padding::kSame ? "same" : "valid"; }

Padding parse_padding(const std::string& s) {
  if (s == "same") return Padding::kSame;
  if (s == "valid") return Padding::kValid;
  throw DataError("unknown padding '" + s + "'");
}

const char* activation_name(ActivationKind k) {
  return k == ActivationKind::kRelu ? "relu" : "relu6";
}

ActivationKind parse_activation(const std::string& s) {
  if (s == "relu") return ActivationKind::kRelu;
  if (s == "relu6") return ActivationKind::kRelu6;
  throw DataError("unknown activation '" + s + "'");
}

json shape_to_json(const Shape& s) {
  return json::array({s.dims[0], s.dims[1], s.dims[2], s.dims[3]});
}

Shape shape_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("shape must be a 4-element array");
  Shape s;
  for (std::size_t i = 0; i < 4; ++i) s.dims[i] = j[i].get<std::int64_t>();
  return s;
}

json qparams_to_json(const QuantParams& q) {
  return json{{"delta", q.delta}, {"zero_point", q.zero_point}};
}

QuantParams qparams_from_json(const json& j) {
  QuantParams q;
  q.delta = j.at("delta").get<double>();
  q.zero_point = j.at("zero_point").get<int>();
  if (!q.valid()) throw DataError("invalid quantization params in manifest");
  return q;
}

class BlobWriter {
 public:
  json add_f32(const std::vector<float>& v) {
    json t{{"dtype", "f32"}, {"offset", bytes_.size()}, {"length", v.size() * 4}};
    for (float x : v) io::put_f32(bytes_, x);
    return t;
  }

  json add_i32(const std::vector<std::int32_t>& v) {
    json t{{"dtype", "i32"}, {"offset", bytes_.size()}, {"length", v.size() * 4}};
    for (std::int32_t x : v) io::put_i32(bytes_, x);
    return t;
  }

  json add_u8(const std::vector<std::uint8_t>& v) {
    json t{{"dtype", "u8"}, {"offset", bytes_.size()}, {"length", v.size()}};
    bytes_.insert(bytes_.end(), v.begin(), v.end());
    return t;
  }

  std::vector<std::uint8_t> finish() {
    const std::uint32_t crc = io::crc32_of(bytes_.data(), bytes_.size());
    io::put_u32(bytes_, crc);
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class BlobReader {
 public:
  BlobReader(std::vector<std::uint8_t> payload, std::string source)
      : bytes_(std::move(payload)), source_(std::move(source)) {}

  std::vector<float> f32(const json& t, std::size_t count) const {
    io::ByteReader r = slice(t, "f32", count * 4);
    std::vector<float> v(count);
    for (auto& x : v) x = r.f32();
    return v;
  }

  std::vector<std::int32_t> i32(const json& t, std::size_t count) const {
    io::ByteReader r = slice(t, "i32", count * 4);
    std::vector<std::int32_t> v(count);
    for (auto& x : v) x = r.i32();
    return v;
  }

  std::vector<std::uint8_t> u8(const json& t, std::size_t count) const {
    io::ByteReader r = slice(t, "u8", count);
    std::vector<std::uint8_t> v(count);
    r.bytes(v.data(), count);
    return v;
  }

 private:
  io::ByteReader slice(const json& t, const char* dtype, std::size_t expect_bytes) const {
    const std::string dt = t.at("dtype").get<std::string>();
    if (dt != dtype) {
      throw DataError(source_ + ": expected dtype " + dtype + ", found " + dt);
    }
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto length = t.at("length").get<std::uint64_t>();
    if (length != expect_bytes) {
      throw DataError(source_ + ": tensor length " + std::to_string(length) +
                      " does not match its shape (" + std::to_string(expect_bytes) + " bytes)");
    }
    if (offset + length > bytes_.size()) {
      throw DataError(source_ + ": tensor range is out of bounds");
    }
    return io::ByteReader(bytes_.data() + offset, length, source_);
  }

  std::vector<std::uint8_t> bytes_;
  std::string source_;
};

std::vector<std::uint8_t> strip_verified_crc(std::vector<std::uint8_t> buf,
                                             const std::string& path) {
  if (buf.size() < 4) throw DataError(path + ": file too small for a checksum");
  const std::size_t n = buf.size() - 4;
  const std::uint32_t stored = static_cast<std::uint32_t>(buf[n]) |
                               static_cast<std::uint32_t>(buf[n + 1]) << 8 |
                               static_cast<std::uint32_t>(buf[n + 2]) << 16 |
                               static_cast<std::uint32_t>(buf[n + 3]) << 24;
  if (io::crc32_of(buf.data(), n) != stored) throw DataError(path + ": checksum mismatch");
  buf.resize(n);
  return buf;
}

json parse_json_file(const std::string& path) {
  const std::vector<std::uint8_t> buf = io::read_file(path);
  try {
    return json::parse(buf.begin(), buf.end());
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

json meta_to_json(const GraphMeta& meta) {
  return json{{"name", meta.name}, {"seed", meta.seed}, {"notes", meta.notes}};
}

GraphMeta meta_from_json(const json& j) {
  GraphMeta meta;
  meta.name = j.at("name").get<std::string>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.notes = j.at("notes").get<std::string>();
  return meta;
}

std::string file_stem(const std::string& path_prefix) {
  const auto slash = path_prefix.find_last_of("/\\");
  return slash == std::string::npos ? path_prefix : path_prefix.substr(slash + 1);
}

json manifest_header(const std::string& kind, const GraphMeta& meta, const Shape& input_shape,
                     const std::string& path_prefix) {
  json m;
  m["format_version"] = kModelFormatVersion;
  m["kind"] = kind;
  m["meta"] = meta_to_json(meta);
  m["input_shape"] = shape_to_json(input_shape);
  m["weights_file"] = file_stem(path_prefix) + ".bin";
  return m;
}

json load_manifest(const std::string& path_prefix, const std::string& expect_kind) {
  const std::string path = path_prefix + ".json";
  const json m = parse_json_file(path);
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw DataError(path + ": unsupported format version " + std::to_string(version));
    }
    const std::string kind = m.at("kind").get<std::string>();
    if (kind != expect_kind) {
      throw DataError(path + ": manifest kind is '" + kind + "', expected '" + expect_kind +
                      "'");
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return m;
}

std::size_t checked_count(const Shape& s) {
  const std::int64_t n = s.numel();
  if (n <= 0) throw DataError("tensor shape has non-positive element count");
  return static_cast<std::size_t>(n);
}

void write_manifest(const json& manifest, const std::string& path) {
  const std::string text = manifest.dump(2) + "\n";
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace

void save_graph(const Graph& g, const std::string& path_prefix) {
  BlobWriter blob;
  json manifest = manifest_header("float", g.meta, g.input_shape, path_prefix);
  json layers = json::array();
  for (const LayerSpec& layer : g.layers) {
    json jl;
    if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      jl["kind"] = "conv2d";
      jl["stride"] = conv->stride;
      jl["padding"] = padding_name(conv->padding);
      jl["weights"] = blob.add_f32(conv->weights.data);
      jl["weights"]["shape"] = shape_to_json(conv->weights.shape);
      if (conv->bias) jl["bias"] = blob.add_f32(*conv->bias);
    } else if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      jl["kind"] = "depthwise_conv2d";
      jl["stride"] = dw->stride;
      jl["padding"] = padding_name(dw->padding);
      jl["weights"] = blob.add_f32(dw->weights.data);
      jl["weights"]["shape"] = shape_to_json(dw->weights.shape);
      if (dw->bias) jl["bias"] = blob.add_f32(*dw->bias);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      jl["kind"] = "batch_norm";
      jl["epsilon"] = bn->epsilon;
      jl["gamma"] = blob.add_f32(bn->gamma);
      jl["beta"] = blob.add_f32(bn->beta);
      jl["mean"] = blob.add_f32(bn->mean);
      jl["variance"] = blob.add_f32(bn->variance);
    } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
      jl["kind"] = "activation";
      jl["activation"] = activation_name(act->kind);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      jl["kind"] = "global_avg_pool";
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      jl["kind"] = "dense";
      jl["weights"] = blob.add_f32(d->weights.data);
      jl["weights"]["shape"] = shape_to_json(d->weights.shape);
      jl["bias"] = blob.add_f32(d->bias);
    } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
      jl["kind"] = "softmax";
    } else {
      throw InternalError("save_graph: unknown layer kind");
    }
    layers.push_back(std::move(jl));
  }
  manifest["layers"] = std::move(layers);
  io::write_file(path_prefix + ".bin", blob.finish());
  write_manifest(manifest, path_prefix + ".json");
}

Graph load_graph(const std::string& path_prefix) {
  const std::string json_path = path_prefix + ".json";
  const json manifest = load_manifest(path_prefix, "float");
  const BlobReader blob(strip_verified_crc(io::read_file(path_prefix + ".bin"),
                                           path_prefix + ".bin"),
                        path_prefix + ".bin");
  Graph g;
  try {
    g.meta = meta_from_json(manifest.at("meta"));
    g.input_shape = shape_from_json(manifest.at("input_shape"));
    for (const json& jl : manifest.at("layers")) {
      const std::string kind = jl.at("kind").get<std::string>();
      if (kind == "conv2d" || kind == "depthwise_conv2d") {
        const Shape ws = shape_from_json(jl.at("weights").at("shape"));
        TensorF32 w(ws, blob.f32(jl.at("weights"), checked_count(ws)));
        std::optional<std::vector<float>> bias;
        if (jl.contains("bias")) {
          const std::size_t n = jl.at("bias").at("length").get<std::size_t>() / 4;
          bias = blob.f32(jl.at("bias"), n);
        }
        const int stride = jl.at("stride").get<int>();
        const Padding pad = parse_padding(jl.at("padding").get<std::string>());
        if (kind == "conv2d") {
          g.layers.emplace_back(Conv2DLayer{stride, pad, std::move(w), std::move(bias)});
        } else {
          g.layers.emplace_back(DepthwiseConv2DLayer{stride, pad, std::move(w), std::move(bias)});
        }
      } else if (kind == "batch_norm") {
        BatchNormLayer bn;
        bn.epsilon = jl.at("epsilon").get<float>();
        const std::size_t n = jl.at("gamma").at("length").get<std::size_t>() / 4;
        bn.gamma = blob.f32(jl.at("gamma"), n);
        bn.beta = blob.f32(jl.at("beta"), n);
        bn.mean = blob.f32(jl.at("mean"), n);
        bn.variance = blob.f32(jl.at("variance"), n);
        g.layers.emplace_back(std::move(bn));
      } else if (kind == "activation") {
        g.layers.emplace_back(
            ActivationLayer{parse_activation(jl.at("activation").get<std::string>())});
      } else if (kind == "global_avg_pool") {
        g.layers.emplace_back(GlobalAvgPoolLayer{});
      } else if (kind == "dense") {
        const Shape ws = shape_from_json(jl.at("weights").at("shape"));
        DenseLayer d;
        d.weights = TensorF32(ws, blob.f32(jl.at("weights"), checked_count(ws)));
        const std::size_t n = jl.at("bias").at("length").get<std::size_t>() / 4;
        d.bias = blob.f32(jl.at("bias"), n);
        g.layers.emplace_back(std::move(d));
      } else if (kind == "softmax") {
        g.layers.emplace_back(SoftmaxLayer{});
      } else {
        throw DataError(json_path + ": unknown layer kind '" + kind + "' (format_version " +
                        std::to_string(kModelFormatVersion) + ")");
      }
    }
  } catch (const json::exception& e) {
    throw DataError(json_path + ": " + e.what());
  }
  infer_shapes(g);
  return g;
}

void save_quantized_graph(const QuantizedGraph& qg, const std::string& path_prefix) {
  if (qg.layers.size() != qg.output_qparams.size()) {
    throw InternalError("quantized graph has mismatched layer and qparam counts");
  }
  BlobWriter blob;
  json manifest = manifest_header("quantized", qg.meta, qg.input_shape, path_prefix);
  manifest["input_qparams"] = qparams_to_json(qg.input_qparams);
  json layers = json::array();
  json out_q = json::array();
  for (std::size_t i = 0; i < qg.layers.size(); ++i) {
    const QLayerSpec& layer = qg.layers[i];
    out_q.push_back(qparams_to_json(qg.output_qparams[i]));
    json jl;
    auto add_weights = [&blob, &jl](const TensorU8& w) {
      jl["weights"] = blob.add_u8(w.data);
      jl["weights"]["shape"] = shape_to_json(w.shape);
      jl["weights"]["qparams"] = qparams_to_json(w.qparams);
    };
    if (const auto* conv = std::get_if<QConv2DLayer>(&layer)) {
      jl["kind"] = "conv2d";
      jl["stride"] = conv->stride;
      jl["padding"] = padding_name(conv->padding);
      add_weights(conv->weights);
      if (!conv->bias.empty()) jl["bias"] = blob.add_i32(conv->bias);
    } else if (const auto* dw = std::get_if<QDepthwiseConv2DLayer>(&layer)) {
      jl["kind"] = "depthwise_conv2d";
      jl["stride"] = dw->stride;
      jl["padding"] = padding_name(dw->padding);
      add_weights(dw->weights);
      if (!dw->bias.empty()) jl["bias"] = blob.add_i32(dw->bias);
    } else if (const auto* act = std::get_if<QActivationLayer>(&layer)) {
      jl["kind"] = "activation";
      jl["activation"] = activation_name(act->kind);
    } else if (std::holds_alternative<QGlobalAvgPoolLayer>(layer)) {
      jl["kind"] = "global_avg_pool";
    } else if (const auto* d = std::get_if<QDenseLayer>(&layer)) {
      jl["kind"] = "dense";
      add_weights(d->weights);
      if (!d->bias.empty()) jl["bias"] = blob.add_i32(d->bias);
    } else if (std::holds_alternative<QSoftmaxLayer>(layer)) {
      jl["kind"] = "softmax";
    } else {
      throw InternalError("save_quantized_graph: unknown layer kind");
    }
    layers.push_back(std::move(jl));
  }
  manifest["layers"] = std::move(layers);
  manifest["output_qparams"] = std::move(out_q);
  io::write_file(path_prefix + ".bin", blob.finish());
  write_manifest(manifest, path_prefix + ".json");
}

QuantizedGraph load_quantized_graph(const std::string& path_prefix) {
  const std::string json_path = path_prefix + ".json";
  const json manifest = load_manifest(path_prefix, "quantized");
  const BlobReader blob(strip_verified_crc(io::read_file(path_prefix + ".bin"),
                                           path_prefix + ".bin"),
                        path_prefix + ".bin");
  QuantizedGraph qg;
  try {
    qg.meta = meta_from_json(manifest.at("meta"));
    qg.input_shape = shape_from_json(manifest.at("input_shape"));
    qg.input_qparams = qparams_from_json(manifest.at("input_qparams"));
    auto read_weights = [&blob](const json& jl) {
      const json& jw = jl.at("weights");
      const Shape ws = shape_from_json(jw.at("shape"));
      return TensorU8(ws, blob.u8(jw, checked_count(ws)), qparams_from_json(jw.at("qparams")));
    };
    auto read_bias = [&blob](const json& jl) -> std::vector<std::int32_t> {
      if (!jl.contains("bias")) return {};
      const std::size_t n = jl.at("bias").at("length").get<std::size_t>() / 4;
      return blob.i32(jl.at("bias"), n);
    };
    for (const json& jl : manifest.at("layers")) {
      const std::string kind = jl.at("kind").get<std::string>();
      if (kind == "conv2d") {
        QConv2DLayer l;
        l.stride = jl.at("stride").get<int>();
        l.padding = parse_padding(jl.at("padding").get<std::string>());
        l.weights = read_weights(jl);
        l.bias = read_bias(jl);
        qg.layers.emplace_back(std::move(l));
      } else if (kind == "depthwise_conv2d") {
        QDepthwiseConv2DLayer l;
        l.stride = jl.at("stride").get<int>();
        l.padding = parse_padding(jl.at("padding").get<std::string>());
        l.weights = read_weights(jl);
        l.bias = read_bias(jl);
        qg.layers.emplace_back(std::move(l));
      } else if (kind == "activation") {
        qg.layers.emplace_back(
            QActivationLayer{parse_activation(jl.at("activation").get<std::string>())});
      } else if (kind == "global_avg_pool") {
        qg.layers.emplace_back(QGlobalAvgPoolLayer{});
      } else if (kind == "dense") {
        QDenseLayer l;
        l.weights = read_weights(jl);
        l.bias = read_bias(jl);
        qg.layers.emplace_back(std::move(l));
      } else if (kind == "softmax") {
        qg.layers.emplace_back(QSoftmaxLayer{});
      } else {
        throw DataError(json_path + ": unknown layer kind '" + kind + "' (format_version " +
                        std::to_string(kModelFormatVersion) + ")");
      }
    }
    for (const json& jq : manifest.at("output_qparams")) {
      qg.output_qparams.push_back(qparams_from_json(jq));
    }
  } catch (const json::exception& e) {
    throw DataError(json_path + ": " + e.what());
  }
  if (qg.layers.size() != qg.output_qparams.size()) {
    throw DataError(json_path + ": layer and output_qparams counts differ");
  }
  return qg;
}

bool model_is_quantized(const std::string& path_prefix) {
  const std::string path = path_prefix + ".json";
  const json m = parse_json_file(path);
  try {
    const std::string kind = m.at("kind").get<std::string>();
    if (kind == "quantized") return true;
    if (kind == "float") return false;
    throw DataError(path + ": unknown manifest kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_stats(const CalibrationRecord& rec, const std::string& path) {
  std::vector<std::uint8_t> out;
  io::put_u32(out, kStatsMagic);
  io::put_u32(out, kStatsVersion);
  io::put_u32(out, static_cast<std::uint32_t>(rec.tensors.size()));
  for (const auto& [key, st] : rec.tensors) {
    if (key.size() > 0xffff) throw DataError("stats key too long");
    io::put_u16(out, static_cast<std::uint16_t>(key.size()));
    out.insert(out.end(), key.begin(), key.end());
    io::put_f64(out, st.min);
    io::put_f64(out, st.max);
    io::put_u64(out, st.sample_count);
    io::put_u32(out, static_cast<std::uint32_t>(st.histogram.size()));
    for (std::uint64_t h : st.histogram) io::put_u64(out, h);
  }
  const std::uint32_t crc = io::crc32_of(out.data(), out.size());
  io::put_u32(out, crc);
  io::write_file(path, out);
}

CalibrationRecord load_stats(const std::string& path) {
  const std::vector<std::uint8_t> payload = strip_verified_crc(io::read_file(path), path);
  io::ByteReader r(payload.data(), payload.size(), path);
  if (r.u32() != kStatsMagic) throw DataError(path + ": not a calibration stats file");
  const std::uint32_t version = r.u32();
  if (version != kStatsVersion) {
    throw DataError(path + ": unsupported stats version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  CalibrationRecord rec;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t key_len = r.u16();
    std::string key(key_len, '\0');
    r.bytes(reinterpret_cast<std::uint8_t*>(key.data()), key_len);
    TensorStats st;
    st.min = r.f64();
    st.max = r.f64();
    st.sample_count = r.u64();
    const std::uint32_t bins = r.u32();
    if (bins != static_cast<std::uint32_t>(kHistogramBins)) {
      throw DataError(path + ": histogram bin count " + std::to_string(bins) +
                      " does not match " + std::to_string(kHistogramBins));
    }
    st.histogram.resize(bins);
    for (auto& h : st.histogram) h = r.u64();
    if (!rec.tensors.emplace(std::move(key), std::move(st)).second) {
      throw DataError(path + ": duplicate stats key");
    }
  }
  if (r.remaining() != 0) throw DataError(path + ": trailing bytes");
  return rec;
}

}  // namespace sepquant
