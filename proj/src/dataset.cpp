// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "io_util.hpp"
#include "sepquant/error.hpp"
#include "sepquant/rng.hpp"

namespace sepquant {

namespace {

constexpr float kHigh = 0.8f;
constexpr float kLow = 0.2f;
constexpr double kNoiseAmplitude = 0.1;
constexpr std::uint32_t kDatasetMagic = 0x53445153u;  // "SQDS"
constexpr std::uint32_t kDatasetVersion = 1;

float stripe_value(int coord, int phase, int period) {
  const int m = (coord + phase) % period;
  return m < period / 2 ? kHigh : kLow;
}

// Each family keeps its randomization inside a couple of discrete variants so
// the classes stay (almost) linearly separable on raw pixels.
void render_base(int family, int size, Rng& rng, float* img) {
  const int period = std::max(4, size / 4);
  const double cx = (size - 1) / 2.0;
  const double cy = (size - 1) / 2.0;
  auto at = [&](int y, int x) -> float& { return img[y * size + x]; };

  switch (family) {
    case 0: {  // horizontal stripes
      const int phase = static_cast<int>(rng.next_below(2));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) at(y, x) = stripe_value(y, phase, period);
      break;
    }
    case 1: {  // vertical stripes
      const int phase = static_cast<int>(rng.next_below(2));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) at(y, x) = stripe_value(x, phase, period);
      break;
    }
    case 2: {  // diagonal stripes, one fixed direction
      const int phase = static_cast<int>(rng.next_below(2));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) at(y, x) = stripe_value(x + y, phase, period);
      break;
    }
    case 3: {  // checkerboard, 3-pixel cells, small offsets
      const int ox = static_cast<int>(rng.next_below(2));
      const int oy = static_cast<int>(rng.next_below(2));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const int cell = ((x + ox) / 3 + (y + oy) / 3) % 2;
          at(y, x) = cell == 0 ? kHigh : kLow;
        }
      break;
    }
    case 4: {  // centered disk, two radii
      const double r = size / 4.0 + static_cast<double>(rng.next_below(2));
      const double r2 = r * r;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          at(y, x) = d2 <= r2 ? kHigh : kLow;
        }
      break;
    }
    case 5: {  // corner gradient, dark top-left, two gains
      const double gain = rng.next_below(2) == 0 ? 0.9 : 1.1;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double t = static_cast<double>(x + y) / (2.0 * (size - 1));
          at(y, x) = static_cast<float>((0.15 + 0.7 * t) * gain);
        }
      break;
    }
    case 6: {  // ring, two inner radii
      const double rin = size * 5.0 / 32.0 + 0.5 * static_cast<double>(rng.next_below(2));
      const double rout = rin + size / 8.0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
          at(y, x) = (d >= rin && d <= rout) ? kHigh : kLow;
        }
      break;
    }
    case 7: {  // solid, two gray levels
      const float level = rng.next_below(2) == 0 ? 0.35f : 0.65f;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) at(y, x) = level;
      break;
    }
    default:
      throw InternalError("texture family out of range");
  }
}

Dataset make_split(const GenSpec& spec, Split split, int count, std::uint64_t stream) {
  Dataset d;
  d.split = split;
  d.classes = spec.classes;
  d.images = TensorF32(Shape{count, spec.image_size, spec.image_size, 1});
  d.labels.resize(static_cast<std::size_t>(count));
  Rng rng(stream);
  const std::size_t pixels = static_cast<std::size_t>(spec.image_size) * spec.image_size;
  for (int i = 0; i < count; ++i) {
    const int label = i % spec.classes;
    d.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(label);
    float* img = d.images.data.data() + static_cast<std::size_t>(i) * pixels;
    render_base(label, spec.image_size, rng, img);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double noise = (rng.next_double() * 2.0 - 1.0) * kNoiseAmplitude;
      img[p] = std::clamp(static_cast<float>(img[p] + noise), 0.0f, 1.0f);
    }
  }
  return d;
}

std::uint32_t split_code(Split s) {
  switch (s) {
    case Split::kTrain: return 0;
    case Split::kVal: return 1;
    case Split::kHoldout: return 2;
  }
  throw InternalError("bad split tag");
}

Split split_from_code(std::uint32_t code, const std::string& path) {
  switch (code) {
    case 0: return Split::kTrain;
    case 1: return Split::kVal;
    case 2: return Split::kHoldout;
    default: throw DataError(path + ": unknown split tag " + std::to_string(code));
  }
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kHoldout: return "holdout";
  }
  return "unknown";
}

GeneratedData generate(const GenSpec& spec) {
  if (spec.classes < 2) throw DataError("need at least 2 classes");
  if (spec.classes > kTextureMenuSize) {
    throw DataError("classes=" + std::to_string(spec.classes) + " exceeds texture menu size " +
                    std::to_string(kTextureMenuSize));
  }
  if (spec.image_size < 8) throw DataError("image size must be at least 8");
  if (spec.train_count <= 0 || spec.val_count <= 0 || spec.holdout_count <= 0) {
    throw DataError("split counts must be positive");
  }
  GeneratedData out;
  out.train = make_split(spec, Split::kTrain, spec.train_count, stream_seed(spec.seed, "train"));
  out.val = make_split(spec, Split::kVal, spec.val_count, stream_seed(spec.seed, "val"));
  out.holdout =
      make_split(spec, Split::kHoldout, spec.holdout_count, stream_seed(spec.seed, "holdout"));
  return out;
}

TensorF32 image_at(const Dataset& d, std::int64_t i) {
  if (i < 0 || i >= d.size()) throw DataError("image index out of range");
  const Shape& s = d.images.shape;
  const std::size_t pixels = static_cast<std::size_t>(s.h() * s.w() * s.c());
  TensorF32 one(Shape{1, s.h(), s.w(), s.c()});
  std::copy_n(
      d.images.data.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(pixels),
      pixels, one.data.begin());
  return one;
}

void save_dataset(const Dataset& d, const std::string& path) {
  const Shape& s = d.images.shape;
  if (s.c() != 1) throw DataError("dataset images must be single-channel");
  if (static_cast<std::int64_t>(d.labels.size()) != s.n()) {
    throw DataError("dataset label count does not match image count");
  }
  std::vector<std::uint8_t> buf;
  buf.reserve(28 + d.images.data.size() * 4 + d.labels.size() * 2);
  io::put_u32(buf, kDatasetMagic);
  io::put_u32(buf, kDatasetVersion);
  io::put_u32(buf, static_cast<std::uint32_t>(s.n()));
  io::put_u32(buf, static_cast<std::uint32_t>(s.h()));
  io::put_u32(buf, static_cast<std::uint32_t>(s.w()));
  io::put_u32(buf, static_cast<std::uint32_t>(d.classes));
  io::put_u32(buf, split_code(d.split));
  for (float v : d.images.data) io::put_f32(buf, v);
  for (std::uint16_t l : d.labels) io::put_u16(buf, l);
  io::write_file(path, buf);
}

Dataset load_dataset(const std::string& path) {
  const std::vector<std::uint8_t> buf = io::read_file(path);
  io::ByteReader r(buf.data(), buf.size(), path);
  if (r.u32() != kDatasetMagic) throw DataError(path + ": bad magic, not a dataset file");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw DataError(path + ": unsupported dataset version " + std::to_string(version));
  }
  const auto n = static_cast<std::int64_t>(r.u32());
  const auto h = static_cast<std::int64_t>(r.u32());
  const auto w = static_cast<std::int64_t>(r.u32());
  const auto classes = static_cast<int>(r.u32());
  const Split split = split_from_code(r.u32(), path);
  if (n <= 0 || h <= 0 || w <= 0 || classes < 2) {
    throw DataError(path + ": invalid dataset header");
  }
  Dataset d;
  d.split = split;
  d.classes = classes;
  d.images = TensorF32(Shape{n, h, w, 1});
  for (float& v : d.images.data) v = r.f32();
  d.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : d.labels) {
    l = r.u16();
    if (l >= classes) throw DataError(path + ": label out of range");
  }
  if (r.remaining() != 0) throw DataError(path + ": trailing bytes after dataset payload");
  return d;
}

}  // namespace sepquant
