// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace sepquant {

// Dense 4-d shape: NHWC for activations, (kh, kw, in, out) for weights.
struct Shape {
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};

  Shape() = default;
  Shape(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c)
      : dims{n, h, w, c} {}

  std::int64_t n() const { return dims[0]; }
  std::int64_t h() const { return dims[1]; }
  std::int64_t w() const { return dims[2]; }
  std::int64_t c() const { return dims[3]; }

  std::int64_t numel() const {
    return dims[0] * dims[1] * dims[2] * dims[3];
  }

  bool operator==(const Shape&) const = default;
};

// Affine quantization parameters: real x ~ delta * (code - zero_point).
struct QuantParams {
  double delta = 1.0;     // step size, > 0
  int zero_point = 0;     // offset, in [0, 255]

  bool valid() const { return delta > 0.0 && zero_point >= 0 && zero_point <= 255; }
  bool operator==(const QuantParams&) const = default;
};

// Dense float tensor, NHWC, row-major.
struct TensorF32 {
  Shape shape;
  std::vector<float> data;

  TensorF32() = default;
  explicit TensorF32(const Shape& s, float fill = 0.0f);
  TensorF32(const Shape& s, std::vector<float> values);

  float& at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
    return data[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }
  float at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }

  bool all_finite() const;
  bool operator==(const TensorF32&) const = default;
};

// Dense u8 tensor with its quantization parameters.
struct TensorU8 {
  Shape shape;
  std::vector<std::uint8_t> data;
  QuantParams qparams;

  TensorU8() = default;
  TensorU8(const Shape& s, QuantParams q, std::uint8_t fill = 0);
  TensorU8(const Shape& s, std::vector<std::uint8_t> values, QuantParams q);

  std::uint8_t& at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
    return data[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }
  std::uint8_t at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }

  bool operator==(const TensorU8&) const = default;
};

std::uint8_t quantize_value(float x, const QuantParams& q);
float dequantize_value(std::uint8_t v, const QuantParams& q);

// Picks per-tensor affine parameters for [min, max]. The range is widened
// to include zero so that zero padding and ReLU stay exact.
QuantParams choose_qparams_from_range(double min, double max);

TensorU8 quantize_tensor(const TensorF32& t, const QuantParams& q);
TensorF32 dequantize_tensor(const TensorU8& t);

}  // namespace sepquant
