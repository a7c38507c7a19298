// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sepquant/error.hpp"

namespace sepquant {

namespace {

void check_shape(const Shape& s) {
  for (auto d : s.dims) {
    if (d <= 0) {
      throw DataError("tensor shape has a non-positive dimension");
    }
  }
}

}  // namespace

TensorF32::TensorF32(const Shape& s, float fill) : shape(s) {
  check_shape(s);
  data.assign(static_cast<std::size_t>(s.numel()), fill);
}

TensorF32::TensorF32(const Shape& s, std::vector<float> values)
    : shape(s), data(std::move(values)) {
  check_shape(s);
  if (static_cast<std::int64_t>(data.size()) != s.numel()) {
    throw DataError("tensor data length does not match shape element count");
  }
}

bool TensorF32::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](float v) { return std::isfinite(v); });
}

TensorU8::TensorU8(const Shape& s, QuantParams q, std::uint8_t fill)
    : shape(s), qparams(q) {
  check_shape(s);
  if (!q.valid()) throw DataError("invalid quantization parameters");
  data.assign(static_cast<std::size_t>(s.numel()), fill);
}

TensorU8::TensorU8(const Shape& s, std::vector<std::uint8_t> values, QuantParams q)
    : shape(s), data(std::move(values)), qparams(q) {
  check_shape(s);
  if (!q.valid()) throw DataError("invalid quantization parameters");
  if (static_cast<std::int64_t>(data.size()) != s.numel()) {
    throw DataError("tensor data length does not match shape element count");
  }
}

std::uint8_t quantize_value(float x, const QuantParams& q) {
  // std::round is round-half-away-from-zero, the fixed rounding mode of
  // the whole toolkit. Saturates at the code range, so never errors.
  const double level =
      std::round(static_cast<double>(x) / q.delta) + q.zero_point;
  return static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
}

float dequantize_value(std::uint8_t v, const QuantParams& q) {
  return static_cast<float>(q.delta * (static_cast<int>(v) - q.zero_point));
}

QuantParams choose_qparams_from_range(double min, double max) {
  if (!std::isfinite(min) || !std::isfinite(max)) {
    throw DataError("non-finite range: corrupted statistics");
  }
  if (min > max) {
    throw DataError("range min exceeds max");
  }
  min = std::min(min, 0.0);
  max = std::max(max, 0.0);
  if (min == 0.0 && max == 0.0) {
    return QuantParams{1.0, 0};
  }
  const double delta = (max - min) / 255.0;
  const double zp = std::clamp(std::round(-min / delta), 0.0, 255.0);
  return QuantParams{delta, static_cast<int>(zp)};
}

TensorU8 quantize_tensor(const TensorF32& t, const QuantParams& q) {
  TensorU8 out(t.shape, q);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    out.data[i] = quantize_value(t.data[i], q);
  }
  return out;
}

TensorF32 dequantize_tensor(const TensorU8& t) {
  TensorF32 out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    out.data[i] = dequantize_value(t.data[i], t.qparams);
  }
  return out;
}

}  // namespace sepquant
