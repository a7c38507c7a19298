// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>

#include "sepquant/error.hpp"
#include "sepquant/graph.hpp"
#include "sepquant/tensor.hpp"

namespace sepquant {

struct ConvGeometry {
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  std::int64_t pad_top = 0;
  std::int64_t pad_left = 0;
};

// TensorFlow padding arithmetic: same → ceil(in/stride) with the total pad
// split floor-first; valid → floor((in−k)/stride)+1, no padding.
inline ConvGeometry conv_geometry(const Shape& in, std::int64_t kh, std::int64_t kw,
                                  int stride, Padding padding) {
  if (stride < 1) throw DataError("convolution stride must be positive");
  ConvGeometry geo;
  if (padding == Padding::kSame) {
    geo.out_h = (in.h() + stride - 1) / stride;
    geo.out_w = (in.w() + stride - 1) / stride;
    const std::int64_t pad_h = std::max<std::int64_t>((geo.out_h - 1) * stride + kh - in.h(), 0);
    const std::int64_t pad_w = std::max<std::int64_t>((geo.out_w - 1) * stride + kw - in.w(), 0);
    geo.pad_top = pad_h / 2;
    geo.pad_left = pad_w / 2;
  } else {
    if (in.h() < kh || in.w() < kw) {
      throw DataError("valid padding: kernel larger than the input");
    }
    geo.out_h = (in.h() - kh) / stride + 1;
    geo.out_w = (in.w() - kw) / stride + 1;
  }
  return geo;
}

}  // namespace sepquant
