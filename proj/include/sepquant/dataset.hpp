// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sepquant/tensor.hpp"

namespace sepquant {

enum class Split { kTrain, kVal, kHoldout };

const char* split_name(Split s);

// Images are (N, H, W, 1) with values in [0, 1].
struct Dataset {
  TensorF32 images;
  std::vector<std::uint16_t> labels;
  Split split = Split::kTrain;
  int classes = 0;

  std::int64_t size() const { return images.shape.n(); }
};

struct GenSpec {
  std::uint64_t seed = 0;
  int classes = 8;
  int image_size = 16;
  int train_count = 2048;
  int val_count = 1000;
  int holdout_count = 512;
};

struct GeneratedData {
  Dataset train;
  Dataset val;
  Dataset holdout;
};

// Procedural texture menu, one family per class, in this order:
// horizontal stripes, vertical stripes, diagonal stripes, checkerboard,
// centered disk, corner gradient, ring, solid gray.
constexpr int kTextureMenuSize = 8;

GeneratedData generate(const GenSpec& spec);

// Single image i as a (1, H, W, C) batch.
TensorF32 image_at(const Dataset& d, std::int64_t i);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace sepquant
