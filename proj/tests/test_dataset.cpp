// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sepquant/dataset.hpp"
#include "sepquant/error.hpp"

using namespace sepquant;

namespace {

GenSpec small_spec() {
  GenSpec s;
  s.seed = 42;
  s.classes = 8;
  s.image_size = 16;
  s.train_count = 256;
  s.val_count = 64;
  s.holdout_count = 64;
  return s;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

// Least squares one-vs-rest probe on raw pixels: the classes are
// procedural textures, so a linear readout should separate most of them.
double linear_probe_accuracy(const Dataset& train, const Dataset& test) {
  const std::int64_t d = train.images.shape.h() * train.images.shape.w();
  const std::int64_t n = train.size();
  const std::int64_t dim = d + 1;  // bias column
  const int classes = train.classes;

  std::vector<double> xtx(dim * dim, 0.0);
  std::vector<double> xty(dim * classes, 0.0);
  std::vector<double> row(dim, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < d; ++p) row[p] = train.images.data[i * d + p];
    row[d] = 1.0;
    for (std::int64_t a = 0; a < dim; ++a) {
      for (std::int64_t b = 0; b < dim; ++b) xtx[a * dim + b] += row[a] * row[b];
      xty[a * classes + train.labels[i]] += row[a];
    }
  }
  for (std::int64_t a = 0; a < dim; ++a) xtx[a * dim + a] += 1e-3;

  // Gaussian elimination with partial pivoting, solving for all classes.
  std::vector<double> w = xty;
  for (std::int64_t col = 0; col < dim; ++col) {
    std::int64_t piv = col;
    for (std::int64_t r = col + 1; r < dim; ++r) {
      if (std::fabs(xtx[r * dim + col]) > std::fabs(xtx[piv * dim + col])) piv = r;
    }
    if (piv != col) {
      for (std::int64_t cc = 0; cc < dim; ++cc) std::swap(xtx[col * dim + cc], xtx[piv * dim + cc]);
      for (int cc = 0; cc < classes; ++cc) std::swap(w[col * classes + cc], w[piv * classes + cc]);
    }
    const double diag = xtx[col * dim + col];
    for (std::int64_t r = 0; r < dim; ++r) {
      if (r == col) continue;
      const double f = xtx[r * dim + col] / diag;
      if (f == 0.0) continue;
      for (std::int64_t cc = col; cc < dim; ++cc) xtx[r * dim + cc] -= f * xtx[col * dim + cc];
      for (int cc = 0; cc < classes; ++cc) w[r * classes + cc] -= f * w[col * classes + cc];
    }
  }
  for (std::int64_t r = 0; r < dim; ++r) {
    const double diag = xtx[r * dim + r];
    for (int cc = 0; cc < classes; ++cc) w[r * classes + cc] /= diag;
  }

  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < test.size(); ++i) {
    int best = 0;
    double best_score = -1e300;
    for (int cc = 0; cc < classes; ++cc) {
      double s = w[d * classes + cc];
      for (std::int64_t p = 0; p < d; ++p) s += test.images.data[i * d + p] * w[p * classes + cc];
      if (s > best_score) {
        best_score = s;
        best = cc;
      }
    }
    if (best == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const GeneratedData a = generate(small_spec());
  const GeneratedData b = generate(small_spec());
  CHECK(a.train.images == b.train.images);
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.val.images == b.val.images);
  CHECK(a.holdout.images == b.holdout.images);

  GenSpec other = small_spec();
  other.seed = 43;
  const GeneratedData c = generate(other);
  CHECK(a.train.images != c.train.images);
}

TEST_CASE("splits are sized, typed and distinct") {
  const GenSpec spec = small_spec();
  const GeneratedData d = generate(spec);
  CHECK(d.train.size() == spec.train_count);
  CHECK(d.val.size() == spec.val_count);
  CHECK(d.holdout.size() == spec.holdout_count);
  CHECK(d.train.split == Split::kTrain);
  CHECK(d.val.split == Split::kVal);
  CHECK(d.holdout.split == Split::kHoldout);
  CHECK(d.train.images.shape == Shape{spec.train_count, 16, 16, 1});
  CHECK(d.train.classes == spec.classes);
  // Different noise per split even at equal sizes.
  CHECK_FALSE(std::equal(d.val.images.data.begin(), d.val.images.data.end(),
                         d.holdout.images.data.begin()));
}

TEST_CASE("pixels stay in [0, 1] and labels in range") {
  const GeneratedData d = generate(small_spec());
  for (float v : d.train.images.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  for (auto l : d.train.labels) CHECK(l < 8);
}

TEST_CASE("labels are roughly balanced") {
  GenSpec spec = small_spec();
  spec.train_count = 800;
  const GeneratedData d = generate(spec);
  std::vector<int> counts(spec.classes, 0);
  for (auto l : d.train.labels) counts[l]++;
  for (int c : counts) {
    CHECK(c > 60);  // expectation 100 per class
    CHECK(c < 140);
  }
}

TEST_CASE("classes are linearly separable enough for a pixel probe") {
  GenSpec spec = small_spec();
  spec.train_count = 512;
  spec.val_count = 256;
  const GeneratedData d = generate(spec);
  const double acc = linear_probe_accuracy(d.train, d.val);
  CHECK(acc >= 0.8);
}

TEST_CASE("image_at slices one image with its batch dim") {
  const GeneratedData d = generate(small_spec());
  const TensorF32 img = image_at(d.val, 3);
  CHECK(img.shape == Shape{1, 16, 16, 1});
  for (std::int64_t p = 0; p < 16 * 16; ++p) {
    CHECK(img.data[p] == d.val.images.data[3 * 16 * 16 + p]);
  }
  CHECK_THROWS_AS(image_at(d.val, -1), DataError);
  CHECK_THROWS_AS(image_at(d.val, d.val.size()), DataError);
}

TEST_CASE("save and load round-trip a dataset") {
  const GeneratedData d = generate(small_spec());
  const auto path = temp_file("sepquant_test_dataset.bin");
  save_dataset(d.val, path.string());
  const Dataset back = load_dataset(path.string());
  CHECK(back.images == d.val.images);
  CHECK(back.labels == d.val.labels);
  CHECK(back.split == d.val.split);
  CHECK(back.classes == d.val.classes);
  std::filesystem::remove(path);
}

TEST_CASE("load rejects corrupted bytes") {
  const GeneratedData d = generate(small_spec());
  const auto path = temp_file("sepquant_test_dataset_bad.bin");
  save_dataset(d.holdout, path.string());

  auto flip_byte = [&path](std::streamoff offset, char mask) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    char c = 0;
    f.seekg(offset);
    f.read(&c, 1);
    c ^= mask;
    f.seekp(offset);
    f.write(&c, 1);
  };

  SUBCASE("bad magic") {
    flip_byte(0, 0x40);
    CHECK_THROWS_WITH_AS(load_dataset(path.string()), doctest::Contains("bad magic"),
                         DataError);
  }
  SUBCASE("unsupported version") {
    flip_byte(4, 0x20);
    CHECK_THROWS_WITH_AS(load_dataset(path.string()),
                         doctest::Contains("unsupported dataset version"), DataError);
  }
  SUBCASE("out-of-range label") {
    // Labels are the last 2*N bytes; force a high bit into the first one.
    const auto size = static_cast<std::streamoff>(std::filesystem::file_size(path));
    flip_byte(size - 2 * small_spec().holdout_count, 0x7f);
    CHECK_THROWS_WITH_AS(load_dataset(path.string()),
                         doctest::Contains("label out of range"), DataError);
  }
  SUBCASE("truncated file") {
    std::filesystem::resize_file(path, 32);
    CHECK_THROWS_WITH_AS(load_dataset(path.string()), doctest::Contains("truncated"),
                         DataError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f << "xx";
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset(path.string()), doctest::Contains("trailing bytes"),
                         DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset((path.string() + ".nope")), DataError);
  }
  std::filesystem::remove(path);
}
