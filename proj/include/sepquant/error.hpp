// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sepquant {

// Bad inputs: malformed files, shape mismatches, corrupted statistics.
// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal invariant. The CLI maps this to exit code 3.
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace sepquant
