// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "io_util.hpp"

#include <zlib.h>

namespace sepquant::io {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  auto crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, data, static_cast<uInt>(size));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace sepquant::io
