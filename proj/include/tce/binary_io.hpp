// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "tce/error.hpp"

// Little-endian primitives for the TCEM/TCEF containers.
namespace tce::binary {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffU);
  os.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const std::string& what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError(what + ": truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f32(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double read_f32(std::istream& is, const std::string& what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(is, what));
}
inline double read_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char got[4] = {};
  if (!is.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
    throw FormatError(what + ": bad magic bytes (expected " + std::string(magic, 4) + ")");
  }
}

}  // namespace tce::binary
