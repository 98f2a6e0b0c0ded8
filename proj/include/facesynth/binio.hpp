// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_BINIO_HPP
#define FACESYNTH_BINIO_HPP

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace facesynth::binio {

// Little-endian scalar I/O for the project's binary file formats.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4] = {};
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t len = get_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

}  // namespace facesynth::binio

#endif  // FACESYNTH_BINIO_HPP
