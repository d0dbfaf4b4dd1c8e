#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dvstn/error.hpp"

namespace dvstn::detail {

// Little-endian primitives over iostreams. Explicit byte order keeps the
// binary formats identical across hosts.

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(char(v)); }
inline void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}
inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void need(std::istream& is, const char* what) {
  if (!is) throw data_error(std::string("truncated or unreadable ") + what);
}
inline std::uint8_t get_u8(std::istream& is, const char* what = "byte") {
  int c = is.get();
  if (c == EOF) throw data_error(std::string("truncated ") + what);
  return std::uint8_t(c);
}
inline std::uint16_t get_u16(std::istream& is, const char* what = "u16") {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  need(is, what);
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}
inline std::uint32_t get_u32(std::istream& is, const char* what = "u32") {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  need(is, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t get_u64(std::istream& is, const char* what = "u64") {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  need(is, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline float get_f32(std::istream& is, const char* what = "f32") {
  std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::binary) {
  std::ofstream os(path, mode);
  if (!os) throw runtime_error("cannot open '" + path + "' for writing");
  return os;
}
inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::binary) {
  std::ifstream is(path, mode);
  if (!is) throw data_error("cannot open '" + path + "' for reading");
  return is;
}

}  // namespace dvstn::detail
