#pragma once

// Little-endian stream helpers shared by the binary file formats.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace surgformer::binio {

inline void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline uint64_t get_u64(std::istream& in) {
  const uint64_t lo = get_u32(in);
  const uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

inline void put_i32(std::ostream& out, const int* data, size_t n) {
  for (size_t i = 0; i < n; ++i) put_u32(out, static_cast<uint32_t>(data[i]));
}

inline void get_i32(std::istream& in, int* data, size_t n) {
  for (size_t i = 0; i < n; ++i) data[i] = static_cast<int>(get_u32(in));
}

inline void put_f32(std::ostream& out, const float* data, size_t n) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  for (size_t i = 0; i < n; ++i) {
    std::memcpy(&bits, &data[i], 4);
    put_u32(out, bits);
  }
}

inline void get_f32(std::istream& in, float* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bits = get_u32(in);
    std::memcpy(&data[i], &bits, 4);
  }
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& in, uint64_t max_len) {
  const uint64_t len = get_u64(in);
  if (!in || len > max_len) {
    in.setstate(std::ios::failbit);  // caller checks stream state
    return std::string();
  }
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

}  // namespace surgformer::binio
