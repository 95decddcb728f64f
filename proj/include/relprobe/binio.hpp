#pragma once

// Little-endian primitives shared by the binary artifact formats
// (contextual vectors, checkpoints, representation matrices).

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "relprobe/error.hpp"

namespace relprobe::binio {

template <typename UInt>
void write_uint(std::ostream& out, UInt value) {
  char bytes[sizeof(UInt)];
  for (size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt read_uint(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) {
    throw Error(std::string("truncated input while reading ") + what);
  }
  UInt value = 0;
  for (size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(bytes[i]) << (8 * i);
  }
  return value;
}

inline void write_f32(std::ostream& out, float value) {
  write_uint<std::uint32_t>(out, std::bit_cast<std::uint32_t>(value));
}

inline float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(read_uint<std::uint32_t>(in, what));
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* format) {
  char got[4];
  if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw Error(std::string("not a ") + format + " file: bad magic");
  }
}

// u32 length followed by raw bytes.
inline void write_string(std::ostream& out, const std::string& s) {
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
  auto n = read_uint<std::uint32_t>(in, what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw Error(std::string("truncated input while reading ") + what);
  return s;
}

// 64-bit FNV-1a, used for cache keys and artifact fingerprints.
inline std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), seed);
}

}  // namespace relprobe::binio
