#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace gazekit::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::size_t kMagicSize = 8;

inline void write_magic(std::ostream& out, std::string_view magic) {
  char buf[kMagicSize] = {};
  std::memcpy(buf, magic.data(), std::min(magic.size(), kMagicSize));
  out.write(buf, kMagicSize);
}

// True when the next eight bytes equal the zero-padded magic.
inline bool read_magic(std::istream& in, std::string_view magic) {
  char expected[kMagicSize] = {};
  std::memcpy(expected, magic.data(), std::min(magic.size(), kMagicSize));
  char buf[kMagicSize] = {};
  in.read(buf, kMagicSize);
  return in.gcount() == static_cast<std::streamsize>(kMagicSize) && std::memcmp(buf, expected, kMagicSize) == 0;
}

template <typename T>
void write(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool read(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

inline void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline bool read_doubles(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  return in.gcount() == static_cast<std::streamsize>(n * sizeof(double));
}

}  // namespace gazekit::binio
