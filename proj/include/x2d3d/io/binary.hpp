#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "x2d3d/core/error.hpp"

namespace x2d3d::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

inline void put_bytes(std::ostream& out, const std::string& s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

template <typename T>
  requires std::is_arithmetic_v<T>
T get(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw Error(ErrorCode::kFormat, "unexpected end of binary stream");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline std::string get_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw Error(ErrorCode::kFormat, "unexpected end of binary stream");
  }
  return s;
}

}  // namespace x2d3d::io
