#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "ancelab/types.hpp"

namespace ance {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and this code assumes a "
              "little-endian host");

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("truncated file while reading ") + what);
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  read_bytes(is, &v, sizeof(T), what);
  return v;
}

inline std::string read_str(std::istream& is, const char* what) {
  auto n = read_pod<std::uint32_t>(is, what);
  std::string s(n, '\0');
  if (n > 0) read_bytes(is, s.data(), n, what);
  return s;
}

inline void expect_magic(std::istream& is, const char* magic4, const char* what) {
  char got[4];
  read_bytes(is, got, 4, what);
  if (std::string(got, 4) != std::string(magic4, 4))
    throw DataError(std::string("bad magic for ") + what + ": expected '" + magic4 + "'");
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  return os;
}

}  // namespace ance
