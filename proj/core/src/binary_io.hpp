#pragma once

// Little-endian primitives shared by the checkpoint and dataset containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "repr_robust/error.hpp"

namespace repr_robust::detail {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <class T>
void write_le(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_doubles(std::ostream& os, const double* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

template <class T>
T read_le(std::istream& is, const char* what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError(FormatError::Kind::Truncated, std::string("truncated while reading ") + what);
  }
  return value;
}

inline std::string read_bytes(std::istream& is, std::size_t count, const char* what) {
  std::string s(count, '\0');
  if (count && !is.read(s.data(), static_cast<std::streamsize>(count))) {
    throw FormatError(FormatError::Kind::Truncated, std::string("truncated while reading ") + what);
  }
  return s;
}

inline std::vector<double> read_doubles(std::istream& is, std::size_t count, const char* what) {
  std::vector<double> v(count);
  if (count && !is.read(reinterpret_cast<char*>(v.data()),
                        static_cast<std::streamsize>(count * sizeof(double)))) {
    throw FormatError(FormatError::Kind::Truncated, std::string("truncated while reading ") + what);
  }
  return v;
}

// Remaining byte count of a seekable stream.
inline std::uint64_t remaining(std::istream& is) {
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto end = is.tellg();
  is.seekg(here);
  return static_cast<std::uint64_t>(end - here);
}

}  // namespace repr_robust::detail
