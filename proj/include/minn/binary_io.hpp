#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>

#include "minn/error.hpp"

namespace minn::io {

// Little-endian 64-bit scalars regardless of host byte order.

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorCode::ParseError, "unexpected end of binary data");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void write_f64s(std::ostream& out, std::span<const double> v) {
  for (double x : v) write_f64(out, x);
}
inline void read_f64s(std::istream& in, std::span<double> v) {
  for (double& x : v) x = read_f64(in);
}

}  // namespace minn::io
