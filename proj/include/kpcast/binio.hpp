#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kpcast/error.hpp"

namespace kpcast::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline void write_f64s(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorKind::Parse, std::string("truncated input while reading ") + what);
  return v;
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") { return read_pod<std::uint32_t>(is, what); }
inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") { return read_pod<std::uint64_t>(is, what); }
inline std::int64_t read_i64(std::istream& is, const char* what = "i64") { return read_pod<std::int64_t>(is, what); }
inline double read_f64(std::istream& is, const char* what = "f64") { return read_pod<double>(is, what); }

inline void read_f64s(std::istream& is, std::span<double> out, const char* what = "f64 block") {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(double)));
  if (!is) fail(ErrorKind::Parse, std::string("truncated input while reading ") + what);
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const auto n = read_u32(is, "string length");
  if (n > max_len) fail(ErrorKind::Parse, "string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) fail(ErrorKind::Parse, "truncated string");
  return s;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (!is || got != magic) fail(ErrorKind::Parse, "bad magic, expected '" + std::string(magic) + "'");
}

}  // namespace kpcast::binio
