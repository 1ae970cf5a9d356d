#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "ltx/errors.hpp"

// Little-endian primitives shared by the LTCK / LTMK / LTDS file formats.

namespace ltx::serial {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
inline void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
  if (!os) throw io_error(io_error::Kind::write_failure, "write failed");
}

template <typename T>
inline T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw io_error(io_error::Kind::truncated,
                   std::string("truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!os) throw io_error(io_error::Kind::write_failure, "write failed");
}

inline void expect_magic(std::istream& is, std::string_view magic,
                         const char* format_name) {
  char buf[8] = {};
  is.read(buf, static_cast<std::streamsize>(magic.size()));
  if (is.gcount() != static_cast<std::streamsize>(magic.size()))
    throw io_error(io_error::Kind::truncated,
                   std::string("truncated magic in ") + format_name);
  if (std::string_view(buf, magic.size()) != magic)
    throw io_error(io_error::Kind::bad_magic,
                   std::string("bad magic for ") + format_name + ": got \"" +
                       std::string(buf, magic.size()) + "\"");
}

inline void write_string(std::ostream& os, std::string_view s) {
  if (s.size() > 0xFFFF)
    throw contract_error("serialized name too long");
  write_le<uint16_t>(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!os) throw io_error(io_error::Kind::write_failure, "write failed");
}

inline std::string read_string(std::istream& is, const char* what) {
  const auto len = read_le<uint16_t>(is, what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (is.gcount() != static_cast<std::streamsize>(len))
    throw io_error(io_error::Kind::truncated,
                   std::string("truncated while reading ") + what);
  return s;
}

inline void write_bytes(std::ostream& os, const void* data, size_t n) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n));
  if (!os) throw io_error(io_error::Kind::write_failure, "write failed");
}

inline void read_bytes(std::istream& is, void* data, size_t n,
                       const char* what) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw io_error(io_error::Kind::truncated,
                   std::string("truncated while reading ") + what);
}

// Serializes through `fill`, then commits with write-then-rename so readers
// never observe a partially written file.
void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& fill);

std::ifstream open_input(const std::string& path);

}  // namespace ltx::serial
