#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace epigraf::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::uint32_t le = to_little(v);
  char bytes[4];
  std::memcpy(bytes, &le, 4);
  out.write(bytes, 4);
}

inline void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t read_u32(std::istream& in) {
  char bytes[4];
  if (!in.read(bytes, 4)) throw std::runtime_error("unexpected end of file");
  std::uint32_t le;
  std::memcpy(&le, bytes, 4);
  return to_little(le);
}

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

inline void expect_magic(std::istream& in, std::string_view magic) {
  char bytes[4] = {};
  if (magic.size() != 4 || !in.read(bytes, 4) || std::string_view(bytes, 4) != magic) {
    throw std::runtime_error("bad magic, expected " + std::string(magic));
  }
}

}  // namespace epigraf::io
