// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary IO primitives shared by the dataset and checkpoint
// formats. All readers throw on short reads so truncation is always loud.
#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace ssrt {

// Unreadable or unwritable path / stream failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Recognizable file, wrong identity: bad magic or unsupported version.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structurally damaged file: truncation, trailing bytes, out-of-range fields.
class CorruptFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_exact(std::ostream& out, const void* data, std::size_t nbytes) {
  out.write(static_cast<const char*>(data), std::streamsize(nbytes));
  if (!out) throw IoError("io-error: write failed");
}

inline void read_exact(std::istream& in, void* data, std::size_t nbytes) {
  in.read(static_cast<char*>(data), std::streamsize(nbytes));
  if (std::size_t(in.gcount()) != nbytes)
    throw CorruptFileError("corrupt-file: unexpected end of file");
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  write_exact(out, b, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  write_exact(out, b, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void write_i32(std::ostream& out, std::int32_t v) {
  write_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::int32_t read_i32(std::istream& in) {
  return std::bit_cast<std::int32_t>(read_u32(in));
}

inline void write_f32(std::ostream& out, float v) {
  write_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline float read_f32(std::istream& in) {
  return std::bit_cast<float>(read_u32(in));
}

inline void write_f64(std::ostream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& in) {
  return std::bit_cast<double>(read_u64(in));
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, std::uint32_t(s.size()));
  if (!s.empty()) write_exact(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  if (len > (1u << 20)) throw CorruptFileError("corrupt-file: string length out of range");
  std::string s(len, '\0');
  if (len > 0) read_exact(in, s.data(), len);
  return s;
}

// After the last expected field: any remaining byte is corruption.
inline void expect_eof(std::istream& in) {
  if (in.peek() != std::istream::traits_type::eof())
    throw CorruptFileError("corrupt-file: trailing bytes after payload");
}

}  // namespace ssrt
