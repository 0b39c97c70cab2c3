#pragma once

// Little-endian primitives for the checkpoint and dataset containers.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "headline/errors.hpp"

namespace headline {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

 private:
  template <class U>
  void le(U v) {
    std::array<char, sizeof(U)> buf;
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os_.write(buf.data(), buf.size());
  }
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  std::uint8_t u8() {
    char c;
    read(&c, 1);
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::string str(std::size_t max_len = 1u << 24) {
    const std::uint32_t n = u32();
    if (n > max_len) throw DataError(what_ + ": string length out of range");
    return bytes(n);
  }
  void expect_magic(const std::string& magic) {
    if (bytes(magic.size()) != magic) throw DataError(what_ + ": bad magic header");
  }

 private:
  void read(char* dst, std::size_t n) {
    if (!is_.read(dst, static_cast<std::streamsize>(n))) throw DataError(what_ + ": truncated file");
  }
  template <class U>
  U le() {
    std::array<unsigned char, sizeof(U)> buf;
    read(reinterpret_cast<char*>(buf.data()), buf.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::string what_;
};

}  // namespace headline
