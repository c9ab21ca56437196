#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrecon/errors.hpp"

namespace fedrecon::detail {

// Little-endian framing shared by the CIMG and SSFM containers:
//   4-byte magic | u32 version | u32 json length | json | payload
class ByteWriter {
 public:
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
  }
  void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string_view what) : bytes_(bytes), what_(what) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw ParseError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"", pos_);
    }
    pos_ += magic.size();
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32("payload")); }
  std::string text(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw ParseError(what_ + ": truncated " + field + ", expected " + std::to_string(n) + " bytes, found " +
                           std::to_string(remaining()),
                       pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace fedrecon::detail
