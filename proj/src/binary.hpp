#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "empl/errors.hpp"

namespace empl::detail {

// Little-endian byte sink, independent of host byte order.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }

  const std::string& str() const noexcept { return out_; }

 private:
  std::string out_;
};

// Little-endian byte source. Every failure reports the offset of the field
// that could not be read.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint64_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  std::uint8_t u8(const char* field) {
    need(1, field);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string_view bytes(std::size_t n, const char* field) {
    need(n, field);
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated file reading ") + field, pos_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace empl::detail
