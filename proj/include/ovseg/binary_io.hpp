#pragma once

// Little-endian readers/writers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovseg/error.hpp"

namespace ovseg::binary {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  void magic(std::string_view tag) { raw(tag.data(), tag.size()); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  void bytes(std::string_view s) { raw(s.data(), s.size()); }

  const std::vector<char>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot open for writing: " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) fail_io("write failed: " + path);
  }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }

  std::vector<char> buf_;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open for reading: " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

// Bounds-checked cursor. Running past the end throws a validation error with
// the supplied message so each format can report its own corruption text.
class Reader {
 public:
  Reader(std::span<const char> data, std::string truncated_message)
      : data_(data), truncated_(std::move(truncated_message)) {}

  bool has_magic(std::string_view tag) {
    if (data_.size() - pos_ < tag.size()) return false;
    bool ok = std::memcmp(data_.data() + pos_, tag.data(), tag.size()) == 0;
    if (ok) pos_ += tag.size();
    return ok;
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  float f32() { return get<float>(); }
  double f64() { return get<double>(); }

  void f32s(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(truncated_);
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::string truncated_;
};

}  // namespace ovseg::binary
