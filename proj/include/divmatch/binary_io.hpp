#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>

#include "divmatch/common.hpp"

namespace divmatch::io {

static_assert(std::endian::native == std::endian::little,
              "binary artifacts are written with native little-endian stores");

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void magic(std::string_view four) { bytes_.append(four.data(), four.size()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.append(raw, sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.append(s.data(), s.size());
  }

  const std::string& bytes() const { return bytes_; }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

/// Bounds-checked reader; any overrun raises ArtifactError naming `what`.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(std::string_view four) {
    need(four.size());
    if (bytes_.substr(pos_, four.size()) != four) {
      throw ArtifactError(what_ + ": bad magic/version tag, expected '" + std::string(four) + "'");
    }
    pos_ += four.size();
  }

  bool peek_magic(std::string_view four) const {
    return bytes_.size() - pos_ >= four.size() && bytes_.substr(pos_, four.size()) == four;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ArtifactError(what_ + ": truncated file");
  }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace divmatch::io
