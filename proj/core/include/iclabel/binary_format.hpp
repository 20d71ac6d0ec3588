#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace iclabel::io {

// Every binary file starts with a 4-byte magic tag followed by a format version.
using Magic = std::array<char, 4>;

inline constexpr Magic kArrayMagic = {'I', 'C', 'L', 'B'};
inline constexpr Magic kFeatureMagic = {'I', 'C', 'L', 'F'};
inline constexpr Magic kWeightsMagic = {'I', 'C', 'L', 'W'};
inline constexpr std::uint32_t kFormatVersion = 1;

// Little-endian encoder.
class ByteWriter {
 public:
  void magic(const Magic& m);
  void u32(std::uint32_t v);
  void f32(float v);
  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void bytes(std::string_view s) { buffer_.append(s); }

  const std::string& data() const { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

// Little-endian decoder. Every read past the end throws Errc::format naming the
// context (usually the file path).
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  void expect_magic(const Magic& m);
  std::uint32_t u32();
  float f32();
  std::uint8_t u8();
  std::string_view bytes(std::size_t n);

  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n) const;

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

// Row-major float32 matrix with the 16-byte "ICLB" header.
std::string encode_array(const Eigen::MatrixXd& m);
Eigen::MatrixXd decode_array(std::string_view bytes, const std::string& context);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace iclabel::io
