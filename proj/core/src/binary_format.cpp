#include "iclabel/binary_format.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <system_error>

#include "iclabel/error.hpp"

namespace iclabel::io {

void ByteWriter::magic(const Magic& m) { buffer_.append(m.data(), m.size()); }

void ByteWriter::u32(std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    buffer_.push_back(static_cast<char>((v >> shift) & 0xFFu));
  }
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(Errc::format, context_ + ": truncated (needed " + std::to_string(n) +
                                  " more bytes at offset " + std::to_string(pos_) + ")");
  }
}

void ByteReader::expect_magic(const Magic& m) {
  const auto got = bytes(m.size());
  if (got != std::string_view(m.data(), m.size())) {
    throw Error(Errc::format, context_ + ": bad magic, expected \"" +
                                  std::string(m.data(), m.size()) + "\"");
  }
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::uint8_t ByteReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::string_view ByteReader::bytes(std::size_t n) {
  need(n);
  const auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw Error(Errc::format,
                context_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
  }
}

std::string encode_array(const Eigen::MatrixXd& m) {
  ByteWriter w;
  w.magic(kArrayMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
  }
  return w.take();
}

Eigen::MatrixXd decode_array(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic(kArrayMagic);
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw Error(Errc::format, context + ": unsupported array version " + std::to_string(version));
  }
  const auto rows = r.u32();
  const auto cols = r.u32();
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (count * 4 != r.remaining()) {
    throw Error(Errc::format, context + ": header declares " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + " but payload holds " +
                                  std::to_string(r.remaining()) + " bytes");
  }
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw Error(Errc::format, context + ": non-finite value at (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ")");
      }
      m(i, j) = v;
    }
  }
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(Errc::io, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::io, "cannot replace " + path.string());
  }
}

}  // namespace iclabel::io
