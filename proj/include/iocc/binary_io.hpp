#pragma once

// Little-endian byte streams shared by the dataset and checkpoint formats.
// Magic strings occupy a 16-byte field, zero padded.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "iocc/matrix.hpp"

namespace iocc {

inline constexpr std::size_t kMagicBytes = 16;

inline std::vector<char> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path &path, const std::vector<char> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

class ByteReader {
public:
  ByteReader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  [[noreturn]] void fail(std::string_view section, std::string_view msg) const {
    throw ParseError(source_ + ": " + std::string(msg) + " (section " + std::string(section) + ", byte offset " +
                     std::to_string(pos_) + ")");
  }

  void expect_magic(std::string_view magic, std::string_view section) {
    need(kMagicBytes, section);
    char buf[kMagicBytes] = {};
    std::memcpy(buf, magic.data(), magic.size());
    if (std::memcmp(buf, bytes_.data() + pos_, kMagicBytes) != 0) fail(section, "bad magic, expected " + std::string(magic));
    pos_ += kMagicBytes;
  }

  std::uint64_t u64(std::string_view section) { return scalar<std::uint64_t>(section); }
  std::uint32_t u32(std::string_view section) { return scalar<std::uint32_t>(section); }
  double f64(std::string_view section) { return scalar<double>(section); }

  Matrix matrix(std::uint64_t rows, std::uint64_t cols, std::string_view section) {
    if (cols != 0 && rows > (bytes_.size() / 8) / cols) fail(section, "shape mismatch: section larger than file");
    need(rows * cols * 8, section);
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + pos_, rows * cols * 8);
    pos_ += rows * cols * 8;
    return m;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

private:
  void need(std::size_t n, std::string_view section) {
    if (bytes_.size() - pos_ < n) fail(section, "shape mismatch: file truncated");
  }

  template <class T> T scalar(std::string_view section) {
    need(sizeof(T), section);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

class ByteWriter {
public:
  void magic(std::string_view m) {
    char buf[kMagicBytes] = {};
    std::memcpy(buf, m.data(), m.size());
    raw(buf, kMagicBytes);
  }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void matrix(const Matrix &m) { raw(m.data(), m.size() * sizeof(double)); }

  const std::vector<char> &bytes() const { return bytes_; }

private:
  void raw(const void *p, std::size_t n) {
    const char *c = static_cast<const char *>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<char> bytes_;
};

} // namespace iocc
