#pragma once

// Little-endian byte encoding shared by the model and dataset file formats.

#include "spdnet/errors.hpp"
#include "spdnet/manifold.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace spdnet::detail {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { raw(tag, 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void matrix(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    row_major(m);
  }
  void row_major(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }
  Bytes take() { return std::move(out_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == in_.size(); }

  void magic(const char (&tag)[5], const std::string& what) {
    if (in_.size() < 4 || std::memcmp(in_.data(), tag, 4) != 0 || pos_ != 0) {
      throw FormatError(what + ": bad magic, expected \"" + std::string(tag) +
                            "\"",
                        0);
    }
    pos_ = 4;
  }
  std::uint32_t u32(const char* field) {
    std::uint32_t v;
    raw(&v, sizeof v, field);
    return v;
  }
  double f64(const char* field) {
    double v;
    raw(&v, sizeof v, field);
    return v;
  }
  Matrix row_major(Eigen::Index rows, Eigen::Index cols, const char* field) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64(field);
    }
    return m;
  }
  Matrix matrix(const char* field) {
    const std::uint32_t r = u32(field);
    const std::uint32_t c = u32(field);
    return row_major(r, c, field);
  }

 private:
  void raw(void* p, std::size_t n, const char* field) {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + field,
                        pos_);
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  const Bytes& in_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, const Bytes& bytes);

}  // namespace spdnet::detail
