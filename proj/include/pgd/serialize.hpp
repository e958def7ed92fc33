#pragma once

// Little binary container used by the network and run checkpoints.
// Layout: every scalar is written in host byte order (little-endian on all
// supported targets); u64 for counts, IEEE-754 binary64 for reals, strings
// and arrays are length-prefixed with a u64. Matrices are rows, cols, then
// row-major entries. Round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pgd/error.hpp"
#include "pgd/linalg.hpp"

namespace pgd {

class BinaryWriter {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void boolean(bool v) { u64(v ? 1 : 0); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const Vec& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void sizes(const std::vector<std::size_t>& v) {
    u64(v.size());
    for (auto x : v) u64(x);
  }

  const std::string& bytes() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::data, "cannot open " + path + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    require(static_cast<bool>(out), ErrorKind::data, "write failed: " + path);
  }

 private:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string bytes) : buf_(std::move(bytes)) {}

  static BinaryReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return BinaryReader(std::move(bytes));
  }

  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  bool boolean() { return u64() != 0; }
  std::string str() {
    const auto n = checked_count(1);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Vec vec() {
    const auto n = checked_count(sizeof(double));
    Vec v(static_cast<Eigen::Index>(n));
    raw(v.data(), sizeof(double) * n);
    return v;
  }
  Matrix matrix() {
    const auto r = u64();
    const auto c = u64();
    require(c == 0 || r <= remaining() / sizeof(double) / c, ErrorKind::format,
            "checkpoint: matrix size exceeds file");
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    raw(m.data(), sizeof(double) * r * c);
    return m;
  }
  std::vector<std::size_t> sizes() {
    const auto n = checked_count(sizeof(std::uint64_t));
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = static_cast<std::size_t>(u64());
    return v;
  }

  // Reads a fixed tag and fails with FormatError if it differs.
  void expect(const std::string& tag) {
    const std::string got = str();
    require(got == tag, ErrorKind::format,
            "checkpoint: expected section '" + tag + "', found '" + got + "'");
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t checked_count(std::size_t elem) {
    const auto n = u64();
    require(n <= remaining() / elem, ErrorKind::format, "checkpoint: truncated data");
    return static_cast<std::size_t>(n);
  }
  void raw(void* p, std::size_t n) {
    require(n <= remaining(), ErrorKind::format, "checkpoint: unexpected end of data");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace pgd
