#pragma once

// Little-endian binary readers/writers for snapshot and checkpoint files.
// Every read is length-checked; short or garbled files surface as
// std::runtime_error with the offending field named.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowrec {

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }
  void magic(const char tag[8]) { out_.write(tag, 8); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void i32(int32_t v) { raw(&v, sizeof v); }
  void i64(int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec_f64(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void vec_i32(const std::vector<int32_t>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(int32_t));
  }
  void vec_i64(const std::vector<int64_t>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(int64_t));
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), (std::streamsize)n);
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open: " + path);
  }
  void expect_magic(const char tag[8], const std::string& what) {
    char got[8];
    raw(got, 8, "magic");
    if (std::string(got, 8) != std::string(tag, 8))
      throw std::runtime_error(what + ": bad magic in " + path_ +
                               " (expected " + std::string(tag, 8) + ")");
  }
  uint32_t u32(const char* f) { uint32_t v; raw(&v, sizeof v, f); return v; }
  uint64_t u64(const char* f) { uint64_t v; raw(&v, sizeof v, f); return v; }
  int32_t i32(const char* f) { int32_t v; raw(&v, sizeof v, f); return v; }
  int64_t i64(const char* f) { int64_t v; raw(&v, sizeof v, f); return v; }
  double f64(const char* f) { double v; raw(&v, sizeof v, f); return v; }
  std::string str(const char* f) {
    uint64_t n = u64(f);
    check_len(n, f);
    std::string s(n, '\0');
    raw(s.data(), n, f);
    return s;
  }
  std::vector<double> vec_f64(const char* f) {
    uint64_t n = u64(f);
    check_len(n * sizeof(double), f);
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double), f);
    return v;
  }
  std::vector<int32_t> vec_i32(const char* f) {
    uint64_t n = u64(f);
    check_len(n * sizeof(int32_t), f);
    std::vector<int32_t> v(n);
    raw(v.data(), n * sizeof(int32_t), f);
    return v;
  }
  std::vector<int64_t> vec_i64(const char* f) {
    uint64_t n = u64(f);
    check_len(n * sizeof(int64_t), f);
    std::vector<int64_t> v(n);
    raw(v.data(), n * sizeof(int64_t), f);
    return v;
  }

 private:
  void raw(void* p, size_t n, const char* field) {
    in_.read(static_cast<char*>(p), (std::streamsize)n);
    if ((size_t)in_.gcount() != n)
      throw std::runtime_error("truncated file " + path_ + " while reading " + field);
  }
  void check_len(uint64_t bytes, const char* field) {
    // Guards against reserving absurd sizes from a corrupt length prefix.
    if (bytes > (1ull << 36))
      throw std::runtime_error("corrupt length for " + std::string(field) + " in " + path_);
  }
  std::string path_;
  std::ifstream in_;
};

}  // namespace flowrec
