#pragma once

// Little-endian binary helpers shared by the packed dataset, checkpoint and
// feature-cache formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "pixscale/common.hpp"

namespace pixscale::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

inline void put_magic(std::string& out, std::string_view magic) { out.append(magic); }

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  template <class T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* take(std::size_t n) {
    require(pos_ + n <= data_.size(), what_ + ": truncated file");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  void expect_magic(std::string_view magic) {
    require(std::string_view(take(magic.size()), magic.size()) == magic,
            what_ + ": bad magic, expected " + std::string(magic));
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  require(static_cast<bool>(out), "write failed for " + path);
}

}  // namespace pixscale::binio
