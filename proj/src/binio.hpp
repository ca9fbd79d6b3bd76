#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cloudmask/errors.hpp"

namespace cloudmask::detail {

static_assert(std::endian::native == std::endian::little,
              "container codecs assume a little-endian host");

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    bytes(&v, sizeof v);
  }
  // Fixed-width, zero-padded ASCII field.
  void fixed_string(std::string_view s, std::size_t width) {
    std::string field(s.substr(0, width));
    field.resize(width, '\0');
    bytes(field.data(), width);
  }
  void short_string(std::string_view s) {
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void append_checksum() { put<std::uint64_t>(fnv1a64(buf_.data(), buf_.size())); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::size_t limit)
      : buf_(buf), limit_(limit) {}

  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw TruncatedError(pos_ + n, limit_);
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string fixed_string(std::size_t width) {
    std::string s(width, '\0');
    bytes(s.data(), width);
    s.resize(std::strlen(s.c_str()));
    return s;
  }
  std::string short_string() {
    const auto n = get<std::uint16_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return limit_ - pos_; }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

// Verifies magic and the trailing checksum; returns the version field.
inline std::uint16_t check_envelope(const std::vector<std::uint8_t>& buf,
                                    std::string_view magic) {
  if (buf.size() < magic.size() + 2) {
    throw TruncatedError(magic.size() + 2, buf.size());
  }
  if (std::memcmp(buf.data(), magic.data(), magic.size()) != 0) {
    throw BadMagicError("bad magic: expected \"" + std::string(magic) + "\"", 0);
  }
  std::uint16_t version;
  std::memcpy(&version, buf.data() + magic.size(), 2);
  return version;
}

inline void verify_checksum(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8) throw TruncatedError(8, buf.size());
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);
  if (stored != fnv1a64(buf.data(), body)) {
    throw ChecksumError("checksum mismatch", body);
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes);

}  // namespace cloudmask::detail
