#pragma once

// Little-endian framing shared by the weight (UAPW) and perturbation (UAPF)
// containers: a 4-byte magic, optional version byte, then length-prefixed
// JSON records and raw f32 payloads.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gduap/errors.hpp"

namespace gduap::io {

using ordered_json = nlohmann::ordered_json;

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_json(std::string& buf, const ordered_json& j) {
  const std::string s = j.dump();
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf += s;
}

inline void put_f32(std::string& buf, std::span<const float> values) {
  buf.reserve(buf.size() + 4 * values.size());
  for (float f : values) put_u32(buf, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  void expect_magic(const char (&magic)[5]) {
    if (data_.size() < 4 || std::memcmp(data_.data(), magic, 4) != 0)
      throw FormatError(std::string("bad magic, expected ") + magic);
    pos_ = 4;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  ordered_json json() {
    const std::uint32_t n = u32();
    need(n);
    auto j = ordered_json::parse(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n), nullptr, false);
    if (j.is_discarded()) throw FormatError("malformed JSON record");
    pos_ += n;
    return j;
  }
  // Fills `out` (already sized) with little-endian f32 values.
  template <class Vec>
  void f32(Vec& out) {
    need(4 * out.size());
    for (auto& f : out) f = std::bit_cast<float>(u32());
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("short write to '" + path.string() + "'");
}

}  // namespace gduap::io
