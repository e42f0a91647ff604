#pragma once

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

#include "gduap/io.hpp"

namespace gduap {

inline std::string sha1_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha1(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

// Same digest `git hash-object` computes for a blob.
inline std::string git_blob_hash(std::string_view bytes) {
  std::string buf = "blob " + std::to_string(bytes.size());
  buf.push_back('\0');
  buf.append(bytes);
  return sha1_hex(buf);
}

inline std::string git_blob_hash_file(const std::filesystem::path& path) {
  return git_blob_hash(io::read_file(path));
}

}  // namespace gduap
