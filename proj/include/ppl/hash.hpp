#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace ppl {

/// 64-bit FNV-1a, stable across platforms; used for config and manifest hashes.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view text);
/// Hash of a file's bytes; throws if unreadable.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace ppl
