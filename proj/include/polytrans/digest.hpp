#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace polytrans {

/// Incremental SHA-256; hex-encoded on finish().
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  std::string finish();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

/// First 8 bytes of SHA-256 as an integer; stable across platforms.
std::uint64_t stable_hash64(std::string_view text);

/// splitmix64-style mixing for deriving sub-seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace polytrans
