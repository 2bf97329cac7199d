#include "eav/ids.hpp"

#include <array>

namespace eav {

IdSource::IdSource(std::uint64_t seed) : rng_(seed) {}

IdSource::IdSource() : rng_(std::random_device{}() ^ (std::uint64_t{std::random_device{}()} << 32)) {}

std::string IdSource::next() {
  std::array<std::uint8_t, 16> b{};
  {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < b.size(); i += 8) {
      std::uint64_t word = rng_();
      for (std::size_t j = 0; j < 8; ++j) b[i + j] = static_cast<std::uint8_t>(word >> (8 * j));
    }
  }
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);

  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(36);
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10) out += '-';
    out += kHex[b[i] >> 4];
    out += kHex[b[i] & 0x0F];
  }
  return out;
}

}  // namespace eav
