#pragma once

#include <cstdint>
#include <mutex>
#include <random>
#include <string>

namespace eav {

/// Thread-safe generator of RFC 4122 version-4 formatted ids.
/// Equal seeds yield equal id sequences.
class IdSource {
public:
  explicit IdSource(std::uint64_t seed);
  /// Seeds from std::random_device.
  IdSource();

  std::string next();

private:
  std::mutex mu_;
  std::mt19937_64 rng_;
};

}  // namespace eav
