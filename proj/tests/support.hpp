#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "eav/protocol.hpp"
#include "eav/registry.hpp"

namespace eav::testing {

// Removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> n{0};
    path_ = std::filesystem::temp_directory_path() /
            ("eav-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++) + "-" +
             std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
  std::filesystem::path path_;
};

inline ChargeRequest sample_request(const std::string& owner = "o1", const std::string& car = "c1") {
  return {owner, "Ada Lovelace", "ada@example.org", "+44 20 7946 0000", car, "Model E", 2021, "2021-06-15"};
}

inline StationRecord sample_station(const std::string& id = "s1") { return {id, "Depot " + id, "10.0.0.1:7431"}; }

inline void register_request(Registry& reg, const ChargeRequest& r, const StationRecord& s) {
  reg.register_car(owner_of(r), car_of(r), s);
}

}  // namespace eav::testing
