#pragma once

// HTTP/JSON facade over the registry for the registration web form and
// operators. All routes live under /api/v1.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>

#include <json.hpp>

#include "eav/registry.hpp"

namespace eav {

inline constexpr std::uint16_t kDefaultApiPort = 7432;

/// The flat registration form: owner_*, car_*, station_* fields.
struct RegistrationSubmission {
  OwnerRecord owner;
  CarRecord car;
  StationRecord station;
};

/// field name -> message, e.g. {"owner_email": "required"}.
using FieldErrors = std::map<std::string, std::string>;

std::variant<RegistrationSubmission, FieldErrors> parse_submission(const nlohmann::json& body);

class RegApi {
public:
  RegApi(std::shared_ptr<Registry> registry, std::string cors_origin = "*");
  ~RegApi();
  RegApi(const RegApi&) = delete;
  RegApi& operator=(const RegApi&) = delete;

  /// Binds host:port (0 = ephemeral) and returns the bound port. Throws
  /// BindError.
  std::uint16_t bind(const std::string& host, std::uint16_t port);
  /// Blocks serving requests until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace eav
