#pragma once

// Charging-station daemon: a single-lane accept loop that runs the server
// session machine for one vehicle at a time.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>

#include "eav/decimal.hpp"
#include "eav/ids.hpp"
#include "eav/registry.hpp"
#include "eav/session.hpp"
#include "eav/transport.hpp"

namespace eav {

inline constexpr std::uint16_t kDefaultStationPort = 7431;
inline constexpr std::chrono::seconds kDefaultSessionTimeout{30};

struct StationConfig {
  std::string station_id;
  std::string bind_address = "0.0.0.0";
  /// 0 binds an ephemeral port.
  std::uint16_t port = kDefaultStationPort;
  Rate tariff;
  std::filesystem::path data_dir = "data";
  /// Defaults to <data_dir>/archive when empty.
  std::filesystem::path archive_dir;
  std::chrono::milliseconds session_timeout = kDefaultSessionTimeout;
};

class StationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Throws StationError unless the tariff is positive and the station exists.
void validate(const StationConfig& cfg, const Registry& registry);

/// Strips directory components and parent references: "../../etc/x" -> "etc_x".
std::string sanitize_file_name(std::string_view name);

/// Writes <archive_dir>/<session_id>_<sanitized name> and returns its path.
/// Throws std::runtime_error on I/O failure.
std::filesystem::path archive_request(const std::filesystem::path& archive_dir, std::string_view session_id,
                                      std::string_view file_name, std::string_view raw_content);

struct SessionSummary {
  std::string session_id;
  SessionOutcome outcome;
  std::optional<TransactionRecord> transaction;
  std::filesystem::path transcript;
  std::optional<std::filesystem::path> archived;
};

class Station {
public:
  /// Validates the config and binds the listening socket (BindError).
  Station(StationConfig cfg, std::shared_ptr<Registry> registry, std::shared_ptr<IdSource> ids = {});

  std::uint16_t port() const { return listener_.port(); }
  const StationConfig& config() const { return cfg_; }
  std::filesystem::path transcript_dir() const { return cfg_.data_dir / "transcripts"; }

  /// Accept loop; returns once `stop` is requested and the current session
  /// has finished.
  void serve(std::stop_token stop);

  /// Waits up to `accept_timeout` for one connection and runs its session.
  std::optional<SessionSummary> serve_one(std::chrono::milliseconds accept_timeout);

  /// Drives one session over an already-open channel. Sessions on the same
  /// station are serialized.
  SessionSummary run_session(LineChannel& channel, const std::string& peer);

  void set_session_observer(std::function<void(const SessionSummary&)> fn) { observer_ = std::move(fn); }

private:
  std::string next_session_id();

  StationConfig cfg_;
  std::shared_ptr<Registry> registry_;
  std::shared_ptr<IdSource> ids_;
  TcpListener listener_;
  std::mutex session_mu_;
  std::uint64_t session_counter_ = 0;
  std::function<void(const SessionSummary&)> observer_;
};

}  // namespace eav
