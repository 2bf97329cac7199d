#pragma once

// Vehicle-side client: connects to a station's static address and runs the
// client session machine to completion.

#include <chrono>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eav/protocol.hpp"
#include "eav/session.hpp"
#include "eav/transcript.hpp"
#include "eav/transport.hpp"

namespace eav {

inline constexpr std::chrono::seconds kConnectTimeout{5};

struct SessionReport {
  SessionOutcome outcome;
  std::optional<msg::Bill> bill;
  std::optional<std::string> receipt_transaction_id;
  /// In = received from the station, Out = sent by the vehicle.
  std::vector<TranscriptEntry> transcript;
};

struct VehicleTimeouts {
  std::chrono::milliseconds connect = kConnectTimeout;
  std::chrono::milliseconds frame = std::chrono::seconds(30);
};

/// Opens one TCP connection to intent.station_address:station_port.
/// Throws ConnectError if the station is unreachable; transport failures
/// after connecting become a ProtocolError outcome.
SessionReport charge(const ChargeIntent& intent, VehicleTimeouts timeouts = {});

/// Runs the client machine over an already-open channel.
SessionReport run_client_session(LineChannel& channel, const ChargeIntent& intent,
                                 std::chrono::milliseconds frame_timeout = std::chrono::seconds(30));

class RequestParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Parses the request document (same field names as the wire payload).
/// Throws RequestParseError for unreadable/non-JSON files and RequestError
/// naming the offending field otherwise.
ChargeRequest load_charge_request(const std::filesystem::path& path);

/// Replays the received frames of a report through client_step.
SessionOutcome replay_client(const SessionReport& report, const ChargeIntent& intent);

}  // namespace eav
