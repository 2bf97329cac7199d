#pragma once

// Pure session state machines for the station (server) and vehicle (client)
// sides of one charging session.
//
// Message order on a successful session:
//   vehicle: FileName, FileContent
//   station: AuthOk, AmountRequest
//   vehicle: Amount
//   station: Bill
//   vehicle: Payment
//   station: Receipt, Close
//
// Both step functions are total. Anything unexpected closes the session
// with a ProtocolError outcome; terminal states absorb every input.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "eav/billing.hpp"
#include "eav/decimal.hpp"
#include "eav/protocol.hpp"

namespace eav {

// --- authorization ---------------------------------------------------------

enum class DenialReason { NotRegistered, DetailMismatch };

std::string_view to_string(DenialReason r);

struct AuthDecision {
  bool granted = false;
  DenialReason reason = DenialReason::NotRegistered;
  std::string detail;

  static AuthDecision grant() { return {true, DenialReason::NotRegistered, {}}; }
  static AuthDecision deny(DenialReason r, std::string detail = {}) { return {false, r, std::move(detail)}; }
  friend bool operator==(const AuthDecision&, const AuthDecision&) = default;
};

/// Authorization query already bound to one station.
using Authorizer = std::function<AuthDecision(const ChargeRequest&)>;

// --- outcomes --------------------------------------------------------------

namespace outcome {
struct Completed {
  std::string transaction_id;
  friend bool operator==(const Completed&, const Completed&) = default;
};
struct DeniedUnregistered {
  friend bool operator==(const DeniedUnregistered&, const DeniedUnregistered&) = default;
};
struct ProtocolError {
  std::string detail;
  friend bool operator==(const ProtocolError&, const ProtocolError&) = default;
};
struct PaymentMismatch {
  friend bool operator==(const PaymentMismatch&, const PaymentMismatch&) = default;
};
}  // namespace outcome

using SessionOutcome =
    std::variant<outcome::Completed, outcome::DeniedUnregistered, outcome::ProtocolError, outcome::PaymentMismatch>;

/// "completed", "denied", "protocol_error" or "payment_mismatch".
std::string_view outcome_kind(const SessionOutcome& o);
std::string describe(const SessionOutcome& o);

// Close reasons the station puts on the wire.
namespace close_reason {
inline constexpr std::string_view kCompleted = "completed";
inline constexpr std::string_view kDenied = "denied";
inline constexpr std::string_view kPaymentMismatch = "payment-mismatch";
inline constexpr std::string_view kProtocolError = "protocol-error";
}  // namespace close_reason

/// A completed, paid session ready to be written to the ledger.
struct TransactionDraft {
  std::string transaction_id;
  std::string bill_id;
  std::string station_id;
  std::string car_id;
  std::string owner_id;
  Kwh kwh;
  Rate price_per_kwh;
  Money total;
  friend bool operator==(const TransactionDraft&, const TransactionDraft&) = default;
};

// --- server ----------------------------------------------------------------

namespace server {
struct AwaitFileName {
  friend bool operator==(const AwaitFileName&, const AwaitFileName&) = default;
};
struct AwaitFileContent {
  friend bool operator==(const AwaitFileContent&, const AwaitFileContent&) = default;
};
struct AwaitAmount {
  ChargeRequest request;
  friend bool operator==(const AwaitAmount&, const AwaitAmount&) = default;
};
struct AwaitPayment {
  ChargeRequest request;
  msg::Bill bill;
  friend bool operator==(const AwaitPayment&, const AwaitPayment&) = default;
};
struct Closed {
  SessionOutcome outcome;
  friend bool operator==(const Closed&, const Closed&) = default;
};
}  // namespace server

using ServerState =
    std::variant<server::AwaitFileName, server::AwaitFileContent, server::AwaitAmount, server::AwaitPayment, server::Closed>;

struct ServerContext {
  std::string station_id;
  Rate tariff;
  Authorizer authorize;
  /// Source of fresh bill and transaction ids.
  IdFn next_id;
};

struct ServerStep {
  ServerState state;
  std::vector<Message> out;
  std::optional<TransactionDraft> draft;
};

ServerStep server_step(const ServerState& state, const Message& in, const ServerContext& ctx);

inline bool is_terminal(const ServerState& s) { return std::holds_alternative<server::Closed>(s); }

// --- client ----------------------------------------------------------------

struct ChargeIntent {
  ChargeRequest request;
  std::string file_name = "test.json";
  Kwh kwh;
  std::string station_address = "127.0.0.1";
  std::uint16_t station_port = 7431;
};

namespace client {
struct SendFileName {
  friend bool operator==(const SendFileName&, const SendFileName&) = default;
};
struct SendFileContent {
  friend bool operator==(const SendFileContent&, const SendFileContent&) = default;
};
struct AwaitAuth {
  friend bool operator==(const AwaitAuth&, const AwaitAuth&) = default;
};
struct AwaitAmountRequest {
  friend bool operator==(const AwaitAmountRequest&, const AwaitAmountRequest&) = default;
};
struct AwaitBill {
  friend bool operator==(const AwaitBill&, const AwaitBill&) = default;
};
struct SendPayment {
  msg::Bill bill;
  friend bool operator==(const SendPayment&, const SendPayment&) = default;
};
struct AwaitReceipt {
  msg::Bill bill;
  friend bool operator==(const AwaitReceipt&, const AwaitReceipt&) = default;
};
struct Done {
  SessionOutcome outcome;
  friend bool operator==(const Done&, const Done&) = default;
};
}  // namespace client

using ClientState = std::variant<client::SendFileName, client::SendFileContent, client::AwaitAuth,
                                 client::AwaitAmountRequest, client::AwaitBill, client::SendPayment,
                                 client::AwaitReceipt, client::Done>;

struct ClientStep {
  ClientState state;
  std::vector<Message> out;
};

/// `in` is empty when the client is due to speak (Send* states) or when the
/// transport delivered nothing; an empty input in a waiting state ends the
/// session with ProtocolError.
ClientStep client_step(const ClientState& state, const std::optional<Message>& in, const ChargeIntent& intent);

inline bool is_terminal(const ClientState& s) { return std::holds_alternative<client::Done>(s); }

/// True for states where the client sends without waiting for input.
bool client_speaks(const ClientState& s);

// --- in-memory composition -------------------------------------------------

struct Conversation {
  std::vector<Message> frames;  // every frame, in wire order
  std::vector<bool> from_client;
  SessionOutcome client_outcome;
  SessionOutcome server_outcome;
  std::vector<TransactionDraft> drafts;
};

/// Runs both machines against each other over a lossless in-memory channel.
Conversation converse(const ChargeIntent& intent, const ServerContext& ctx);

}  // namespace eav
