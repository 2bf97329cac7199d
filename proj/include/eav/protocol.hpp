#pragma once

// Wire messages for one charging session and their line codec.
//
// Every frame is a single UTF-8 JSON object with a "type" discriminator,
// terminated by one 0x0A byte. Decimals travel as JSON numbers and are
// converted to scaled integers on decode.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "eav/decimal.hpp"

namespace eav {

inline constexpr std::size_t kMaxFrameBytes = 65536;
inline constexpr int kMinModelYear = 1900;
inline constexpr int kMaxModelYear = 2200;

/// The per-vehicle request document: owner identity plus car identity.
struct ChargeRequest {
  std::string owner_id;
  std::string owner_name;
  std::string owner_email;
  std::string owner_phone;
  std::string car_id;
  std::string car_model_name;
  int car_model_year = 0;
  std::string car_date_purchased;  // YYYY-MM-DD

  friend bool operator==(const ChargeRequest&, const ChargeRequest&) = default;
};

struct FieldIssue {
  std::string field;
  std::string message;
  friend bool operator==(const FieldIssue&, const FieldIssue&) = default;
};

/// True for a valid proleptic-Gregorian YYYY-MM-DD date.
bool is_iso_date(std::string_view s);

/// Empty when every invariant holds.
std::vector<FieldIssue> validate(const ChargeRequest& r);

/// Raised when a request document is missing a field or breaks an invariant.
class RequestError : public std::runtime_error {
public:
  RequestError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

/// Strict object -> ChargeRequest; unknown keys are rejected.
ChargeRequest charge_request_from_json(const nlohmann::json& j);
nlohmann::ordered_json charge_request_to_json(const ChargeRequest& r);

namespace msg {

struct FileName {
  std::string name;
  friend bool operator==(const FileName&, const FileName&) = default;
};
struct FileContent {
  ChargeRequest request;
  friend bool operator==(const FileContent&, const FileContent&) = default;
};
struct AuthOk {
  std::string station_id;
  friend bool operator==(const AuthOk&, const AuthOk&) = default;
};
struct AuthDenied {
  std::string reason;
  friend bool operator==(const AuthDenied&, const AuthDenied&) = default;
};
struct AmountRequest {
  friend bool operator==(const AmountRequest&, const AmountRequest&) = default;
};
struct Amount {
  Kwh kwh;
  friend bool operator==(const Amount&, const Amount&) = default;
};
struct Bill {
  std::string bill_id;
  Kwh kwh;
  Rate price_per_kwh;
  Money total;
  friend bool operator==(const Bill&, const Bill&) = default;
};
struct Payment {
  std::string bill_id;
  Money amount;
  friend bool operator==(const Payment&, const Payment&) = default;
};
struct Receipt {
  std::string transaction_id;
  std::string bill_id;
  friend bool operator==(const Receipt&, const Receipt&) = default;
};
struct Close {
  std::string reason;
  friend bool operator==(const Close&, const Close&) = default;
};

}  // namespace msg

using Message = std::variant<msg::FileName, msg::FileContent, msg::AuthOk, msg::AuthDenied, msg::AmountRequest,
                             msg::Amount, msg::Bill, msg::Payment, msg::Receipt, msg::Close>;

inline constexpr std::size_t kMessageKinds = std::variant_size_v<Message>;

/// The wire "type" tag, e.g. "file_name".
std::string_view type_name(const Message& m);
std::string_view type_name(std::size_t variant_index);

class CodecError : public std::runtime_error {
public:
  enum class Kind { EncodingOverflow, MalformedFrame, UnknownType, InvariantViolation };

  CodecError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

std::string_view to_string(CodecError::Kind k);

/// Throws CodecError{InvariantViolation} if m breaks a message invariant.
void check_invariants(const Message& m);

/// One compact JSON object plus a trailing '\n'.
std::string encode_message(const Message& m);

/// Accepts a line with or without its trailing '\n'.
Message decode_message(std::string_view line);

}  // namespace eav
