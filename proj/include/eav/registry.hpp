#pragma once

// Relational registry: owners, cars, charging stations, the station-has-car
// registration relation, and the transaction ledger.
//
// Every mutation is expressed as an event, appended to
// <data-dir>/events.jsonl and then applied in memory. Replaying the log from
// empty rebuilds the exact relation contents.

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "eav/clock.hpp"
#include "eav/decimal.hpp"
#include "eav/ids.hpp"
#include "eav/protocol.hpp"
#include "eav/session.hpp"

namespace eav {

struct OwnerRecord {
  std::string id;
  std::string name;
  std::string email;
  std::string phone;
  friend bool operator==(const OwnerRecord&, const OwnerRecord&) = default;
};

struct CarRecord {
  std::string id;
  std::string model_name;
  int model_year = 0;
  std::string date_purchased;
  std::string owner_id;
  friend bool operator==(const CarRecord&, const CarRecord&) = default;
};

struct StationRecord {
  std::string id;
  std::string name;
  std::string address;
  friend bool operator==(const StationRecord&, const StationRecord&) = default;
};

struct RegistrationRecord {
  std::string station_id;
  std::string car_id;
  std::string car_owner_id;
  friend bool operator==(const RegistrationRecord&, const RegistrationRecord&) = default;
};

struct TransactionRecord {
  std::string id;
  std::string bill_id;
  std::string station_id;
  std::string car_id;
  std::string owner_id;
  Kwh kwh;
  Rate price_per_kwh;
  Money total;
  Timestamp timestamp;
  std::string outcome = "completed";
  friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

enum class Relation { Owner, Car, Station, Registration, Transaction };
std::string_view to_string(Relation r);

class RegistryError : public std::runtime_error {
public:
  enum class Kind { KeyConstraintViolation, DuplicateRegistration, ForeignKeyViolation, InvalidRecord, CorruptLog, Io };

  RegistryError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  static RegistryError key_violation(Relation rel, std::string key, const std::string& what);
  static RegistryError foreign_key(Relation rel, std::string key, const std::string& what);
  static RegistryError invalid(std::vector<FieldIssue> issues);
  static RegistryError corrupt(std::size_t line, const std::string& what);

  Kind kind() const { return kind_; }
  std::optional<Relation> relation() const { return relation_; }
  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }
  const std::vector<FieldIssue>& issues() const { return issues_; }

private:
  Kind kind_;
  std::optional<Relation> relation_;
  std::string key_;
  std::size_t line_ = 0;
  std::vector<FieldIssue> issues_;
};

std::string_view to_string(RegistryError::Kind k);

// Events that make up the append-only log.
namespace event {
struct OwnerAdded {
  OwnerRecord owner;
};
struct CarAdded {
  CarRecord car;
};
struct StationAdded {
  StationRecord station;
};
struct RegistrationAdded {
  RegistrationRecord registration;
};
struct TransactionRecorded {
  TransactionRecord transaction;
};
}  // namespace event

using Event =
    std::variant<event::OwnerAdded, event::CarAdded, event::StationAdded, event::RegistrationAdded, event::TransactionRecorded>;

nlohmann::ordered_json to_json(const Event& e);
/// Throws std::invalid_argument on schema errors.
Event event_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const OwnerRecord& r);
nlohmann::ordered_json to_json(const CarRecord& r);
nlohmann::ordered_json to_json(const StationRecord& r);
nlohmann::ordered_json to_json(const RegistrationRecord& r);
nlohmann::ordered_json to_json(const TransactionRecord& r);

/// Field-level checks shared by register and the HTTP facade.
std::vector<FieldIssue> validate(const OwnerRecord& r);
std::vector<FieldIssue> validate(const CarRecord& r);
std::vector<FieldIssue> validate(const StationRecord& r);

/// Attribute equivalence for "same details": NFC-normalized, trimmed,
/// and case-folded for emails.
std::string normalize_text(std::string_view s);
bool same_text(std::string_view a, std::string_view b);
bool same_email(std::string_view a, std::string_view b);
bool same_entity(const OwnerRecord& a, const OwnerRecord& b);
bool same_entity(const CarRecord& a, const CarRecord& b);
bool same_entity(const StationRecord& a, const StationRecord& b);

/// Full copy of all relations, in insertion order.
struct RegistrySnapshot {
  std::vector<OwnerRecord> owners;
  std::vector<CarRecord> cars;
  std::vector<StationRecord> stations;
  std::vector<RegistrationRecord> registrations;
  std::vector<TransactionRecord> transactions;
  friend bool operator==(const RegistrySnapshot&, const RegistrySnapshot&) = default;
};

struct Cardinalities {
  std::size_t owners = 0, cars = 0, stations = 0, registrations = 0, transactions = 0;
  friend bool operator==(const Cardinalities&, const Cardinalities&) = default;
};

class Registry {
public:
  struct Options {
    /// Id source for transactions recorded without a pre-assigned id.
    std::shared_ptr<IdSource> ids;
    Clock clock;
    /// fsync the log after every append.
    bool sync = true;
  };

  /// Volatile store with no backing log.
  Registry();
  explicit Registry(Options opts);
  /// Loads <data_dir>/events.jsonl (creating the directory if needed).
  /// Throws RegistryError{CorruptLog} naming the first bad line.
  explicit Registry(const std::filesystem::path& data_dir);
  Registry(const std::filesystem::path& data_dir, Options opts);

  ~Registry();
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  std::optional<std::filesystem::path> log_path() const;

  /// Owner, car and station tuples are inserted unless an identical tuple
  /// already exists; the registration triple must be new. All key
  /// constraints are checked before anything is written.
  RegistrationRecord register_car(const OwnerRecord& owner, const CarRecord& car, const StationRecord& station);

  /// Inserts a station on its own (identical re-adds are no-ops).
  void add_station(const StationRecord& station);

  /// Read-only. Grants iff the (station, car, owner) triple is registered and
  /// the stored attributes match the request.
  AuthDecision authorize(std::string_view station_id, const ChargeRequest& request) const;

  TransactionRecord record_transaction(const TransactionDraft& draft);

  /// Validates, persists, then applies one event.
  void append_event(const Event& e);

  std::vector<OwnerRecord> list_owners() const;
  std::vector<CarRecord> list_cars(std::optional<std::string_view> owner_id = std::nullopt) const;
  std::vector<StationRecord> list_stations() const;
  std::vector<RegistrationRecord> list_registrations(std::optional<std::string_view> station_id = std::nullopt) const;
  std::vector<TransactionRecord> list_transactions(std::optional<std::string_view> station_id = std::nullopt,
                                                   std::optional<Timestamp> since = std::nullopt) const;
  std::optional<StationRecord> find_station(std::string_view id) const;

  RegistrySnapshot snapshot() const;
  Cardinalities cardinalities() const;

  struct Relations;

private:
  void persist(const std::vector<Event>& events);

  Options opts_;
  std::optional<std::filesystem::path> log_path_;
  mutable std::shared_mutex mu_;
  std::unique_ptr<Relations> rel_;
};

/// Convenience pair for callers building owner/car records from a request.
OwnerRecord owner_of(const ChargeRequest& r);
CarRecord car_of(const ChargeRequest& r);

}  // namespace eav
