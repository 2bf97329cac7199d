#include "eav/registry.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

namespace eav {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

std::string triple_key(std::string_view station, std::string_view car, std::string_view owner) {
  std::string k;
  k.reserve(station.size() + car.size() + owner.size() + 2);
  k.append(station).append(1, '\x1f').append(car).append(1, '\x1f').append(owner);
  return k;
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  std::size_t b = 0, e = s.size();
  while (b < e && ws(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && ws(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string req_str(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw std::invalid_argument(std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

template <class F>
F req_dec(const json& j, const char* key) {
  try {
    return F::parse(req_str(j, key));
  } catch (const DecimalError& e) {
    throw std::invalid_argument(std::string("field '") + key + "': " + e.what());
  }
}

const json& req_obj(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_object()) throw std::invalid_argument(std::string("missing object '") + key + "'");
  return *it;
}

OwnerRecord owner_from_json(const json& j) {
  return {req_str(j, "id"), req_str(j, "name"), req_str(j, "email"), req_str(j, "phone")};
}

CarRecord car_from_json(const json& j) {
  auto it = j.find("model_year");
  if (it == j.end() || !it->is_number_integer()) throw std::invalid_argument("missing integer field 'model_year'");
  return {req_str(j, "id"), req_str(j, "model_name"), it->get<int>(), req_str(j, "date_purchased"),
          req_str(j, "owner_id")};
}

StationRecord station_from_json(const json& j) { return {req_str(j, "id"), req_str(j, "name"), req_str(j, "address")}; }

RegistrationRecord registration_from_json(const json& j) {
  return {req_str(j, "station_id"), req_str(j, "car_id"), req_str(j, "car_owner_id")};
}

TransactionRecord transaction_from_json(const json& j) {
  TransactionRecord t;
  t.id = req_str(j, "id");
  t.bill_id = req_str(j, "bill_id");
  t.station_id = req_str(j, "station_id");
  t.car_id = req_str(j, "car_id");
  t.owner_id = req_str(j, "owner_id");
  t.kwh = req_dec<Kwh>(j, "kwh");
  t.price_per_kwh = req_dec<Rate>(j, "price_per_kwh");
  t.total = req_dec<Money>(j, "total");
  auto ts = parse_utc(req_str(j, "timestamp"));
  if (!ts) throw std::invalid_argument("bad timestamp");
  t.timestamp = *ts;
  t.outcome = req_str(j, "outcome");
  return t;
}

}  // namespace

// --- errors ----------------------------------------------------------------

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::Owner: return "owner";
    case Relation::Car: return "car";
    case Relation::Station: return "station";
    case Relation::Registration: return "registration";
    case Relation::Transaction: return "transaction";
  }
  return "?";
}

std::string_view to_string(RegistryError::Kind k) {
  switch (k) {
    case RegistryError::Kind::KeyConstraintViolation: return "KeyConstraintViolation";
    case RegistryError::Kind::DuplicateRegistration: return "DuplicateRegistration";
    case RegistryError::Kind::ForeignKeyViolation: return "ForeignKeyViolation";
    case RegistryError::Kind::InvalidRecord: return "InvalidRecord";
    case RegistryError::Kind::CorruptLog: return "CorruptLog";
    case RegistryError::Kind::Io: return "Io";
  }
  return "?";
}

RegistryError RegistryError::key_violation(Relation rel, std::string key, const std::string& what) {
  RegistryError e(Kind::KeyConstraintViolation, what);
  e.relation_ = rel;
  e.key_ = std::move(key);
  return e;
}

RegistryError RegistryError::foreign_key(Relation rel, std::string key, const std::string& what) {
  RegistryError e(Kind::ForeignKeyViolation, what);
  e.relation_ = rel;
  e.key_ = std::move(key);
  return e;
}

RegistryError RegistryError::invalid(std::vector<FieldIssue> issues) {
  std::string what = "invalid record:";
  for (const auto& i : issues) what += " " + i.field + " (" + i.message + ")";
  RegistryError e(Kind::InvalidRecord, what);
  e.issues_ = std::move(issues);
  return e;
}

RegistryError RegistryError::corrupt(std::size_t line, const std::string& what) {
  RegistryError e(Kind::CorruptLog, "corrupt event log at line " + std::to_string(line) + ": " + what);
  e.line_ = line;
  return e;
}

// --- json ------------------------------------------------------------------

ordered_json to_json(const OwnerRecord& r) {
  return {{"id", r.id}, {"name", r.name}, {"email", r.email}, {"phone", r.phone}};
}

ordered_json to_json(const CarRecord& r) {
  return {{"id", r.id},
          {"model_name", r.model_name},
          {"model_year", r.model_year},
          {"date_purchased", r.date_purchased},
          {"owner_id", r.owner_id}};
}

ordered_json to_json(const StationRecord& r) { return {{"id", r.id}, {"name", r.name}, {"address", r.address}}; }

ordered_json to_json(const RegistrationRecord& r) {
  return {{"station_id", r.station_id}, {"car_id", r.car_id}, {"car_owner_id", r.car_owner_id}};
}

ordered_json to_json(const TransactionRecord& r) {
  return {{"id", r.id},
          {"bill_id", r.bill_id},
          {"station_id", r.station_id},
          {"car_id", r.car_id},
          {"owner_id", r.owner_id},
          {"kwh", r.kwh.to_string()},
          {"price_per_kwh", r.price_per_kwh.to_string()},
          {"total", r.total.to_string()},
          {"timestamp", format_utc(r.timestamp)},
          {"outcome", r.outcome}};
}

ordered_json to_json(const Event& e) {
  return std::visit(overloaded{
                        [](const event::OwnerAdded& v) {
                          return ordered_json{{"event_type", "owner_added"}, {"owner", to_json(v.owner)}};
                        },
                        [](const event::CarAdded& v) {
                          return ordered_json{{"event_type", "car_added"}, {"car", to_json(v.car)}};
                        },
                        [](const event::StationAdded& v) {
                          return ordered_json{{"event_type", "station_added"}, {"station", to_json(v.station)}};
                        },
                        [](const event::RegistrationAdded& v) {
                          return ordered_json{{"event_type", "registration_added"},
                                              {"registration", to_json(v.registration)}};
                        },
                        [](const event::TransactionRecorded& v) {
                          return ordered_json{{"event_type", "transaction_recorded"},
                                              {"transaction", to_json(v.transaction)}};
                        },
                    },
                    e);
}

Event event_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("event is not an object");
  const auto type = req_str(j, "event_type");
  if (type == "owner_added") return event::OwnerAdded{owner_from_json(req_obj(j, "owner"))};
  if (type == "car_added") return event::CarAdded{car_from_json(req_obj(j, "car"))};
  if (type == "station_added") return event::StationAdded{station_from_json(req_obj(j, "station"))};
  if (type == "registration_added")
    return event::RegistrationAdded{registration_from_json(req_obj(j, "registration"))};
  if (type == "transaction_recorded")
    return event::TransactionRecorded{transaction_from_json(req_obj(j, "transaction"))};
  throw std::invalid_argument("unknown event_type '" + type + "'");
}

// --- validation & equivalence ---------------------------------------------

std::vector<FieldIssue> validate(const OwnerRecord& r) {
  std::vector<FieldIssue> out;
  if (r.id.empty()) out.push_back({"owner_id", "required"});
  return out;
}

std::vector<FieldIssue> validate(const CarRecord& r) {
  std::vector<FieldIssue> out;
  if (r.id.empty()) out.push_back({"car_id", "required"});
  if (r.model_year < kMinModelYear || r.model_year > kMaxModelYear)
    out.push_back({"car_model_year", "must be in [1900, 2200]"});
  if (!is_iso_date(r.date_purchased)) out.push_back({"car_date_purchased", "must be a YYYY-MM-DD date"});
  if (r.owner_id.empty()) out.push_back({"car_owner_id", "required"});
  return out;
}

std::vector<FieldIssue> validate(const StationRecord& r) {
  std::vector<FieldIssue> out;
  if (r.id.empty()) out.push_back({"station_id", "required"});
  return out;
}

std::string normalize_text(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return trim(std::string(s));
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString n = nfc->normalize(u, status);
  if (U_FAILURE(status)) return trim(std::string(s));
  std::string out;
  n.trim().toUTF8String(out);
  return out;
}

bool same_text(std::string_view a, std::string_view b) { return a == b || normalize_text(a) == normalize_text(b); }

bool same_email(std::string_view a, std::string_view b) {
  if (a == b) return true;
  auto fold = [](std::string_view s) {
    std::string n = normalize_text(s);
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(n);
    std::string out;
    u.foldCase().toUTF8String(out);
    return out;
  };
  return fold(a) == fold(b);
}

bool same_entity(const OwnerRecord& a, const OwnerRecord& b) {
  return a.id == b.id && same_text(a.name, b.name) && same_email(a.email, b.email) && same_text(a.phone, b.phone);
}

bool same_entity(const CarRecord& a, const CarRecord& b) {
  return a.id == b.id && a.owner_id == b.owner_id && a.model_year == b.model_year &&
         same_text(a.model_name, b.model_name) && same_text(a.date_purchased, b.date_purchased);
}

bool same_entity(const StationRecord& a, const StationRecord& b) {
  return a.id == b.id && same_text(a.name, b.name) && same_text(a.address, b.address);
}

OwnerRecord owner_of(const ChargeRequest& r) { return {r.owner_id, r.owner_name, r.owner_email, r.owner_phone}; }

CarRecord car_of(const ChargeRequest& r) {
  return {r.car_id, r.car_model_name, r.car_model_year, r.car_date_purchased, r.owner_id};
}

// --- relations -------------------------------------------------------------

struct Registry::Relations {
  RegistrySnapshot data;
  std::unordered_map<std::string, std::size_t> owner_idx, car_idx, station_idx, tx_idx;
  std::unordered_set<std::string> registrations;

  const OwnerRecord* owner(std::string_view id) const {
    auto it = owner_idx.find(std::string(id));
    return it == owner_idx.end() ? nullptr : &data.owners[it->second];
  }
  const CarRecord* car(std::string_view id) const {
    auto it = car_idx.find(std::string(id));
    return it == car_idx.end() ? nullptr : &data.cars[it->second];
  }
  const StationRecord* station(std::string_view id) const {
    auto it = station_idx.find(std::string(id));
    return it == station_idx.end() ? nullptr : &data.stations[it->second];
  }
  bool registered(std::string_view s, std::string_view c, std::string_view o) const {
    return registrations.count(triple_key(s, c, o)) != 0;
  }

  // Throws if applying e would break any relation invariant.
  void check(const Event& e) const {
    std::visit(
        overloaded{
            [&](const event::OwnerAdded& v) {
              if (auto issues = validate(v.owner); !issues.empty()) throw RegistryError::invalid(issues);
              if (owner(v.owner.id))
                throw RegistryError::key_violation(Relation::Owner, v.owner.id, "owner id '" + v.owner.id + "' already exists");
            },
            [&](const event::CarAdded& v) {
              if (auto issues = validate(v.car); !issues.empty()) throw RegistryError::invalid(issues);
              if (car(v.car.id))
                throw RegistryError::key_violation(Relation::Car, v.car.id, "car id '" + v.car.id + "' already exists");
              if (!owner(v.car.owner_id))
                throw RegistryError::foreign_key(Relation::Car, v.car.id, "car '" + v.car.id + "' references unknown owner '" +
                                                                               v.car.owner_id + "'");
            },
            [&](const event::StationAdded& v) {
              if (auto issues = validate(v.station); !issues.empty()) throw RegistryError::invalid(issues);
              if (station(v.station.id))
                throw RegistryError::key_violation(Relation::Station, v.station.id,
                                                   "station id '" + v.station.id + "' already exists");
            },
            [&](const event::RegistrationAdded& v) {
              const auto& r = v.registration;
              const CarRecord* c = car(r.car_id);
              if (!station(r.station_id) || !c || !owner(r.car_owner_id) || c->owner_id != r.car_owner_id)
                throw RegistryError::foreign_key(Relation::Registration, r.car_id,
                                                 "registration (" + r.station_id + ", " + r.car_id + ", " + r.car_owner_id +
                                                     ") references missing or inconsistent records");
              if (registered(r.station_id, r.car_id, r.car_owner_id))
                throw RegistryError(RegistryError::Kind::DuplicateRegistration,
                                    "car '" + r.car_id + "' of owner '" + r.car_owner_id +
                                        "' is already registered at station '" + r.station_id + "'");
            },
            [&](const event::TransactionRecorded& v) {
              const auto& t = v.transaction;
              if (t.id.empty()) throw RegistryError::invalid({{"transaction_id", "required"}});
              if (t.kwh.is_zero()) throw RegistryError::invalid({{"kwh", "must be positive"}});
              if (price(t.kwh, t.price_per_kwh) != t.total)
                throw RegistryError::invalid({{"total", "must equal round2(kwh x price_per_kwh)"}});
              if (tx_idx.count(t.id))
                throw RegistryError::key_violation(Relation::Transaction, t.id, "transaction id '" + t.id + "' already exists");
              if (!station(t.station_id) || !car(t.car_id) || !owner(t.owner_id) ||
                  !registered(t.station_id, t.car_id, t.owner_id))
                throw RegistryError::foreign_key(Relation::Transaction, t.id,
                                                 "transaction '" + t.id + "' references no existing registration");
            },
        },
        e);
  }

  // Assumes check(e) passed.
  void insert(const Event& e) {
    std::visit(overloaded{
                   [&](const event::OwnerAdded& v) {
                     owner_idx.emplace(v.owner.id, data.owners.size());
                     data.owners.push_back(v.owner);
                   },
                   [&](const event::CarAdded& v) {
                     car_idx.emplace(v.car.id, data.cars.size());
                     data.cars.push_back(v.car);
                   },
                   [&](const event::StationAdded& v) {
                     station_idx.emplace(v.station.id, data.stations.size());
                     data.stations.push_back(v.station);
                   },
                   [&](const event::RegistrationAdded& v) {
                     const auto& r = v.registration;
                     registrations.insert(triple_key(r.station_id, r.car_id, r.car_owner_id));
                     data.registrations.push_back(r);
                   },
                   [&](const event::TransactionRecorded& v) {
                     tx_idx.emplace(v.transaction.id, data.transactions.size());
                     data.transactions.push_back(v.transaction);
                   },
               },
               e);
  }

  void apply(const Event& e) {
    check(e);
    insert(e);
  }
};

// --- registry --------------------------------------------------------------

Registry::Registry() : Registry(Options{}) {}

Registry::Registry(Options opts) : opts_(std::move(opts)), rel_(std::make_unique<Relations>()) {
  if (!opts_.ids) opts_.ids = std::make_shared<IdSource>();
  if (!opts_.clock) opts_.clock = utc_now;
}

Registry::Registry(const std::filesystem::path& data_dir) : Registry(data_dir, Options{}) {}

Registry::Registry(const std::filesystem::path& data_dir, Options opts) : Registry(std::move(opts)) {
  std::error_code ec;
  std::filesystem::create_directories(data_dir, ec);
  if (ec) throw RegistryError(RegistryError::Kind::Io, "cannot create data directory " + data_dir.string() + ": " + ec.message());
  log_path_ = data_dir / "events.jsonl";

  std::ifstream in(*log_path_);
  if (!in) return;  // fresh store
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      rel_->apply(event_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw RegistryError::corrupt(lineno, e.what());
    } catch (const std::invalid_argument& e) {
      throw RegistryError::corrupt(lineno, e.what());
    } catch (const RegistryError& e) {
      throw RegistryError::corrupt(lineno, e.what());
    }
  }
}

Registry::~Registry() = default;

std::optional<std::filesystem::path> Registry::log_path() const { return log_path_; }

void Registry::persist(const std::vector<Event>& events) {
  if (!log_path_ || events.empty()) return;
  std::string buf;
  for (const auto& e : events) {
    buf += to_json(e).dump();
    buf += '\n';
  }
  int fd = ::open(log_path_->c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw RegistryError(RegistryError::Kind::Io, "open " + log_path_->string() + ": " + std::strerror(errno));
  std::size_t off = 0;
  while (off < buf.size()) {
    ssize_t n = ::write(fd, buf.data() + off, buf.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw RegistryError(RegistryError::Kind::Io, "write " + log_path_->string() + ": " + std::strerror(err));
    }
    off += static_cast<std::size_t>(n);
  }
  if (opts_.sync && ::fsync(fd) != 0) {
    int err = errno;
    ::close(fd);
    throw RegistryError(RegistryError::Kind::Io, "fsync " + log_path_->string() + ": " + std::strerror(err));
  }
  ::close(fd);
}

RegistrationRecord Registry::register_car(const OwnerRecord& owner, const CarRecord& car, const StationRecord& station) {
  std::vector<FieldIssue> issues = validate(owner);
  for (auto& i : validate(car)) issues.push_back(i);
  for (auto& i : validate(station)) issues.push_back(i);
  if (!issues.empty()) throw RegistryError::invalid(std::move(issues));
  if (car.owner_id != owner.id)
    throw RegistryError::foreign_key(Relation::Car, car.id,
                                     "car owner '" + car.owner_id + "' does not match submitted owner '" + owner.id + "'");

  std::unique_lock lock(mu_);
  std::vector<Event> events;
  if (const auto* o = rel_->owner(owner.id)) {
    if (!same_entity(*o, owner))
      throw RegistryError::key_violation(Relation::Owner, owner.id,
                                         "owner id '" + owner.id + "' already exists with different details");
  } else {
    events.push_back(event::OwnerAdded{owner});
  }
  if (const auto* c = rel_->car(car.id)) {
    if (!same_entity(*c, car))
      throw RegistryError::key_violation(Relation::Car, car.id, "car id '" + car.id + "' already exists with different details");
  } else {
    events.push_back(event::CarAdded{car});
  }
  if (const auto* s = rel_->station(station.id)) {
    if (!same_entity(*s, station))
      throw RegistryError::key_violation(Relation::Station, station.id,
                                         "station id '" + station.id + "' already exists with different details");
  } else {
    events.push_back(event::StationAdded{station});
  }
  RegistrationRecord reg{station.id, car.id, owner.id};
  if (rel_->registered(reg.station_id, reg.car_id, reg.car_owner_id))
    throw RegistryError(RegistryError::Kind::DuplicateRegistration,
                        "car '" + car.id + "' of owner '" + owner.id + "' is already registered at station '" + station.id + "'");
  events.push_back(event::RegistrationAdded{reg});

  // Every constraint check() would apply has been checked above.
  persist(events);
  for (const auto& e : events) rel_->insert(e);
  return reg;
}

void Registry::add_station(const StationRecord& station) {
  if (auto issues = validate(station); !issues.empty()) throw RegistryError::invalid(std::move(issues));
  std::unique_lock lock(mu_);
  if (const auto* s = rel_->station(station.id)) {
    if (!same_entity(*s, station))
      throw RegistryError::key_violation(Relation::Station, station.id,
                                         "station id '" + station.id + "' already exists with different details");
    return;
  }
  Event e = event::StationAdded{station};
  persist({e});
  rel_->insert(e);
}

AuthDecision Registry::authorize(std::string_view station_id, const ChargeRequest& request) const {
  std::shared_lock lock(mu_);
  if (!rel_->registered(station_id, request.car_id, request.owner_id))
    return AuthDecision::deny(DenialReason::NotRegistered, "car '" + request.car_id + "' of owner '" + request.owner_id +
                                                               "' is not registered at station '" + std::string(station_id) +
                                                               "'");
  const OwnerRecord* o = rel_->owner(request.owner_id);
  const CarRecord* c = rel_->car(request.car_id);
  auto mismatch = [](const char* field) {
    return AuthDecision::deny(DenialReason::DetailMismatch, std::string(field) + " does not match the registered value");
  };
  if (!same_text(o->name, request.owner_name)) return mismatch("owner_name");
  if (!same_email(o->email, request.owner_email)) return mismatch("owner_email");
  if (!same_text(o->phone, request.owner_phone)) return mismatch("owner_phone");
  if (!same_text(c->model_name, request.car_model_name)) return mismatch("car_model_name");
  if (c->model_year != request.car_model_year) return mismatch("car_model_year");
  if (!same_text(c->date_purchased, request.car_date_purchased)) return mismatch("car_date_purchased");
  return AuthDecision::grant();
}

TransactionRecord Registry::record_transaction(const TransactionDraft& draft) {
  TransactionRecord t;
  t.id = draft.transaction_id.empty() ? opts_.ids->next() : draft.transaction_id;
  t.bill_id = draft.bill_id;
  t.station_id = draft.station_id;
  t.car_id = draft.car_id;
  t.owner_id = draft.owner_id;
  t.kwh = draft.kwh;
  t.price_per_kwh = draft.price_per_kwh;
  t.total = draft.total;
  t.timestamp = opts_.clock();
  append_event(event::TransactionRecorded{t});
  return t;
}

void Registry::append_event(const Event& e) {
  std::unique_lock lock(mu_);
  rel_->check(e);
  persist({e});
  rel_->insert(e);
}

std::vector<OwnerRecord> Registry::list_owners() const {
  std::shared_lock lock(mu_);
  return rel_->data.owners;
}

std::vector<CarRecord> Registry::list_cars(std::optional<std::string_view> owner_id) const {
  std::shared_lock lock(mu_);
  std::vector<CarRecord> out;
  for (const auto& c : rel_->data.cars)
    if (!owner_id || c.owner_id == *owner_id) out.push_back(c);
  return out;
}

std::vector<StationRecord> Registry::list_stations() const {
  std::shared_lock lock(mu_);
  return rel_->data.stations;
}

std::vector<RegistrationRecord> Registry::list_registrations(std::optional<std::string_view> station_id) const {
  std::shared_lock lock(mu_);
  std::vector<RegistrationRecord> out;
  for (const auto& r : rel_->data.registrations)
    if (!station_id || r.station_id == *station_id) out.push_back(r);
  return out;
}

std::vector<TransactionRecord> Registry::list_transactions(std::optional<std::string_view> station_id,
                                                           std::optional<Timestamp> since) const {
  std::shared_lock lock(mu_);
  std::vector<TransactionRecord> out;
  for (const auto& t : rel_->data.transactions)
    if ((!station_id || t.station_id == *station_id) && (!since || t.timestamp >= *since)) out.push_back(t);
  return out;
}

std::optional<StationRecord> Registry::find_station(std::string_view id) const {
  std::shared_lock lock(mu_);
  if (const auto* s = rel_->station(id)) return *s;
  return std::nullopt;
}

RegistrySnapshot Registry::snapshot() const {
  std::shared_lock lock(mu_);
  return rel_->data;
}

Cardinalities Registry::cardinalities() const {
  std::shared_lock lock(mu_);
  const auto& d = rel_->data;
  return {d.owners.size(), d.cars.size(), d.stations.size(), d.registrations.size(), d.transactions.size()};
}

}  // namespace eav
