#include "eav/protocol.hpp"

#include <array>
#include <chrono>
#include <charconv>
#include <initializer_list>

namespace eav {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kMessageKinds> kTypeNames = {
    "file_name", "file_content", "auth_ok", "auth_denied", "amount_request",
    "amount",    "bill",         "payment", "receipt",     "close",
};

constexpr std::array<std::string_view, 8> kRequestFields = {
    "owner_id", "owner_name", "owner_email", "owner_phone",
    "car_id",   "car_model_name", "car_model_year", "car_date_purchased",
};

[[noreturn]] void fail(CodecError::Kind k, const std::string& what) { throw CodecError(k, what); }

[[noreturn]] void violation(const std::string& what) { fail(CodecError::Kind::InvariantViolation, what); }

std::string quoted(const std::string& s) {
  try {
    return json(s).dump();
  } catch (const json::type_error&) {
    violation("string field is not valid UTF-8");
  }
}

// Small writer for the canonical compact form: fields in declaration order,
// decimals printed at their fixed scale.
class LineWriter {
public:
  explicit LineWriter(std::string_view type) {
    out_ = "{\"type\":\"";
    out_ += type;
    out_ += '"';
  }
  LineWriter& str(std::string_view key, const std::string& v) {
    key_(key);
    out_ += quoted(v);
    return *this;
  }
  template <int S, class T>
  LineWriter& dec(std::string_view key, Fixed<S, T> v) {
    key_(key);
    out_ += v.to_string();
    return *this;
  }
  LineWriter& raw(std::string_view key, const std::string& v) {
    key_(key);
    out_ += v;
    return *this;
  }
  std::string finish() {
    out_ += "}\n";
    return std::move(out_);
  }

private:
  void key_(std::string_view k) {
    out_ += ",\"";
    out_ += k;
    out_ += "\":";
  }
  std::string out_;
};

void require_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view type) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = it.key() == "type";
    for (auto a : allowed) known = known || it.key() == a;
    if (!known) fail(CodecError::Kind::MalformedFrame, "unexpected field '" + it.key() + "' in " + std::string(type));
  }
  for (auto a : allowed) {
    if (!j.contains(a)) fail(CodecError::Kind::MalformedFrame, "missing field '" + std::string(a) + "' in " + std::string(type));
  }
}

std::string get_str(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) fail(CodecError::Kind::MalformedFrame, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::string get_nonempty(const json& j, const char* key) {
  auto s = get_str(j, key);
  if (s.empty()) violation(std::string("field '") + key + "' must be non-empty");
  return s;
}

template <class F>
F get_dec(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) fail(CodecError::Kind::MalformedFrame, std::string("field '") + key + "' must be a number");
  try {
    if (v.is_number_unsigned()) {
      auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(detail::kMaxIntegral)) throw DecimalError("too large");
      return F::from_units(static_cast<std::int64_t>(u) * F::kOne);
    }
    if (v.is_number_integer()) throw DecimalError("negative");
    return F::from_double(v.get<double>());
  } catch (const DecimalError& e) {
    violation(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    for (std::size_t i = pos; i < pos + len; ++i)
      if (s[i] < '0' || s[i] > '9') return false;
    return std::from_chars(s.data() + pos, s.data() + pos + len, out).ec == std::errc{};
  };
  int y = 0, m = 0, d = 0;
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return false;
  using namespace std::chrono;
  return year_month_day{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}}.ok();
}

std::vector<FieldIssue> validate(const ChargeRequest& r) {
  std::vector<FieldIssue> issues;
  if (r.owner_id.empty()) issues.push_back({"owner_id", "required"});
  if (r.car_id.empty()) issues.push_back({"car_id", "required"});
  if (r.car_model_year < kMinModelYear || r.car_model_year > kMaxModelYear)
    issues.push_back({"car_model_year", "must be in [1900, 2200]"});
  if (!is_iso_date(r.car_date_purchased)) issues.push_back({"car_date_purchased", "must be a YYYY-MM-DD date"});
  return issues;
}

ChargeRequest charge_request_from_json(const json& j) {
  if (!j.is_object()) throw RequestError("request", "must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto f : kRequestFields) known = known || it.key() == f;
    if (!known) throw RequestError(it.key(), "unexpected field");
  }
  auto str = [&](const char* key) {
    if (!j.contains(key)) throw RequestError(key, "required");
    if (!j[key].is_string()) throw RequestError(key, "must be a string");
    return j[key].get<std::string>();
  };
  ChargeRequest r;
  r.owner_id = str("owner_id");
  r.owner_name = str("owner_name");
  r.owner_email = str("owner_email");
  r.owner_phone = str("owner_phone");
  r.car_id = str("car_id");
  r.car_model_name = str("car_model_name");
  if (!j.contains("car_model_year")) throw RequestError("car_model_year", "required");
  const auto& year = j["car_model_year"];
  if (!year.is_number_integer()) throw RequestError("car_model_year", "must be an integer");
  auto y = year.get<std::int64_t>();
  if (y < kMinModelYear || y > kMaxModelYear) throw RequestError("car_model_year", "must be in [1900, 2200]");
  r.car_model_year = static_cast<int>(y);
  r.car_date_purchased = str("car_date_purchased");
  if (auto issues = validate(r); !issues.empty()) throw RequestError(issues.front().field, issues.front().message);
  return r;
}

nlohmann::ordered_json charge_request_to_json(const ChargeRequest& r) {
  nlohmann::ordered_json j;
  j["owner_id"] = r.owner_id;
  j["owner_name"] = r.owner_name;
  j["owner_email"] = r.owner_email;
  j["owner_phone"] = r.owner_phone;
  j["car_id"] = r.car_id;
  j["car_model_name"] = r.car_model_name;
  j["car_model_year"] = r.car_model_year;
  j["car_date_purchased"] = r.car_date_purchased;
  return j;
}

std::string_view type_name(std::size_t variant_index) { return kTypeNames.at(variant_index); }

std::string_view type_name(const Message& m) { return kTypeNames[m.index()]; }

std::string_view to_string(CodecError::Kind k) {
  switch (k) {
    case CodecError::Kind::EncodingOverflow: return "EncodingOverflow";
    case CodecError::Kind::MalformedFrame: return "MalformedFrame";
    case CodecError::Kind::UnknownType: return "UnknownType";
    case CodecError::Kind::InvariantViolation: return "InvariantViolation";
  }
  return "?";
}

void check_invariants(const Message& m) {
  auto nonempty = [](const std::string& s, const char* field) {
    if (s.empty()) violation(std::string("field '") + field + "' must be non-empty");
  };
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, msg::FileName>) {
          nonempty(v.name, "name");
        } else if constexpr (std::is_same_v<T, msg::FileContent>) {
          if (auto issues = validate(v.request); !issues.empty())
            violation("request." + issues.front().field + ": " + issues.front().message);
        } else if constexpr (std::is_same_v<T, msg::AuthOk>) {
          nonempty(v.station_id, "station_id");
        } else if constexpr (std::is_same_v<T, msg::Bill>) {
          nonempty(v.bill_id, "bill_id");
          if (price(v.kwh, v.price_per_kwh) != v.total)
            violation("bill total " + v.total.to_string() + " != round2(" + v.kwh.to_string() + " x " +
                      v.price_per_kwh.to_string() + ")");
        } else if constexpr (std::is_same_v<T, msg::Payment>) {
          nonempty(v.bill_id, "bill_id");
        } else if constexpr (std::is_same_v<T, msg::Receipt>) {
          nonempty(v.transaction_id, "transaction_id");
          nonempty(v.bill_id, "bill_id");
        }
      },
      m);
}

std::string encode_message(const Message& m) {
  check_invariants(m);
  std::string line = std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, msg::FileName>) {
          return LineWriter("file_name").str("name", v.name).finish();
        } else if constexpr (std::is_same_v<T, msg::FileContent>) {
          std::string body;
          try {
            body = charge_request_to_json(v.request).dump();
          } catch (const json::type_error&) {
            violation("request contains invalid UTF-8");
          }
          return LineWriter("file_content").raw("request", body).finish();
        } else if constexpr (std::is_same_v<T, msg::AuthOk>) {
          return LineWriter("auth_ok").str("station_id", v.station_id).finish();
        } else if constexpr (std::is_same_v<T, msg::AuthDenied>) {
          return LineWriter("auth_denied").str("reason", v.reason).finish();
        } else if constexpr (std::is_same_v<T, msg::AmountRequest>) {
          return LineWriter("amount_request").finish();
        } else if constexpr (std::is_same_v<T, msg::Amount>) {
          return LineWriter("amount").dec("kwh", v.kwh).finish();
        } else if constexpr (std::is_same_v<T, msg::Bill>) {
          return LineWriter("bill")
              .str("bill_id", v.bill_id)
              .dec("kwh", v.kwh)
              .dec("price_per_kwh", v.price_per_kwh)
              .dec("total", v.total)
              .finish();
        } else if constexpr (std::is_same_v<T, msg::Payment>) {
          return LineWriter("payment").str("bill_id", v.bill_id).dec("amount", v.amount).finish();
        } else if constexpr (std::is_same_v<T, msg::Receipt>) {
          return LineWriter("receipt").str("transaction_id", v.transaction_id).str("bill_id", v.bill_id).finish();
        } else {
          static_assert(std::is_same_v<T, msg::Close>);
          return LineWriter("close").str("reason", v.reason).finish();
        }
      },
      m);
  if (line.size() > kMaxFrameBytes)
    fail(CodecError::Kind::EncodingOverflow,
         "encoded frame is " + std::to_string(line.size()) + " bytes, limit " + std::to_string(kMaxFrameBytes));
  return line;
}

Message decode_message(std::string_view line) {
  if (line.size() > kMaxFrameBytes)
    fail(CodecError::Kind::MalformedFrame, "frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (line.find('\n') != std::string_view::npos) fail(CodecError::Kind::MalformedFrame, "embedded newline");

  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(CodecError::Kind::MalformedFrame, std::string("not a JSON frame: ") + e.what());
  }
  if (!j.is_object()) fail(CodecError::Kind::MalformedFrame, "frame is not a JSON object");
  auto type_it = j.find("type");
  if (type_it == j.end() || !type_it->is_string()) fail(CodecError::Kind::MalformedFrame, "missing \"type\" tag");
  const auto type = type_it->get<std::string>();

  Message m;
  if (type == "file_name") {
    require_keys(j, {"name"}, type);
    m = msg::FileName{get_str(j, "name")};
  } else if (type == "file_content") {
    require_keys(j, {"request"}, type);
    try {
      m = msg::FileContent{charge_request_from_json(j["request"])};
    } catch (const RequestError& e) {
      violation(std::string("request.") + e.what());
    }
  } else if (type == "auth_ok") {
    require_keys(j, {"station_id"}, type);
    m = msg::AuthOk{get_str(j, "station_id")};
  } else if (type == "auth_denied") {
    require_keys(j, {"reason"}, type);
    m = msg::AuthDenied{get_str(j, "reason")};
  } else if (type == "amount_request") {
    require_keys(j, {}, type);
    m = msg::AmountRequest{};
  } else if (type == "amount") {
    require_keys(j, {"kwh"}, type);
    m = msg::Amount{get_dec<Kwh>(j, "kwh")};
  } else if (type == "bill") {
    require_keys(j, {"bill_id", "kwh", "price_per_kwh", "total"}, type);
    m = msg::Bill{get_nonempty(j, "bill_id"), get_dec<Kwh>(j, "kwh"), get_dec<Rate>(j, "price_per_kwh"),
                  get_dec<Money>(j, "total")};
  } else if (type == "payment") {
    require_keys(j, {"bill_id", "amount"}, type);
    m = msg::Payment{get_str(j, "bill_id"), get_dec<Money>(j, "amount")};
  } else if (type == "receipt") {
    require_keys(j, {"transaction_id", "bill_id"}, type);
    m = msg::Receipt{get_str(j, "transaction_id"), get_str(j, "bill_id")};
  } else if (type == "close") {
    require_keys(j, {"reason"}, type);
    m = msg::Close{get_str(j, "reason")};
  } else {
    fail(CodecError::Kind::UnknownType, "unknown message type '" + type + "'");
  }
  check_invariants(m);
  return m;
}

}  // namespace eav
