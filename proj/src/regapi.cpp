#include "eav/regapi.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "eav/transport.hpp"

namespace eav {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

template <class T>
ordered_json rows(const std::vector<T>& records, std::size_t limit) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : records) {
    if (arr.size() >= limit) break;
    arr.push_back(to_json(r));
  }
  return arr;
}

std::size_t limit_of(const httplib::Request& req) {
  if (!req.has_param("limit")) return std::numeric_limits<std::size_t>::max();
  try {
    long long n = std::stoll(req.get_param_value("limit"));
    return n < 0 ? 0 : static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    return std::numeric_limits<std::size_t>::max();
  }
}

}  // namespace

std::variant<RegistrationSubmission, FieldErrors> parse_submission(const json& body) {
  FieldErrors errors;
  if (!body.is_object()) {
    errors["body"] = "must be a JSON object";
    return errors;
  }
  auto str = [&](const char* key) -> std::string {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) {
      errors[key] = "required";
      return {};
    }
    if (!it->is_string()) {
      errors[key] = "must be a string";
      return {};
    }
    return it->get<std::string>();
  };

  RegistrationSubmission s;
  s.owner.id = str("owner_id");
  s.owner.name = str("owner_name");
  s.owner.email = str("owner_email");
  s.owner.phone = str("owner_phone");
  s.car.id = str("car_id");
  s.car.model_name = str("car_model_name");
  s.car.date_purchased = str("car_date_purchased");
  s.car.owner_id = s.owner.id;
  s.station.id = str("station_id");
  s.station.name = str("station_name");
  s.station.address = str("station_address");

  auto year = body.find("car_model_year");
  if (year == body.end() || year->is_null())
    errors["car_model_year"] = "required";
  else if (!year->is_number_integer())
    errors["car_model_year"] = "must be an integer";
  else if (auto y = year->get<std::int64_t>(); y < kMinModelYear || y > kMaxModelYear)
    errors["car_model_year"] = "must be in [1900, 2200]";
  else
    s.car.model_year = static_cast<int>(y);

  // Same field rules as the registry itself, reported all at once.
  for (const auto& issues : {validate(s.owner), validate(s.car), validate(s.station)})
    for (const auto& i : issues)
      if (!errors.count(i.field) && i.field != "car_owner_id") errors[i.field] = i.message;

  if (!errors.empty()) return errors;
  return s;
}

struct RegApi::Impl {
  std::shared_ptr<Registry> registry;
  std::string cors_origin;
  httplib::Server server;

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/api/v1/registrations", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        reply(res, 400, {{"error", "body is not valid JSON"}});
        return;
      }
      auto parsed = parse_submission(body);
      if (auto* errs = std::get_if<FieldErrors>(&parsed)) {
        ordered_json out = ordered_json::object();
        for (const auto& [k, v] : *errs) out[k] = v;
        reply(res, 422, out);
        return;
      }
      const auto& s = std::get<RegistrationSubmission>(parsed);
      try {
        auto reg = registry->register_car(s.owner, s.car, s.station);
        reply(res, 201, to_json(reg));
      } catch (const RegistryError& e) {
        using K = RegistryError::Kind;
        switch (e.kind()) {
          case K::KeyConstraintViolation:
          case K::ForeignKeyViolation:
            reply(res, 409, {{"relation", to_string(e.relation().value_or(Relation::Registration))},
                             {"key", e.key()},
                             {"reason", e.what()}});
            return;
          case K::DuplicateRegistration:
            reply(res, 409, {{"relation", "registration"},
                             {"key", s.station.id + "/" + s.car.id + "/" + s.owner.id},
                             {"reason", e.what()}});
            return;
          case K::InvalidRecord: {
            ordered_json out = ordered_json::object();
            for (const auto& i : e.issues()) out[i.field] = i.message;
            reply(res, 422, out);
            return;
          }
          default:
            spdlog::error("registration failed: {}", e.what());
            reply(res, 500, {{"error", e.what()}});
            return;
        }
      }
    });

    server.Get("/api/v1/stations", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, rows(registry->list_stations(), limit_of(req)));
    });
    server.Get("/api/v1/owners", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, rows(registry->list_owners(), limit_of(req)));
    });
    server.Get(R"(/api/v1/stations/([^/]+)/registrations)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, rows(registry->list_registrations(std::string(req.matches[1])), limit_of(req)));
    });
    server.Get(R"(/api/v1/stations/([^/]+)/transactions)", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<Timestamp> since;
      if (req.has_param("since")) {
        since = parse_utc(req.get_param_value("since"));
        if (!since) {
          reply(res, 400, {{"error", "since must be an ISO-8601 UTC instant"}});
          return;
        }
      }
      reply(res, 200, rows(registry->list_transactions(std::string(req.matches[1]), since), limit_of(req)));
    });
    server.Get(R"(/api/v1/owners/([^/]+)/cars)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, rows(registry->list_cars(std::string(req.matches[1])), limit_of(req)));
    });
  }
};

RegApi::RegApi(std::shared_ptr<Registry> registry, std::string cors_origin) : impl_(std::make_unique<Impl>()) {
  impl_->registry = std::move(registry);
  impl_->cors_origin = std::move(cors_origin);
  impl_->routes();
}

RegApi::~RegApi() { stop(); }

std::uint16_t RegApi::bind(const std::string& host, std::uint16_t port) {
  if (port == 0) {
    int p = impl_->server.bind_to_any_port(host);
    if (p <= 0) throw BindError("cannot bind API to " + host);
    return static_cast<std::uint16_t>(p);
  }
  if (!impl_->server.bind_to_port(host, port)) throw BindError("cannot bind API to " + host + ":" + std::to_string(port));
  return port;
}

void RegApi::serve() { impl_->server.listen_after_bind(); }

void RegApi::stop() {
  if (impl_) impl_->server.stop();
}

void RegApi::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace eav
