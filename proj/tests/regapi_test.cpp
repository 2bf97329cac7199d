#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "eav/regapi.hpp"
#include "reference_store.hpp"
#include "support.hpp"

using namespace eav;
using namespace eav::testing;
using nlohmann::json;

namespace {

class Api {
public:
  Api() : registry(std::make_shared<Registry>()), api(registry, "http://form.local") {
    port = api.bind("127.0.0.1", 0);
    thread = std::thread([this] { api.serve(); });
    api.wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
  ~Api() {
    api.stop();
    thread.join();
  }

  httplib::Result post(const json& body) { return client->Post("/api/v1/registrations", body.dump(), "application/json"); }
  json get(const std::string& path, int want = 200) {
    auto r = client->Get(path);
    EXPECT_TRUE(r);
    EXPECT_EQ(r->status, want) << path;
    return json::parse(r->body);
  }

  std::shared_ptr<Registry> registry;
  RegApi api;
  std::uint16_t port = 0;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
};

json form(const std::string& owner = "o1", const std::string& car = "c1", const std::string& station = "s1") {
  return {{"owner_id", owner},          {"owner_name", "Ada"},       {"owner_email", "ada@example.org"},
          {"owner_phone", "555"},       {"car_id", car},             {"car_model_name", "Model E"},
          {"car_model_year", 2021},     {"car_date_purchased", "2021-06-15"},
          {"station_id", station},      {"station_name", "Depot"},   {"station_address", "10.0.0.1"}};
}

json form_of(const OwnerRecord& o, const CarRecord& c, const StationRecord& s) {
  return {{"owner_id", o.id},           {"owner_name", o.name},          {"owner_email", o.email},
          {"owner_phone", o.phone},     {"car_id", c.id},                {"car_model_name", c.model_name},
          {"car_model_year", c.model_year}, {"car_date_purchased", c.date_purchased},
          {"station_id", s.id},         {"station_name", s.name},        {"station_address", s.address}};
}

}  // namespace

TEST(RegApi, CreatesRegistration) {
  Api api;
  auto r = api.post(form());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  EXPECT_EQ(json::parse(r->body), (json{{"station_id", "s1"}, {"car_id", "c1"}, {"car_owner_id", "o1"}}));
  EXPECT_EQ(api.registry->cardinalities(), (Cardinalities{1, 1, 1, 1, 0}));
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "http://form.local");
}

TEST(RegApi, DuplicateIsConflict) {
  Api api;
  api.post(form());
  auto r = api.post(form());
  EXPECT_EQ(r->status, 409);
  auto body = json::parse(r->body);
  EXPECT_EQ(body["relation"], "registration");
  EXPECT_EQ(body["key"], "s1/c1/o1");
}

TEST(RegApi, KeyConflictNamesRelationAndKey) {
  Api api;
  api.post(form());
  auto f = form("o1", "c1", "s2");
  f["car_model_year"] = 2022;
  auto r = api.post(f);
  EXPECT_EQ(r->status, 409);
  auto body = json::parse(r->body);
  EXPECT_EQ(body["relation"], "car");
  EXPECT_EQ(body["key"], "c1");
  EXPECT_EQ(api.registry->cardinalities(), (Cardinalities{1, 1, 1, 1, 0}));
}

TEST(RegApi, FieldErrorsAre422) {
  Api api;
  auto f = form();
  f.erase("owner_email");
  f["car_model_year"] = "2021";
  f["car_date_purchased"] = "yesterday";
  auto r = api.post(f);
  EXPECT_EQ(r->status, 422);
  auto body = json::parse(r->body);
  EXPECT_EQ(body["owner_email"], "required");
  EXPECT_EQ(body["car_model_year"], "must be an integer");
  EXPECT_TRUE(body.contains("car_date_purchased"));
  EXPECT_EQ(api.registry->cardinalities(), Cardinalities{});
}

TEST(RegApi, BadJsonIs400) {
  Api api;
  auto r = api.client->Post("/api/v1/registrations", "{oops", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST(RegApi, PreflightAllowed) {
  Api api;
  auto r = api.client->Options("/api/v1/registrations");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_NE(r->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST(RegApi, ListEndpoints) {
  Api api;
  api.post(form("o1", "c1", "s1"));
  api.post(form("o1", "c2", "s1"));
  api.post(form("o2", "c3", "s2"));
  EXPECT_EQ(api.get("/api/v1/stations").size(), 2u);
  EXPECT_EQ(api.get("/api/v1/owners").size(), 2u);
  EXPECT_EQ(api.get("/api/v1/owners?limit=1").size(), 1u);
  auto cars = api.get("/api/v1/owners/o1/cars");
  ASSERT_EQ(cars.size(), 2u);
  EXPECT_EQ(cars[0]["id"], "c1");
  EXPECT_EQ(cars[1]["id"], "c2");
  EXPECT_EQ(api.get("/api/v1/stations/s1/registrations").size(), 2u);
  EXPECT_TRUE(api.get("/api/v1/stations/s1/transactions").empty());

  api.registry->record_transaction({"t1", "b1", "s1", "c1", "o1", Kwh::parse("10"), Rate::parse("0.10"), Money::parse("1.00")});
  auto txs = api.get("/api/v1/stations/s1/transactions");
  ASSERT_EQ(txs.size(), 1u);
  EXPECT_EQ(txs[0]["total"], "1.00");
  EXPECT_TRUE(api.get("/api/v1/stations/s1/transactions?since=2999-01-01T00:00:00Z").empty());
  api.get("/api/v1/stations/s1/transactions?since=yesterday", 400);
}

// The same submissions through HTTP and through the library leave identical
// stores and identical accept/reject decisions.
TEST(RegApi, EquivalentToDirectRegistration) {
  Api api;
  Registry direct;
  OpGenerator gen(99);
  int rejected = 0;
  for (int i = 0; i < 300; ++i) {
    auto o = gen.owner();
    auto c = gen.car(o.id);
    auto s = gen.station();
    if (c.owner_id != o.id) continue;  // the form has no separate car owner field
    int want = 201;
    try {
      direct.register_car(o, c, s);
    } catch (const RegistryError& e) {
      want = e.kind() == RegistryError::Kind::InvalidRecord ? 422 : 409;
    }
    auto r = api.post(form_of(o, c, s));
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, want) << i << " " << r->body;
    rejected += want != 201;
  }
  EXPECT_GT(rejected, 0);
  EXPECT_EQ(api.registry->snapshot(), direct.snapshot());
}
