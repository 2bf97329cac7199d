#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "eav/station.hpp"
#include "eav/vehicle.hpp"
#include "support.hpp"

using namespace eav;
using namespace eav::testing;
using namespace std::chrono_literals;

namespace {

std::filesystem::path write_file(const TempDir& dir, const std::string& name, const std::string& body) {
  auto p = dir / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(LoadRequest, ReadsValidDocument) {
  TempDir dir;
  auto body = charge_request_to_json(sample_request()).dump(2);
  EXPECT_EQ(load_charge_request(write_file(dir, "test.json", body)), sample_request());
}

TEST(LoadRequest, ErrorsNameTheProblem) {
  TempDir dir;
  EXPECT_THROW(load_charge_request(dir / "missing.json"), RequestParseError);
  EXPECT_THROW(load_charge_request(write_file(dir, "bad.json", "{not json")), RequestParseError);
  auto j = nlohmann::json(charge_request_to_json(sample_request()));
  j.erase("car_id");
  try {
    load_charge_request(write_file(dir, "x.json", j.dump()));
    FAIL();
  } catch (const RequestError& e) {
    EXPECT_EQ(e.field(), "car_id");
  }
}

TEST(Vehicle, ConnectErrorWhenNothingListens) {
  std::uint16_t port;
  {
    TcpListener l("127.0.0.1", 0);
    port = l.port();
  }
  ChargeIntent i;
  i.request = sample_request();
  i.kwh = Kwh::parse("1");
  i.station_port = port;
  EXPECT_THROW(charge(i, {1s, 1s}), ConnectError);
}

TEST(Vehicle, PaysExactlyTheBilledTotal) {
  auto [vehicle_end, station_end] = make_memory_pipe();
  ChargeIntent i;
  i.request = sample_request();
  i.kwh = Kwh::parse("3");
  std::thread station([&, &ch = *station_end] {
    auto line = [&] { return decode_message(ch.read_line(2s, kMaxFrameBytes).line); };
    line();
    line();
    ch.write_all(encode_message(msg::AuthOk{"s1"}));
    ch.write_all(encode_message(msg::AmountRequest{}));
    auto amount = std::get<msg::Amount>(line());
    msg::Bill b{"b-77", amount.kwh, Rate::parse("0.25"), price(amount.kwh, Rate::parse("0.25"))};
    ch.write_all(encode_message(b));
    auto pay = std::get<msg::Payment>(line());
    EXPECT_EQ(pay.bill_id, "b-77");
    EXPECT_EQ(pay.amount, Money::parse("0.75"));
    ch.write_all(encode_message(msg::Receipt{"t-1", "b-77"}));
    ch.write_all(encode_message(msg::Close{"completed"}));
    ch.close();
  });
  auto report = run_client_session(*vehicle_end, i, 2s);
  station.join();
  EXPECT_EQ(report.outcome, SessionOutcome{outcome::Completed{"t-1"}});
  ASSERT_TRUE(report.bill);
  EXPECT_EQ(report.bill->total, Money::parse("0.75"));
  EXPECT_EQ(report.receipt_transaction_id, "t-1");
  EXPECT_EQ(replay_client(report, i), report.outcome);
}

TEST(Vehicle, StationHangupIsProtocolError) {
  auto [vehicle_end, station_end] = make_memory_pipe();
  ChargeIntent i;
  i.request = sample_request();
  i.kwh = Kwh::parse("3");
  station_end->close();
  auto report = run_client_session(*vehicle_end, i, 1s);
  EXPECT_TRUE(std::holds_alternative<outcome::ProtocolError>(report.outcome));
}
