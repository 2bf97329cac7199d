#include <gtest/gtest.h>

#include "eav/session.hpp"
#include "support.hpp"

using namespace eav;
using eav::testing::sample_request;

namespace {

const Rate kTariff = Rate::parse("0.10");

ServerContext context(bool grant, int* ids = nullptr) {
  static int counter = 0;
  int* n = ids ? ids : &counter;
  return {"s1", kTariff,
          [grant](const ChargeRequest&) { return grant ? AuthDecision::grant() : AuthDecision::deny(DenialReason::NotRegistered); },
          [n] { return "id-" + std::to_string(++*n); }};
}

msg::Bill bill_for(const std::string& id, const char* kwh) {
  msg::Bill b{id, Kwh::parse(kwh), kTariff, {}};
  b.total = price(b.kwh, b.price_per_kwh);
  return b;
}

// One well-formed instance of every message kind, indexed like Message.
std::vector<Message> one_of_each() {
  std::vector<Message> v{msg::FileName{"test.json"},       msg::FileContent{sample_request()}, msg::AuthOk{"s1"},
                         msg::AuthDenied{"not-registered"}, msg::AmountRequest{},               msg::Amount{Kwh::parse("10")},
                         bill_for("b1", "10"),              msg::Payment{"b1", Money::parse("1.00")},
                         msg::Receipt{"t1", "b1"},          msg::Close{"completed"}};
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i].index(), i);
  return v;
}

std::vector<ServerState> server_states() {
  return {server::AwaitFileName{}, server::AwaitFileContent{}, server::AwaitAmount{sample_request()},
          server::AwaitPayment{sample_request(), bill_for("b1", "10")},
          server::Closed{outcome::Completed{"t0"}}};
}

ChargeIntent intent(const char* kwh = "10") {
  ChargeIntent i;
  i.request = sample_request();
  i.kwh = Kwh::parse(kwh);
  return i;
}

std::vector<ClientState> client_states() {
  return {client::SendFileName{},  client::SendFileContent{}, client::AwaitAuth{},
          client::AwaitAmountRequest{}, client::AwaitBill{},  client::SendPayment{bill_for("b1", "10")},
          client::AwaitReceipt{bill_for("b1", "10")}, client::Done{outcome::DeniedUnregistered{}}};
}

bool is_protocol_close(const ServerStep& s) {
  const auto* closed = std::get_if<server::Closed>(&s.state);
  if (!closed || !std::holds_alternative<outcome::ProtocolError>(closed->outcome)) return false;
  if (s.out.size() != 1 || s.draft) return false;
  const auto* c = std::get_if<msg::Close>(&s.out[0]);
  return c && c->reason.rfind("protocol-error", 0) == 0;
}

}  // namespace

TEST(ServerMachine, FileNameThenContentGrants) {
  auto ctx = context(true);
  auto s1 = server_step(server::AwaitFileName{}, msg::FileName{"test.json"}, ctx);
  EXPECT_TRUE(std::holds_alternative<server::AwaitFileContent>(s1.state));
  EXPECT_TRUE(s1.out.empty());
  auto s2 = server_step(s1.state, msg::FileContent{sample_request()}, ctx);
  EXPECT_EQ(s2.state, ServerState{server::AwaitAmount{sample_request()}});
  ASSERT_EQ(s2.out.size(), 2u);
  EXPECT_EQ(s2.out[0], Message{msg::AuthOk{"s1"}});
  EXPECT_EQ(s2.out[1], Message{msg::AmountRequest{}});
  EXPECT_FALSE(s2.draft);
}

TEST(ServerMachine, DeniedRequestClosesSession) {
  auto s = server_step(server::AwaitFileContent{}, msg::FileContent{sample_request("o9", "c9")}, context(false));
  EXPECT_EQ(s.state, ServerState{server::Closed{outcome::DeniedUnregistered{}}});
  ASSERT_EQ(s.out.size(), 2u);
  EXPECT_EQ(s.out[0], Message{msg::AuthDenied{"not-registered"}});
  EXPECT_EQ(s.out[1], Message{msg::Close{"denied"}});
  EXPECT_FALSE(s.draft);
}

TEST(ServerMachine, AmountProducesBill) {
  int ids = 0;
  auto s = server_step(server::AwaitAmount{sample_request()}, msg::Amount{Kwh::parse("10.000")}, context(true, &ids));
  ASSERT_EQ(s.out.size(), 1u);
  const auto& bill = std::get<msg::Bill>(s.out[0]);
  EXPECT_EQ(bill.total, Money::parse("1.00"));
  EXPECT_EQ(bill.bill_id, "id-1");
  EXPECT_EQ(s.state, (ServerState{server::AwaitPayment{sample_request(), bill}}));
}

TEST(ServerMachine, ZeroOrHugeAmountIsProtocolError) {
  EXPECT_TRUE(is_protocol_close(server_step(server::AwaitAmount{sample_request()}, msg::Amount{Kwh{}}, context(true))));
  EXPECT_TRUE(
      is_protocol_close(server_step(server::AwaitAmount{sample_request()}, msg::Amount{Kwh::parse("5000")}, context(true))));
}

TEST(ServerMachine, MatchingPaymentCompletesWithDraft) {
  int ids = 10;
  auto bill = bill_for("b1", "10");
  auto s = server_step(server::AwaitPayment{sample_request(), bill}, msg::Payment{"b1", Money::parse("1.00")},
                       context(true, &ids));
  ASSERT_TRUE(s.draft);
  EXPECT_EQ(s.draft->transaction_id, "id-11");
  EXPECT_EQ(s.draft->station_id, "s1");
  EXPECT_EQ(s.draft->car_id, "c1");
  EXPECT_EQ(s.draft->owner_id, "o1");
  EXPECT_EQ(s.draft->total, Money::parse("1.00"));
  EXPECT_EQ(s.state, ServerState{server::Closed{outcome::Completed{"id-11"}}});
  ASSERT_EQ(s.out.size(), 2u);
  EXPECT_EQ(s.out[0], (Message{msg::Receipt{"id-11", "b1"}}));
  EXPECT_EQ(s.out[1], Message{msg::Close{"completed"}});
}

TEST(ServerMachine, WrongPaymentIsMismatch) {
  auto bill = bill_for("b1", "10");
  for (const auto& p : {msg::Payment{"b1", Money::parse("0.99")}, msg::Payment{"b2", Money::parse("1.00")}}) {
    auto s = server_step(server::AwaitPayment{sample_request(), bill}, p, context(true));
    EXPECT_EQ(s.state, ServerState{server::Closed{outcome::PaymentMismatch{}}});
    ASSERT_EQ(s.out.size(), 1u);
    EXPECT_EQ(s.out[0], Message{msg::Close{"payment-mismatch"}});
    EXPECT_FALSE(s.draft);
  }
}

TEST(ServerMachine, OutOfOrderPaymentExample) {
  EXPECT_TRUE(is_protocol_close(server_step(server::AwaitFileName{}, msg::Payment{"b1", Money::parse("1.00")}, context(true))));
}

TEST(ServerMachine, TotalityMatrix) {
  const auto msgs = one_of_each();
  const auto states = server_states();
  // state index -> the only message index it accepts
  const std::map<std::size_t, std::size_t> accepts{{0, 0}, {1, 1}, {2, 5}, {3, 7}};
  for (std::size_t si = 0; si < states.size(); ++si) {
    for (std::size_t mi = 0; mi < msgs.size(); ++mi) {
      for (bool grant : {true, false}) {
        SCOPED_TRACE("state " + std::to_string(si) + " msg " + std::string(type_name(msgs[mi])));
        ServerStep step;
        ASSERT_NO_THROW(step = server_step(states[si], msgs[mi], context(grant)));
        if (std::holds_alternative<server::Closed>(states[si])) {
          EXPECT_EQ(step.state, states[si]);
          EXPECT_TRUE(step.out.empty());
          continue;
        }
        auto it = accepts.find(si);
        if (it->second != mi) {
          EXPECT_TRUE(is_protocol_close(step));
        } else {
          EXPECT_FALSE(std::holds_alternative<server::Closed>(step.state) &&
                       std::holds_alternative<outcome::ProtocolError>(std::get<server::Closed>(step.state).outcome));
        }
        for (const auto& m : step.out) EXPECT_NO_THROW(encode_message(m));
      }
    }
  }
}

TEST(ClientMachine, SendsFileNameThenContent) {
  auto i = intent();
  auto s1 = client_step(client::SendFileName{}, std::nullopt, i);
  ASSERT_EQ(s1.out.size(), 1u);
  EXPECT_EQ(s1.out[0], Message{msg::FileName{"test.json"}});
  auto s2 = client_step(s1.state, std::nullopt, i);
  EXPECT_EQ(s2.out[0], Message{msg::FileContent{sample_request()}});
  EXPECT_EQ(s2.state, ClientState{client::AwaitAuth{}});
}

TEST(ClientMachine, PaysBillExactly) {
  auto s = client_step(client::AwaitBill{}, Message{bill_for("b1", "10")}, intent());
  EXPECT_EQ(s.state, ClientState{client::AwaitReceipt{bill_for("b1", "10")}});
  ASSERT_EQ(s.out.size(), 1u);
  EXPECT_EQ(s.out[0], (Message{msg::Payment{"b1", Money::parse("1.00")}}));
}

TEST(ClientMachine, RefusesBillForDifferentEnergy) {
  auto s = client_step(client::AwaitBill{}, Message{bill_for("b1", "11")}, intent("10"));
  ASSERT_TRUE(std::holds_alternative<client::Done>(s.state));
  EXPECT_TRUE(std::holds_alternative<outcome::ProtocolError>(std::get<client::Done>(s.state).outcome));
  EXPECT_TRUE(s.out.empty());
}

TEST(ClientMachine, DenialEndsSession) {
  auto s = client_step(client::AwaitAuth{}, Message{msg::AuthDenied{"not-registered"}}, intent());
  EXPECT_EQ(s.state, ClientState{client::Done{outcome::DeniedUnregistered{}}});
  EXPECT_TRUE(s.out.empty());
}

TEST(ClientMachine, OutOfOrderBillIsProtocolError) {
  auto s = client_step(client::AwaitAuth{}, Message{bill_for("b1", "10")}, intent());
  ASSERT_TRUE(std::holds_alternative<client::Done>(s.state));
  EXPECT_TRUE(std::holds_alternative<outcome::ProtocolError>(std::get<client::Done>(s.state).outcome));
}

TEST(ClientMachine, CloseReasonsMapToOutcomes) {
  auto i = intent();
  auto done = [&](const char* reason) {
    return std::get<client::Done>(client_step(client::AwaitReceipt{bill_for("b1", "10")}, Message{msg::Close{reason}}, i).state)
        .outcome;
  };
  EXPECT_EQ(done("payment-mismatch"), SessionOutcome{outcome::PaymentMismatch{}});
  EXPECT_EQ(done("denied"), SessionOutcome{outcome::DeniedUnregistered{}});
  EXPECT_TRUE(std::holds_alternative<outcome::ProtocolError>(done("protocol-error: timeout")));
}

TEST(ClientMachine, SilenceWhileWaitingIsProtocolError) {
  auto s = client_step(client::AwaitAmountRequest{}, std::nullopt, intent());
  ASSERT_TRUE(std::holds_alternative<client::Done>(s.state));
  EXPECT_TRUE(std::holds_alternative<outcome::ProtocolError>(std::get<client::Done>(s.state).outcome));
}

TEST(ClientMachine, TotalityMatrix) {
  const auto msgs = one_of_each();
  const auto states = client_states();
  const auto i = intent();
  // waiting-state index -> accepted message indices (Close is always handled)
  const std::map<std::size_t, std::set<std::size_t>> accepts{{2, {2, 3}}, {3, {4}}, {4, {6}}, {6, {8}}};
  for (std::size_t si = 0; si < states.size(); ++si) {
    std::vector<std::optional<Message>> inputs{std::nullopt};
    for (const auto& m : msgs) inputs.emplace_back(m);
    for (const auto& in : inputs) {
      SCOPED_TRACE("state " + std::to_string(si) + " msg " + (in ? std::string(type_name(*in)) : "none"));
      ClientStep step;
      ASSERT_NO_THROW(step = client_step(states[si], in, i));
      for (const auto& m : step.out) EXPECT_NO_THROW(encode_message(m));
      if (is_terminal(states[si])) {
        EXPECT_EQ(step.state, states[si]);
        EXPECT_TRUE(step.out.empty());
        continue;
      }
      const bool speaks = client_speaks(states[si]);
      const bool ok = speaks ? !in : (in && (in->index() == 9 || accepts.at(si).count(in->index())));
      const auto* done = std::get_if<client::Done>(&step.state);
      const bool protocol_error = done && std::holds_alternative<outcome::ProtocolError>(done->outcome);
      if (!ok) {
        EXPECT_TRUE(protocol_error);
        EXPECT_TRUE(step.out.empty());
      } else if (!(in && in->index() == 9)) {
        EXPECT_FALSE(protocol_error);
      }
    }
  }
}

TEST(Conversation, SixStepOrder) {
  auto conv = converse(intent(), context(true));
  const std::vector<std::string_view> want{"file_name", "file_content", "auth_ok", "amount_request", "amount",
                                           "bill",      "payment",      "receipt", "close"};
  const std::vector<bool> client_side{true, true, false, false, true, false, true, false, false};
  ASSERT_EQ(conv.frames.size(), want.size());
  for (std::size_t k = 0; k < want.size(); ++k) {
    EXPECT_EQ(type_name(conv.frames[k]), want[k]) << k;
    EXPECT_EQ(conv.from_client[k], client_side[k]) << k;
  }
  ASSERT_TRUE(std::holds_alternative<outcome::Completed>(conv.client_outcome));
  EXPECT_EQ(conv.client_outcome, conv.server_outcome);
  ASSERT_EQ(conv.drafts.size(), 1u);
  EXPECT_EQ(conv.drafts[0].total, Money::parse("1.00"));
  EXPECT_EQ(std::get<outcome::Completed>(conv.client_outcome).transaction_id, conv.drafts[0].transaction_id);
}

TEST(Conversation, DenialOrder) {
  auto conv = converse(intent(), context(false));
  ASSERT_EQ(conv.frames.size(), 4u);
  EXPECT_EQ(type_name(conv.frames[2]), "auth_denied");
  EXPECT_EQ(type_name(conv.frames[3]), "close");
  EXPECT_EQ(conv.client_outcome, SessionOutcome{outcome::DeniedUnregistered{}});
  EXPECT_EQ(conv.server_outcome, SessionOutcome{outcome::DeniedUnregistered{}});
  EXPECT_TRUE(conv.drafts.empty());
}

TEST(Conversation, SoundnessOverAmounts) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 500; ++k) {
    auto i = intent();
    i.kwh = Kwh::from_units(1 + static_cast<std::int64_t>(rng() % 1'000'000));
    auto conv = converse(i, context(true));
    ASSERT_TRUE(std::holds_alternative<outcome::Completed>(conv.client_outcome));
    ASSERT_EQ(conv.drafts.size(), 1u);
    EXPECT_EQ(conv.drafts[0].kwh, i.kwh);
    EXPECT_EQ(conv.drafts[0].total, price(i.kwh, kTariff));
  }
}
