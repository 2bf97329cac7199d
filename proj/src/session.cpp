#include "eav/session.hpp"

#include <deque>

namespace eav {

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

std::string protocol_close(std::string_view detail) {
  return std::string(close_reason::kProtocolError) + ": " + std::string(detail);
}

ServerStep server_fail(std::string detail) {
  ServerStep r{server::Closed{outcome::ProtocolError{detail}}, {}, std::nullopt};
  r.out.push_back(msg::Close{protocol_close(detail)});
  return r;
}

std::string unexpected(const Message& in, std::string_view state) {
  return "unexpected " + std::string(type_name(in)) + " while " + std::string(state);
}

ClientStep client_done(SessionOutcome o) { return {client::Done{std::move(o)}, {}}; }

ClientStep client_fail(std::string detail) { return client_done(outcome::ProtocolError{std::move(detail)}); }

// What the vehicle concludes when the station closes on it.
SessionOutcome outcome_of_close(const msg::Close& c) {
  if (c.reason == close_reason::kPaymentMismatch) return outcome::PaymentMismatch{};
  if (c.reason == close_reason::kDenied) return outcome::DeniedUnregistered{};
  return outcome::ProtocolError{"station closed the session: " + c.reason};
}

}  // namespace

std::string_view to_string(DenialReason r) {
  switch (r) {
    case DenialReason::NotRegistered: return "not-registered";
    case DenialReason::DetailMismatch: return "detail-mismatch";
  }
  return "?";
}

std::string_view outcome_kind(const SessionOutcome& o) {
  return std::visit(overloaded{
                        [](const outcome::Completed&) { return std::string_view("completed"); },
                        [](const outcome::DeniedUnregistered&) { return std::string_view("denied"); },
                        [](const outcome::ProtocolError&) { return std::string_view("protocol_error"); },
                        [](const outcome::PaymentMismatch&) { return std::string_view("payment_mismatch"); },
                    },
                    o);
}

std::string describe(const SessionOutcome& o) {
  std::string s(outcome_kind(o));
  if (auto* c = std::get_if<outcome::Completed>(&o)) s += " (transaction " + c->transaction_id + ")";
  if (auto* e = std::get_if<outcome::ProtocolError>(&o)) s += ": " + e->detail;
  return s;
}

ServerStep server_step(const ServerState& state, const Message& in, const ServerContext& ctx) {
  return std::visit(
      overloaded{
          [&](const server::AwaitFileName&) -> ServerStep {
            if (!std::holds_alternative<msg::FileName>(in)) return server_fail(unexpected(in, "awaiting file_name"));
            return {server::AwaitFileContent{}, {}, std::nullopt};
          },
          [&](const server::AwaitFileContent&) -> ServerStep {
            const auto* fc = std::get_if<msg::FileContent>(&in);
            if (!fc) return server_fail(unexpected(in, "awaiting file_content"));
            AuthDecision d = ctx.authorize(fc->request);
            if (!d.granted) {
              ServerStep r{server::Closed{outcome::DeniedUnregistered{}}, {}, std::nullopt};
              r.out.push_back(msg::AuthDenied{std::string(to_string(d.reason))});
              r.out.push_back(msg::Close{std::string(close_reason::kDenied)});
              return r;
            }
            ServerStep r{server::AwaitAmount{fc->request}, {}, std::nullopt};
            r.out.push_back(msg::AuthOk{ctx.station_id});
            r.out.push_back(msg::AmountRequest{});
            return r;
          },
          [&](const server::AwaitAmount& s) -> ServerStep {
            const auto* a = std::get_if<msg::Amount>(&in);
            if (!a) return server_fail(unexpected(in, "awaiting amount"));
            msg::Bill bill;
            try {
              bill = make_bill(a->kwh, ctx.tariff, ctx.next_id);
            } catch (const InvalidAmount& e) {
              return server_fail(std::string("invalid amount: ") + e.what());
            }
            ServerStep r{server::AwaitPayment{s.request, bill}, {}, std::nullopt};
            r.out.push_back(bill);
            return r;
          },
          [&](const server::AwaitPayment& s) -> ServerStep {
            const auto* p = std::get_if<msg::Payment>(&in);
            if (!p) return server_fail(unexpected(in, "awaiting payment"));
            if (p->bill_id != s.bill.bill_id || p->amount != s.bill.total) {
              ServerStep r{server::Closed{outcome::PaymentMismatch{}}, {}, std::nullopt};
              r.out.push_back(msg::Close{std::string(close_reason::kPaymentMismatch)});
              return r;
            }
            TransactionDraft draft{ctx.next_id(),        s.bill.bill_id, ctx.station_id,          s.request.car_id,
                                   s.request.owner_id, s.bill.kwh,     s.bill.price_per_kwh, s.bill.total};
            ServerStep r{server::Closed{outcome::Completed{draft.transaction_id}}, {}, draft};
            r.out.push_back(msg::Receipt{draft.transaction_id, s.bill.bill_id});
            r.out.push_back(msg::Close{std::string(close_reason::kCompleted)});
            return r;
          },
          [&](const server::Closed& s) -> ServerStep { return {s, {}, std::nullopt}; },
      },
      state);
}

bool client_speaks(const ClientState& s) {
  return std::holds_alternative<client::SendFileName>(s) || std::holds_alternative<client::SendFileContent>(s) ||
         std::holds_alternative<client::SendPayment>(s);
}

ClientStep client_step(const ClientState& state, const std::optional<Message>& in, const ChargeIntent& intent) {
  if (is_terminal(state)) return {state, {}};

  if (client_speaks(state)) {
    if (in) return client_fail(unexpected(*in, "sending"));
    if (std::holds_alternative<client::SendFileName>(state))
      return {client::SendFileContent{}, {msg::FileName{intent.file_name}}};
    if (std::holds_alternative<client::SendFileContent>(state))
      return {client::AwaitAuth{}, {msg::FileContent{intent.request}}};
    const auto& bill = std::get<client::SendPayment>(state).bill;
    return {client::AwaitReceipt{bill}, {msg::Payment{bill.bill_id, bill.total}}};
  }

  if (!in) return client_fail("connection closed by station");
  const Message& m = *in;
  if (const auto* c = std::get_if<msg::Close>(&m)) return client_done(outcome_of_close(*c));

  return std::visit(
      overloaded{
          [&](const client::AwaitAuth&) -> ClientStep {
            if (std::holds_alternative<msg::AuthDenied>(m)) return client_done(outcome::DeniedUnregistered{});
            if (std::holds_alternative<msg::AuthOk>(m)) return {client::AwaitAmountRequest{}, {}};
            return client_fail(unexpected(m, "awaiting authorization"));
          },
          [&](const client::AwaitAmountRequest&) -> ClientStep {
            if (!std::holds_alternative<msg::AmountRequest>(m)) return client_fail(unexpected(m, "awaiting amount_request"));
            return {client::AwaitBill{}, {msg::Amount{intent.kwh}}};
          },
          [&](const client::AwaitBill&) -> ClientStep {
            const auto* b = std::get_if<msg::Bill>(&m);
            if (!b) return client_fail(unexpected(m, "awaiting bill"));
            // Only pay for the energy that was asked for.
            if (b->kwh != intent.kwh)
              return client_fail("bill is for " + b->kwh.to_string() + " kWh, requested " + intent.kwh.to_string());
            return {client::AwaitReceipt{*b}, {msg::Payment{b->bill_id, b->total}}};
          },
          [&](const client::AwaitReceipt& s) -> ClientStep {
            const auto* r = std::get_if<msg::Receipt>(&m);
            if (!r) return client_fail(unexpected(m, "awaiting receipt"));
            if (r->bill_id != s.bill.bill_id) return client_fail("receipt for unknown bill " + r->bill_id);
            return client_done(outcome::Completed{r->transaction_id});
          },
          [&](const auto&) -> ClientStep { return client_fail("unreachable client state"); },
      },
      state);
}

Conversation converse(const ChargeIntent& intent, const ServerContext& ctx) {
  Conversation conv;
  ClientState cs = client::SendFileName{};
  ServerState ss = server::AwaitFileName{};
  std::deque<Message> to_server, to_client;

  auto send = [&](std::vector<Message>& out, std::deque<Message>& q, bool from_client) {
    for (auto& m : out) {
      conv.frames.push_back(m);
      conv.from_client.push_back(from_client);
      q.push_back(std::move(m));
    }
  };

  while (true) {
    if (!is_terminal(cs) && client_speaks(cs)) {
      auto step = client_step(cs, std::nullopt, intent);
      cs = std::move(step.state);
      send(step.out, to_server, true);
    } else if (!to_server.empty()) {
      Message m = std::move(to_server.front());
      to_server.pop_front();
      if (is_terminal(ss)) continue;
      auto step = server_step(ss, m, ctx);
      ss = std::move(step.state);
      if (step.draft) conv.drafts.push_back(*step.draft);
      send(step.out, to_client, false);
    } else if (!to_client.empty()) {
      Message m = std::move(to_client.front());
      to_client.pop_front();
      if (is_terminal(cs)) continue;
      auto step = client_step(cs, m, intent);
      cs = std::move(step.state);
      send(step.out, to_server, true);
    } else if (!is_terminal(cs)) {
      cs = client_step(cs, std::nullopt, intent).state;
    } else {
      break;
    }
  }
  if (!is_terminal(ss)) ss = server::Closed{outcome::ProtocolError{"connection closed by vehicle"}};
  conv.client_outcome = std::get<client::Done>(cs).outcome;
  conv.server_outcome = std::get<server::Closed>(ss).outcome;
  return conv;
}

}  // namespace eav
