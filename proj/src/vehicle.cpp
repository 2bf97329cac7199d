#include "eav/vehicle.hpp"

#include <fstream>
#include <sstream>

namespace eav {

namespace {

void check_intent(const ChargeIntent& intent) {
  if (intent.kwh.is_zero()) throw std::invalid_argument("requested kwh must be positive");
  if (intent.file_name.empty()) throw std::invalid_argument("file name must be non-empty");
  if (auto issues = validate(intent.request); !issues.empty())
    throw RequestError(issues.front().field, issues.front().message);
}

}  // namespace

SessionReport run_client_session(LineChannel& channel, const ChargeIntent& intent, std::chrono::milliseconds frame_timeout) {
  check_intent(intent);
  SessionReport report;
  ClientState state = client::SendFileName{};

  auto send = [&](const std::vector<Message>& out) {
    for (const auto& m : out) {
      std::string line = encode_message(m);
      report.transcript.push_back({TranscriptEntry::Dir::Out, utc_now(), line.substr(0, line.size() - 1)});
      if (!channel.write_all(line)) {
        state = client::Done{outcome::ProtocolError{"write to station failed"}};
        return;
      }
    }
  };
  auto fail = [&](std::string detail) { state = client::Done{outcome::ProtocolError{std::move(detail)}}; };

  while (!is_terminal(state)) {
    if (client_speaks(state)) {
      auto step = client_step(state, std::nullopt, intent);
      state = std::move(step.state);
      send(step.out);
      continue;
    }
    auto r = channel.read_line(frame_timeout, kMaxFrameBytes);
    switch (r.status) {
      case LineChannel::Status::Line: {
        report.transcript.push_back({TranscriptEntry::Dir::In, utc_now(), r.line});
        Message in;
        try {
          in = decode_message(r.line);
        } catch (const CodecError& e) {
          fail(std::string(to_string(e.kind())) + ": " + e.what());
          break;
        }
        if (const auto* b = std::get_if<msg::Bill>(&in)) report.bill = *b;
        auto step = client_step(state, in, intent);
        state = std::move(step.state);
        send(step.out);
        break;
      }
      case LineChannel::Status::Eof:
        state = client_step(state, std::nullopt, intent).state;
        break;
      case LineChannel::Status::Timeout:
        fail("timed out waiting for the station");
        break;
      case LineChannel::Status::TooLong:
        fail("frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
        break;
      case LineChannel::Status::Error:
        fail("transport error: " + r.error);
        break;
    }
  }

  // Collect the station's trailing frames (normally a Close) until it hangs up.
  channel.close();
  const auto drain_timeout = std::min<std::chrono::milliseconds>(frame_timeout, std::chrono::seconds(2));
  while (true) {
    auto r = channel.read_line(drain_timeout, kMaxFrameBytes);
    if (r.status != LineChannel::Status::Line) break;
    report.transcript.push_back({TranscriptEntry::Dir::In, utc_now(), r.line});
  }

  report.outcome = std::get<client::Done>(state).outcome;
  if (const auto* c = std::get_if<outcome::Completed>(&report.outcome)) report.receipt_transaction_id = c->transaction_id;
  return report;
}

SessionReport charge(const ChargeIntent& intent, VehicleTimeouts timeouts) {
  check_intent(intent);
  auto stream = TcpStream::connect(intent.station_address, intent.station_port, timeouts.connect);
  return run_client_session(*stream, intent, timeouts.frame);
}

ChargeRequest load_charge_request(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RequestParseError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw RequestParseError(path.string() + " is not valid JSON: " + e.what());
  }
  return charge_request_from_json(j);
}

SessionOutcome replay_client(const SessionReport& report, const ChargeIntent& intent) {
  ClientState state = client::SendFileName{};
  std::size_t next = 0;
  while (!is_terminal(state)) {
    if (client_speaks(state)) {
      state = client_step(state, std::nullopt, intent).state;
      continue;
    }
    while (next < report.transcript.size() && report.transcript[next].dir != TranscriptEntry::Dir::In) ++next;
    if (next == report.transcript.size()) {
      state = client_step(state, std::nullopt, intent).state;
      continue;
    }
    try {
      state = client_step(state, decode_message(report.transcript[next++].frame), intent).state;
    } catch (const CodecError& e) {
      state = client::Done{outcome::ProtocolError{std::string(to_string(e.kind())) + ": " + e.what()}};
    }
  }
  return std::get<client::Done>(state).outcome;
}

}  // namespace eav
