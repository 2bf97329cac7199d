#include "eav/station.hpp"

#include <charconv>
#include <fstream>

#include <spdlog/spdlog.h>

#include "eav/transcript.hpp"

namespace eav {

namespace fs = std::filesystem;

void validate(const StationConfig& cfg, const Registry& registry) {
  if (cfg.station_id.empty()) throw StationError("station id is required");
  if (cfg.tariff.is_zero()) throw StationError("tariff must be positive");
  if (cfg.session_timeout.count() <= 0) throw StationError("session timeout must be positive");
  if (!registry.find_station(cfg.station_id))
    throw StationError("station '" + cfg.station_id + "' is not in the registry; register it first");
}

std::string sanitize_file_name(std::string_view name) {
  std::string out;
  std::string part;
  auto flush = [&] {
    if (!part.empty() && part != "." && part != "..") {
      if (!out.empty()) out += '_';
      out += part;
    }
    part.clear();
  };
  for (char c : name) {
    if (c == '/' || c == '\\')
      flush();
    else if (c == '\0' || static_cast<unsigned char>(c) < 0x20)
      part += '_';
    else
      part += c;
  }
  flush();
  return out.empty() ? "request.json" : out;
}

fs::path archive_request(const fs::path& archive_dir, std::string_view session_id, std::string_view file_name,
                         std::string_view raw_content) {
  fs::create_directories(archive_dir);
  const fs::path path = archive_dir / (sanitize_file_name(session_id) + "_" + sanitize_file_name(file_name));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create " + path.string());
  out.write(raw_content.data(), static_cast<std::streamsize>(raw_content.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return path;
}

namespace {

StationConfig checked(StationConfig cfg, const Registry& registry) {
  validate(cfg, registry);
  if (cfg.archive_dir.empty()) cfg.archive_dir = cfg.data_dir / "archive";
  return cfg;
}

}  // namespace

Station::Station(StationConfig cfg, std::shared_ptr<Registry> registry, std::shared_ptr<IdSource> ids)
    : cfg_(checked(std::move(cfg), *registry)),
      registry_(std::move(registry)),
      ids_(ids ? std::move(ids) : std::make_shared<IdSource>()),
      listener_(cfg_.bind_address, cfg_.port) {
  // Continue numbering after any transcripts left by a previous run.
  const std::string prefix = sanitize_file_name(cfg_.station_id) + "-";
  for (const auto& p : list_transcripts(transcript_dir())) {
    const std::string stem = p.stem().string();
    if (stem.rfind(prefix, 0) != 0) continue;
    std::uint64_t n = 0;
    auto tail = std::string_view(stem).substr(prefix.size());
    if (std::from_chars(tail.data(), tail.data() + tail.size(), n).ec == std::errc{}) session_counter_ = std::max(session_counter_, n);
  }
  spdlog::info("station {} listening on {}:{} (tariff {}/kWh)", cfg_.station_id, cfg_.bind_address, port(),
               cfg_.tariff.to_string());
}

std::string Station::next_session_id() {
  char num[16];
  std::snprintf(num, sizeof num, "%06llu", static_cast<unsigned long long>(++session_counter_));
  return sanitize_file_name(cfg_.station_id) + "-" + num;
}

void Station::serve(std::stop_token stop) {
  while (!stop.stop_requested()) serve_one(std::chrono::milliseconds(200));
  spdlog::info("station {} stopped", cfg_.station_id);
}

std::optional<SessionSummary> Station::serve_one(std::chrono::milliseconds accept_timeout) {
  auto conn = listener_.accept(accept_timeout);
  if (!conn) return std::nullopt;
  try {
    return run_session(*conn, conn->peer());
  } catch (const std::exception& e) {
    // Per-session failures never take the daemon down.
    spdlog::error("session from {} aborted: {}", conn->peer(), e.what());
    return std::nullopt;
  }
}

SessionSummary Station::run_session(LineChannel& channel, const std::string& peer) {
  std::lock_guard lane(session_mu_);

  SessionSummary summary;
  summary.session_id = next_session_id();
  TranscriptWriter transcript(transcript_dir() / (summary.session_id + ".jsonl"), summary.session_id, cfg_.station_id, peer);
  summary.transcript = transcript.path();

  ServerContext ctx{cfg_.station_id, cfg_.tariff,
                    [this](const ChargeRequest& r) { return registry_->authorize(cfg_.station_id, r); },
                    [this] { return ids_->next(); }};

  ServerState state = server::AwaitFileName{};
  std::string file_name;

  auto close_with = [&](std::string detail, std::vector<Message>& out) {
    out.push_back(msg::Close{std::string(close_reason::kProtocolError) + ": " + detail});
    state = server::Closed{outcome::ProtocolError{std::move(detail)}};
  };

  while (!is_terminal(state)) {
    std::vector<Message> out;
    auto r = channel.read_line(cfg_.session_timeout, kMaxFrameBytes);
    switch (r.status) {
      case LineChannel::Status::Line: {
        transcript.frame(TranscriptEntry::Dir::In, r.line);
        Message in;
        try {
          in = decode_message(r.line);
        } catch (const CodecError& e) {
          close_with(std::string(to_string(e.kind())) + ": " + e.what(), out);
          break;
        }
        if (const auto* fn = std::get_if<msg::FileName>(&in)) file_name = fn->name;
        if (std::holds_alternative<msg::FileContent>(in) && std::holds_alternative<server::AwaitFileContent>(state)) {
          try {
            summary.archived = archive_request(cfg_.archive_dir, summary.session_id, file_name, r.line);
          } catch (const std::exception& e) {
            spdlog::warn("session {}: archiving request failed: {}", summary.session_id, e.what());
          }
        }
        auto step = server_step(state, in, ctx);
        state = std::move(step.state);
        out = std::move(step.out);
        if (step.draft) {
          try {
            summary.transaction = registry_->record_transaction(*step.draft);
          } catch (const std::exception& e) {
            out.clear();
            close_with(std::string("ledger rejected transaction: ") + e.what(), out);
          }
        }
        break;
      }
      case LineChannel::Status::Timeout:
        close_with("timeout", out);
        break;
      case LineChannel::Status::TooLong:
        close_with("frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes", out);
        break;
      case LineChannel::Status::Eof:
        state = server::Closed{outcome::ProtocolError{"connection closed by vehicle"}};
        break;
      case LineChannel::Status::Error:
        state = server::Closed{outcome::ProtocolError{"transport error: " + r.error}};
        break;
    }
    for (const auto& m : out) {
      std::string line = encode_message(m);
      transcript.frame(TranscriptEntry::Dir::Out, std::string_view(line).substr(0, line.size() - 1));
      if (!channel.write_all(line)) {
        spdlog::warn("session {}: write to {} failed", summary.session_id, peer);
        break;
      }
    }
  }
  channel.close();

  summary.outcome = std::get<server::Closed>(state).outcome;
  transcript.end(summary.outcome);
  spdlog::info("session {} from {}: {}", summary.session_id, peer, describe(summary.outcome));
  if (observer_) observer_(summary);
  return summary;
}

}  // namespace eav
