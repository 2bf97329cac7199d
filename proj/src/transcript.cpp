#include "eav/transcript.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace eav {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<Message> decoded_frames(const Transcript& t, TranscriptEntry::Dir dir) {
  std::vector<Message> out;
  for (const auto& f : t.frames) {
    if (f.dir != dir) continue;
    try {
      out.push_back(decode_message(f.frame));
    } catch (const CodecError&) {
    }
  }
  return out;
}

Transcript read_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transcript " + path.string());
  Transcript t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    json j;
    try {
      j = json::parse(line);
      const auto dir = j.at("dir").get<std::string>();
      const auto ts = parse_utc(j.at("ts").get<std::string>());
      if (!ts) throw std::runtime_error("bad timestamp");
      if (dir == "start") {
        t.session_id = j.at("session_id").get<std::string>();
        t.station_id = j.at("station_id").get<std::string>();
        t.peer = j.value("peer", "");
      } else if (dir == "in" || dir == "out") {
        t.frames.push_back({dir == "in" ? TranscriptEntry::Dir::In : TranscriptEntry::Dir::Out, *ts,
                            j.at("frame").get<std::string>()});
      } else if (dir == "end") {
        t.outcome = j.at("outcome").get<std::string>();
        t.detail = j.value("detail", "");
        t.transaction_id = j.value("transaction_id", "");
      } else {
        throw std::runtime_error("unknown dir '" + dir + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

std::vector<std::filesystem::path> list_transcripts(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

TranscriptWriter::TranscriptWriter(const std::filesystem::path& path, const std::string& session_id,
                                   const std::string& station_id, const std::string& peer)
    : path_(path) {
  std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot create transcript " + path.string());
  ordered_json j{{"seq", seq_++},
                 {"dir", "start"},
                 {"ts", format_utc(utc_now())},
                 {"session_id", session_id},
                 {"station_id", station_id},
                 {"peer", peer}};
  write_line(j.dump());
}

void TranscriptWriter::frame(TranscriptEntry::Dir dir, std::string_view raw) {
  ordered_json j{{"seq", seq_++}, {"dir", dir == TranscriptEntry::Dir::In ? "in" : "out"}, {"ts", format_utc(utc_now())}};
  // Invalid UTF-8 from a misbehaving peer is kept, with replacement characters.
  j["frame"] = std::string(raw);
  write_line(j.dump(-1, ' ', false, json::error_handler_t::replace));
}

void TranscriptWriter::end(const SessionOutcome& outcome) {
  ordered_json j{{"seq", seq_++}, {"dir", "end"}, {"ts", format_utc(utc_now())}, {"outcome", outcome_kind(outcome)}};
  if (auto* c = std::get_if<outcome::Completed>(&outcome)) j["transaction_id"] = c->transaction_id;
  if (auto* e = std::get_if<outcome::ProtocolError>(&outcome)) j["detail"] = e->detail;
  write_line(j.dump(-1, ' ', false, json::error_handler_t::replace));
}

void TranscriptWriter::write_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
}

}  // namespace eav
