#pragma once

// Session transcripts: one JSON object per line.
//
//   {"seq":0,"dir":"start","ts":...,"session_id":...,"station_id":...,"peer":...}
//   {"seq":1,"dir":"in","ts":...,"frame":"<raw frame text>"}
//   {"seq":2,"dir":"out","ts":...,"frame":"<raw frame text>"}
//   ...
//   {"seq":n,"dir":"end","ts":...,"outcome":"completed","detail":...,"transaction_id":...}

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "eav/clock.hpp"
#include "eav/protocol.hpp"
#include "eav/session.hpp"

namespace eav {

struct TranscriptEntry {
  enum class Dir { In, Out };
  Dir dir = Dir::In;
  Timestamp ts;
  std::string frame;  // raw line, no trailing newline
};

struct Transcript {
  std::string session_id;
  std::string station_id;
  std::string peer;
  std::vector<TranscriptEntry> frames;
  std::optional<std::string> outcome;  // outcome_kind(), absent if the session never finished
  std::string detail;
  std::string transaction_id;
};

/// Decodes frames in one direction, skipping any that fail to decode.
std::vector<Message> decoded_frames(const Transcript& t, TranscriptEntry::Dir dir);

/// Throws std::runtime_error on unreadable or malformed files.
Transcript read_transcript(const std::filesystem::path& path);

/// All *.jsonl transcripts in a directory, sorted by file name.
std::vector<std::filesystem::path> list_transcripts(const std::filesystem::path& dir);

class TranscriptWriter {
public:
  TranscriptWriter(const std::filesystem::path& path, const std::string& session_id, const std::string& station_id,
                   const std::string& peer);

  void frame(TranscriptEntry::Dir dir, std::string_view raw);
  void end(const SessionOutcome& outcome);

  const std::filesystem::path& path() const { return path_; }

private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t seq_ = 0;
};

}  // namespace eav
