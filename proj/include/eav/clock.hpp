#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace eav {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Clock = std::function<Timestamp()>;

Timestamp utc_now();

/// "2026-10-17T08:30:00.125Z"
std::string format_utc(Timestamp t);

/// Inverse of format_utc; also accepts a missing fractional part.
std::optional<Timestamp> parse_utc(std::string_view s);

}  // namespace eav
