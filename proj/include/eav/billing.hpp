#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "eav/decimal.hpp"
#include "eav/protocol.hpp"

namespace eav {

/// Per-session energy cap; larger requests are refused.
inline const Kwh kMaxSessionKwh = Kwh::from_units(1000 * Kwh::kOne);

class InvalidAmount : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

using IdFn = std::function<std::string()>;

/// One bill per charging session: total = round-half-up(kwh × tariff, 2).
/// Throws InvalidAmount unless 0 < kwh <= 1000 and tariff > 0.
msg::Bill make_bill(Kwh kwh, Rate tariff, const IdFn& next_id);

}  // namespace eav
