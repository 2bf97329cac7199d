#include "eav/decimal.hpp"

#include <cmath>
#include <limits>

namespace eav {
namespace detail {

std::optional<std::int64_t> parse_scaled(std::string_view text, int scale) {
  if (text.empty()) return std::nullopt;
  std::int64_t integral = 0;
  std::size_t i = 0;
  std::size_t int_digits = 0;
  for (; i < text.size() && text[i] != '.'; ++i) {
    char c = text[i];
    if (c < '0' || c > '9') return std::nullopt;
    integral = integral * 10 + (c - '0');
    if (integral > kMaxIntegral) return std::nullopt;
    ++int_digits;
  }
  if (int_digits == 0) return std::nullopt;
  std::int64_t frac = 0;
  int frac_digits = 0;
  if (i < text.size()) {
    ++i;  // '.'
    if (i == text.size()) return std::nullopt;
    for (; i < text.size(); ++i) {
      char c = text[i];
      if (c < '0' || c > '9') return std::nullopt;
      if (frac_digits == scale) {
        // Trailing zeros beyond the scale are harmless.
        if (c != '0') return std::nullopt;
        continue;
      }
      frac = frac * 10 + (c - '0');
      ++frac_digits;
    }
  }
  frac *= pow10(scale - frac_digits);
  return integral * pow10(scale) + frac;
}

std::optional<std::int64_t> scaled_from_double(double v, int scale) {
  if (!std::isfinite(v) || v < 0.0 || v > static_cast<double>(kMaxIntegral)) return std::nullopt;
  const double one = static_cast<double>(pow10(scale));
  const auto guess = static_cast<std::int64_t>(std::llround(v * one));
  // Accept v only if it is the double nearest to some k / 10^scale. Both k
  // and 10^scale are exact doubles here, so the division rounds correctly.
  for (std::int64_t k : {guess, guess - 1, guess + 1})
    if (k >= 0 && static_cast<double>(k) / one == v) return k;
  return std::nullopt;
}

std::string format_scaled(std::int64_t units, int scale) {
  const std::int64_t one = pow10(scale);
  std::string out = std::to_string(units / one);
  if (scale > 0) {
    std::string frac = std::to_string(units % one);
    out += '.';
    out.append(static_cast<std::size_t>(scale) - frac.size(), '0');
    out += frac;
  }
  return out;
}

}  // namespace detail

Money price(Kwh kwh, Rate rate) {
  // kwh units are 1e-3, rate units 1e-2: the product is in 1e-5.
  constexpr __int128 divisor = detail::pow10(Kwh::kScale + Rate::kScale - Money::kScale);
  const __int128 product = static_cast<__int128>(kwh.units()) * rate.units();
  const __int128 rounded = (product + divisor / 2) / divisor;
  if (rounded > std::numeric_limits<std::int64_t>::max()) throw DecimalError("price overflow");
  return Money::from_units(static_cast<std::int64_t>(rounded));
}

}  // namespace eav
