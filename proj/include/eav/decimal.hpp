#pragma once

// Exact non-negative decimals stored as scaled integers.
//
// Energy is carried with 3 fractional digits, money and tariffs with 2.
// All rounding is half-up.

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eav {

class DecimalError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

constexpr std::int64_t pow10(int n) {
  std::int64_t r = 1;
  while (n-- > 0) r *= 10;
  return r;
}

// Largest integral part accepted on input; keeps products inside 128 bits
// and doubles exact enough for a lossless scale conversion.
inline constexpr std::int64_t kMaxIntegral = 1'000'000'000LL;

std::optional<std::int64_t> parse_scaled(std::string_view text, int scale);
std::optional<std::int64_t> scaled_from_double(double v, int scale);
std::string format_scaled(std::int64_t units, int scale);

}  // namespace detail

template <int Scale, class Tag>
class Fixed {
public:
  static constexpr int kScale = Scale;
  static constexpr std::int64_t kOne = detail::pow10(Scale);

  constexpr Fixed() = default;

  static constexpr Fixed from_units(std::int64_t units) {
    if (units < 0) throw DecimalError("negative decimal");
    Fixed f;
    f.units_ = units;
    return f;
  }

  /// Parses "12", "12.5", "12.500"; rejects signs, exponents and excess digits.
  static Fixed parse(std::string_view text) {
    auto u = detail::parse_scaled(text, Scale);
    if (!u) throw DecimalError("invalid decimal '" + std::string(text) + "'");
    return from_units(*u);
  }

  /// Accepts a JSON-style double only if it is representable at this scale.
  static Fixed from_double(double v) {
    auto u = detail::scaled_from_double(v, Scale);
    if (!u) throw DecimalError("value " + std::to_string(v) + " is not a non-negative decimal with at most " +
                               std::to_string(Scale) + " fractional digits");
    return from_units(*u);
  }

  constexpr std::int64_t units() const { return units_; }
  double to_double() const { return static_cast<double>(units_) / static_cast<double>(kOne); }
  std::string to_string() const { return detail::format_scaled(units_, Scale); }

  constexpr bool is_zero() const { return units_ == 0; }

  constexpr Fixed& operator+=(Fixed o) {
    units_ += o.units_;
    return *this;
  }
  friend constexpr Fixed operator+(Fixed a, Fixed b) { return a += b; }

  friend constexpr auto operator<=>(Fixed, Fixed) = default;
  friend constexpr bool operator==(Fixed, Fixed) = default;

private:
  std::int64_t units_ = 0;
};

struct KwhTag {};
struct MoneyTag {};
struct RateTag {};

using Kwh = Fixed<3, KwhTag>;
using Money = Fixed<2, MoneyTag>;
/// Price per kWh, in currency units.
using Rate = Fixed<2, RateTag>;

/// kwh × rate, rounded half-up to cents.
Money price(Kwh kwh, Rate rate);

}  // namespace eav
