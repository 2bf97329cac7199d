#include "eav/billing.hpp"

namespace eav {

msg::Bill make_bill(Kwh kwh, Rate tariff, const IdFn& next_id) {
  if (kwh.is_zero()) throw InvalidAmount("kwh must be positive");
  if (kwh > kMaxSessionKwh) throw InvalidAmount("kwh " + kwh.to_string() + " exceeds the per-session cap of 1000");
  if (tariff.is_zero()) throw InvalidAmount("tariff must be positive");
  return msg::Bill{next_id(), kwh, tariff, price(kwh, tariff)};
}

}  // namespace eav
