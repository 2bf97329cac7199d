#pragma once

// Deterministic fleet simulator: builds a registry with a seeded population,
// runs every vehicle as a real client against in-process stations, and
// aggregates a service-provider report. verify_ledger() cross-checks the
// station transcripts against the transaction ledger.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eav/decimal.hpp"
#include "eav/registry.hpp"

namespace eav {

struct FractionTag {};
/// A proportion in [0, 1] with 6 fractional digits.
using Fraction = Fixed<6, FractionTag>;

struct SimConfig {
  enum class Arrival { Sequential, Concurrent };
  enum class Channel { Loopback, Memory };

  std::uint64_t seed = 42;
  int n_stations = 1;
  int n_vehicles = 0;
  Fraction registered_fraction = Fraction::from_units(Fraction::kOne);
  /// Uniform over [kwh_min, kwh_max] in 0.001 kWh steps; equal bounds = fixed.
  Kwh kwh_min = Kwh::from_units(5 * Kwh::kOne);
  Kwh kwh_max = Kwh::from_units(5 * Kwh::kOne);
  Rate tariff = Rate::parse("0.10");
  Arrival arrival = Arrival::Sequential;
  int max_in_flight = 8;
  Channel channel = Channel::Loopback;
  /// Fresh temporary directory when empty.
  std::filesystem::path data_dir;
};

class SimError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Throws SimError on invalid fields.
void validate(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SimConfig& cfg);

struct StationStats {
  std::string station_id;
  std::size_t completed = 0, denied = 0, error = 0;
  Kwh energy_sold;
  Money revenue;
  friend bool operator==(const StationStats&, const StationStats&) = default;
};

struct FleetReport {
  std::size_t sessions_total = 0, sessions_completed = 0, sessions_denied = 0, sessions_error = 0;
  std::size_t vehicles_registered = 0;
  Kwh energy_sold;
  Money revenue;
  std::vector<StationStats> per_station;
  // Run-specific; left out of the canonical report.
  std::filesystem::path data_dir;
  std::filesystem::path transcript_dir;
  double elapsed_seconds = 0.0;
};

/// Canonical report JSON. With include_runtime, adds a "runtime" object
/// (paths and throughput) that varies between runs.
nlohmann::ordered_json to_json(const FleetReport& r, bool include_runtime = false);

/// Throws SimError if stations cannot be started.
FleetReport run_sim(const SimConfig& cfg);

struct AuditResult {
  bool passed = false;
  std::vector<std::string> discrepancies;
};

/// Transcript-versus-ledger consistency check over a finished simulation.
AuditResult verify_ledger(const FleetReport& report, const Registry& registry);

}  // namespace eav
