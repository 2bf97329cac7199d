#include "eav/fleetsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "eav/station.hpp"
#include "eav/transcript.hpp"
#include "eav/vehicle.hpp"

namespace eav {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 6> kModels = {"Model S", "Leaf", "ID.4", "Ioniq 5", "Zoe", "e-Golf"};

// rng() % n keeps the sequence identical across standard libraries.
std::uint64_t draw(std::mt19937_64& rng, std::uint64_t n) { return n == 0 ? 0 : rng() % n; }

struct Vehicle {
  ChargeRequest request;
  std::size_t station = 0;  // index of the station it drives to
  bool registered = false;
  Kwh kwh;
};

struct Population {
  std::vector<StationRecord> stations;
  std::vector<Vehicle> vehicles;
};

Population build_population(const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  Population pop;
  for (int s = 0; s < cfg.n_stations; ++s)
    pop.stations.push_back({fmt::format("st-{:02d}", s + 1), fmt::format("Station {}", s + 1),
                            fmt::format("10.0.{}.{}", s / 250, s % 250 + 1)});

  const auto n = static_cast<std::size_t>(cfg.n_vehicles);
  for (std::size_t i = 0; i < n; ++i) {
    Vehicle v;
    auto& r = v.request;
    r.owner_id = fmt::format("owner-{:04d}", i + 1);
    r.owner_name = fmt::format("Owner {}", i + 1);
    r.owner_email = fmt::format("owner{}@example.org", i + 1);
    r.owner_phone = fmt::format("+7-900-{:07d}", draw(rng, 10'000'000));
    r.car_id = fmt::format("car-{:04d}", i + 1);
    r.car_model_name = std::string(kModels[draw(rng, kModels.size())]);
    r.car_model_year = 2012 + static_cast<int>(draw(rng, 13));
    r.car_date_purchased = fmt::format("{:04d}-{:02d}-{:02d}", r.car_model_year, 1 + draw(rng, 12), 1 + draw(rng, 28));
    const auto span = static_cast<std::uint64_t>(cfg.kwh_max.units() - cfg.kwh_min.units());
    v.kwh = Kwh::from_units(cfg.kwh_min.units() + static_cast<std::int64_t>(draw(rng, span + 1)));
    pop.vehicles.push_back(std::move(v));
  }

  // Seeded choice of which vehicles are registered.
  const auto n_registered = static_cast<std::size_t>(
      (static_cast<__int128>(n) * cfg.registered_fraction.units()) / Fraction::kOne);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[draw(rng, i)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_registered));
  for (std::size_t k = 0; k < n_registered; ++k) {
    auto& v = pop.vehicles[order[k]];
    v.registered = true;
    v.station = k % pop.stations.size();
  }
  std::size_t next = 0;
  for (auto& v : pop.vehicles)
    if (!v.registered) v.station = next++ % pop.stations.size();
  return pop;
}

fs::path fresh_temp_dir() {
  std::random_device rd;
  for (int attempt = 0; attempt < 16; ++attempt) {
    auto dir = fs::temp_directory_path() / fmt::format("eav-sim-{:08x}", rd());
    if (fs::create_directory(dir)) return dir;
  }
  throw SimError("cannot create a temporary data directory");
}

template <class F>
F decimal_field(const json& j, const char* key) {
  const auto& v = j.at(key);
  try {
    if (v.is_string()) return F::parse(v.get<std::string>());
    if (v.is_number_unsigned()) return F::from_units(static_cast<std::int64_t>(v.get<std::uint64_t>()) * F::kOne);
    if (v.is_number_float()) return F::from_double(v.get<double>());
  } catch (const DecimalError& e) {
    throw SimError(std::string(key) + ": " + e.what());
  }
  throw SimError(std::string(key) + ": expected a non-negative decimal");
}

}  // namespace

void validate(const SimConfig& cfg) {
  if (cfg.n_stations < 1) throw SimError("n_stations must be >= 1");
  if (cfg.n_vehicles < 0) throw SimError("n_vehicles must be >= 0");
  if (cfg.registered_fraction.units() > Fraction::kOne) throw SimError("registered_fraction must be in [0, 1]");
  if (cfg.kwh_min.is_zero()) throw SimError("kwh must be positive");
  if (cfg.kwh_max < cfg.kwh_min) throw SimError("kwh range is empty");
  if (cfg.kwh_max > kMaxSessionKwh) throw SimError("kwh exceeds the per-session cap of 1000");
  if (cfg.tariff.is_zero()) throw SimError("tariff must be positive");
  if (cfg.max_in_flight < 1) throw SimError("max_in_flight must be >= 1");
}

SimConfig sim_config_from_json(const json& j) {
  if (!j.is_object()) throw SimError("sim config must be a JSON object");
  static const std::set<std::string> known = {"seed",    "n_stations",       "n_vehicles", "registered_fraction",
                                              "kwh",     "kwh_distribution", "tariff",     "arrival",
                                              "max_in_flight", "channel",  "data_dir"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw SimError("unknown sim config field '" + it.key() + "'");

  SimConfig cfg;
  try {
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n_stations")) cfg.n_stations = j["n_stations"].get<int>();
    if (j.contains("n_vehicles")) cfg.n_vehicles = j["n_vehicles"].get<int>();
    if (j.contains("max_in_flight")) cfg.max_in_flight = j["max_in_flight"].get<int>();
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw SimError(std::string("sim config: ") + e.what());
  }
  if (j.contains("registered_fraction")) cfg.registered_fraction = decimal_field<Fraction>(j, "registered_fraction");
  if (j.contains("tariff")) cfg.tariff = decimal_field<Rate>(j, "tariff");
  if (j.contains("kwh") && j.contains("kwh_distribution")) throw SimError("give either kwh or kwh_distribution");
  if (j.contains("kwh") || j.contains("kwh_distribution")) {
    const auto& k = j.contains("kwh") ? j["kwh"] : j["kwh_distribution"];
    if (k.is_object() && k.contains("fixed")) {
      cfg.kwh_min = cfg.kwh_max = decimal_field<Kwh>(k, "fixed");
    } else if (k.is_object() && k.contains("uniform") && k["uniform"].is_array() && k["uniform"].size() == 2) {
      json bounds{{"min", k["uniform"][0]}, {"max", k["uniform"][1]}};
      cfg.kwh_min = decimal_field<Kwh>(bounds, "min");
      cfg.kwh_max = decimal_field<Kwh>(bounds, "max");
    } else {
      throw SimError("kwh must be {\"fixed\": x} or {\"uniform\": [lo, hi]}");
    }
  }
  if (j.contains("arrival")) {
    const auto a = j["arrival"].get<std::string>();
    if (a == "sequential")
      cfg.arrival = SimConfig::Arrival::Sequential;
    else if (a == "concurrent")
      cfg.arrival = SimConfig::Arrival::Concurrent;
    else
      throw SimError("arrival must be \"sequential\" or \"concurrent\"");
  }
  if (j.contains("channel")) {
    const auto c = j["channel"].get<std::string>();
    if (c == "loopback")
      cfg.channel = SimConfig::Channel::Loopback;
    else if (c == "memory")
      cfg.channel = SimConfig::Channel::Memory;
    else
      throw SimError("channel must be \"loopback\" or \"memory\"");
  }
  validate(cfg);
  return cfg;
}

ordered_json to_json(const SimConfig& cfg) {
  ordered_json kwh = cfg.kwh_min == cfg.kwh_max
                         ? ordered_json{{"fixed", cfg.kwh_min.to_string()}}
                         : ordered_json{{"uniform", {cfg.kwh_min.to_string(), cfg.kwh_max.to_string()}}};
  return {{"seed", cfg.seed},
          {"n_stations", cfg.n_stations},
          {"n_vehicles", cfg.n_vehicles},
          {"registered_fraction", cfg.registered_fraction.to_string()},
          {"kwh", kwh},
          {"tariff", cfg.tariff.to_string()},
          {"arrival", cfg.arrival == SimConfig::Arrival::Sequential ? "sequential" : "concurrent"},
          {"max_in_flight", cfg.max_in_flight},
          {"channel", cfg.channel == SimConfig::Channel::Loopback ? "loopback" : "memory"}};
}

ordered_json to_json(const FleetReport& r, bool include_runtime) {
  ordered_json per = ordered_json::array();
  for (const auto& s : r.per_station)
    per.push_back({{"station_id", s.station_id},
                   {"sessions_completed", s.completed},
                   {"sessions_denied", s.denied},
                   {"sessions_error", s.error},
                   {"energy_sold", s.energy_sold.to_string()},
                   {"revenue", s.revenue.to_string()}});
  ordered_json j{{"sessions_total", r.sessions_total},
                 {"sessions_completed", r.sessions_completed},
                 {"sessions_denied", r.sessions_denied},
                 {"sessions_error", r.sessions_error},
                 {"vehicles_registered", r.vehicles_registered},
                 {"energy_sold", r.energy_sold.to_string()},
                 {"revenue", r.revenue.to_string()},
                 {"per_station", per}};
  if (include_runtime) {
    const double rate = r.elapsed_seconds > 0 ? static_cast<double>(r.sessions_total) / r.elapsed_seconds : 0.0;
    j["runtime"] = {{"data_dir", r.data_dir.string()},
                    {"transcript_dir", r.transcript_dir.string()},
                    {"elapsed_seconds", r.elapsed_seconds},
                    {"sessions_per_second", rate}};
  }
  return j;
}

FleetReport run_sim(const SimConfig& cfg) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  const Population pop = build_population(cfg);

  FleetReport report;
  report.data_dir = cfg.data_dir.empty() ? fresh_temp_dir() : cfg.data_dir;

  Registry::Options opts;
  opts.ids = std::make_shared<IdSource>(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto registry = std::make_shared<Registry>(report.data_dir, opts);
  for (const auto& s : pop.stations) registry->add_station(s);
  for (const auto& v : pop.vehicles) {
    if (!v.registered) continue;
    registry->register_car(owner_of(v.request), car_of(v.request), pop.stations[v.station]);
    ++report.vehicles_registered;
  }

  auto ids = std::make_shared<IdSource>(cfg.seed + 1);
  std::vector<std::unique_ptr<Station>> stations;
  std::vector<std::jthread> servers;
  try {
    for (const auto& s : pop.stations) {
      StationConfig sc;
      sc.station_id = s.id;
      sc.bind_address = "127.0.0.1";
      sc.port = 0;
      sc.tariff = cfg.tariff;
      sc.data_dir = report.data_dir;
      stations.push_back(std::make_unique<Station>(sc, registry, ids));
    }
  } catch (const std::exception& e) {
    throw SimError(std::string("cannot start stations: ") + e.what());
  }
  report.transcript_dir = stations.front()->transcript_dir();
  if (cfg.channel == SimConfig::Channel::Loopback)
    for (auto& st : stations) servers.emplace_back([&st](std::stop_token stop) { st->serve(stop); });

  std::vector<SessionReport> results(pop.vehicles.size());
  auto run_vehicle = [&](std::size_t i) {
    const auto& v = pop.vehicles[i];
    ChargeIntent intent{v.request, "test.json", v.kwh, "127.0.0.1", stations[v.station]->port()};
    try {
      if (cfg.channel == SimConfig::Channel::Loopback) {
        results[i] = charge(intent);
      } else {
        auto [vehicle_end, station_end] = make_memory_pipe();
        std::jthread server([&, ch = std::move(station_end)] { stations[v.station]->run_session(*ch, "memory"); });
        results[i] = run_client_session(*vehicle_end, intent);
      }
    } catch (const std::exception& e) {
      results[i].outcome = outcome::ProtocolError{e.what()};
    }
  };

  if (cfg.arrival == SimConfig::Arrival::Sequential) {
    for (std::size_t i = 0; i < pop.vehicles.size(); ++i) run_vehicle(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), pop.vehicles.size());
    for (std::size_t w = 0; w < n_workers; ++w)
      workers.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < pop.vehicles.size();) run_vehicle(i);
      });
  }
  servers.clear();  // request stop and join

  std::map<std::string, StationStats> per;
  for (const auto& s : pop.stations) per[s.id].station_id = s.id;
  for (std::size_t i = 0; i < pop.vehicles.size(); ++i) {
    auto& st = per[pop.stations[pop.vehicles[i].station].id];
    const auto& res = results[i];
    ++report.sessions_total;
    const auto kind = outcome_kind(res.outcome);
    if (kind == "completed") {
      ++report.sessions_completed;
      ++st.completed;
      // Vehicle-side view: what the car was billed and paid.
      st.energy_sold += res.bill->kwh;
      st.revenue += res.bill->total;
    } else if (kind == "denied") {
      ++report.sessions_denied;
      ++st.denied;
    } else {
      ++report.sessions_error;
      ++st.error;
    }
  }
  for (auto& [id, st] : per) {
    report.energy_sold += st.energy_sold;
    report.revenue += st.revenue;
    report.per_station.push_back(st);
  }
  report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  spdlog::info("simulation finished: {} sessions, {} completed, {} denied, {} errors in {:.2f}s", report.sessions_total,
               report.sessions_completed, report.sessions_denied, report.sessions_error, report.elapsed_seconds);
  return report;
}

AuditResult verify_ledger(const FleetReport& report, const Registry& registry) {
  AuditResult result;
  auto& out = result.discrepancies;
  const auto ledger = registry.list_transactions();
  std::map<std::string, const TransactionRecord*> by_id;
  for (const auto& t : ledger) by_id[t.id] = &t;

  std::set<std::string> seen;
  std::size_t completed = 0;
  for (const auto& path : list_transcripts(report.transcript_dir)) {
    Transcript t;
    try {
      t = read_transcript(path);
    } catch (const std::exception& e) {
      out.push_back(std::string("unreadable transcript: ") + e.what());
      continue;
    }
    if (t.outcome != "completed") continue;
    ++completed;
    const std::string name = path.filename().string();

    std::optional<msg::Bill> bill;
    std::optional<msg::Receipt> receipt;
    std::optional<msg::Payment> payment;
    for (const auto& m : decoded_frames(t, TranscriptEntry::Dir::Out)) {
      if (auto* b = std::get_if<msg::Bill>(&m)) bill = *b;
      if (auto* r = std::get_if<msg::Receipt>(&m)) receipt = *r;
    }
    for (const auto& m : decoded_frames(t, TranscriptEntry::Dir::In))
      if (auto* p = std::get_if<msg::Payment>(&m)) payment = *p;
    if (!bill || !receipt || !payment) {
      out.push_back("transcript " + name + ": completed session lacks a bill, payment or receipt frame");
      continue;
    }
    if (receipt->transaction_id != t.transaction_id)
      out.push_back("transcript " + name + ": receipt names " + receipt->transaction_id + " but the session ended with " +
                    t.transaction_id);
    seen.insert(receipt->transaction_id);

    auto it = by_id.find(receipt->transaction_id);
    if (it == by_id.end()) {
      out.push_back("transcript " + name + ": transaction " + receipt->transaction_id + " is missing from the ledger");
      continue;
    }
    const auto& tx = *it->second;
    if (tx.kwh != bill->kwh)
      out.push_back("transcript " + name + ": billed " + bill->kwh.to_string() + " kWh but ledger has " + tx.kwh.to_string());
    if (tx.total != bill->total)
      out.push_back("transcript " + name + ": bill total " + bill->total.to_string() + " but ledger total " +
                    tx.total.to_string());
    if (payment->amount != tx.total)
      out.push_back("transcript " + name + ": payment amount " + payment->amount.to_string() + " != ledger total " +
                    tx.total.to_string());
    if (tx.bill_id != bill->bill_id || payment->bill_id != bill->bill_id)
      out.push_back("transcript " + name + ": bill id mismatch between bill, payment and ledger");
    if (tx.station_id != t.station_id)
      out.push_back("transcript " + name + ": ledger station " + tx.station_id + " != session station " + t.station_id);
  }

  Money ledger_revenue;
  Kwh ledger_energy;
  for (const auto& tx : ledger) {
    ledger_revenue += tx.total;
    ledger_energy += tx.kwh;
    if (!seen.count(tx.id)) out.push_back("ledger transaction " + tx.id + " has no matching completed transcript");
  }
  if (ledger_revenue != report.revenue)
    out.push_back("report revenue " + report.revenue.to_string() + " != ledger sum " + ledger_revenue.to_string());
  if (ledger_energy != report.energy_sold)
    out.push_back("report energy " + report.energy_sold.to_string() + " != ledger sum " + ledger_energy.to_string());
  if (completed != report.sessions_completed)
    out.push_back("report counts " + std::to_string(report.sessions_completed) + " completed sessions but " +
                  std::to_string(completed) + " transcripts completed");

  result.passed = out.empty();
  return result;
}

}  // namespace eav
