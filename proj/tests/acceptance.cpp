// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <thread>

#include <spdlog/spdlog.h>

#include "eav/fleetsim.hpp"
#include "eav/registry.hpp"
#include "eav/session.hpp"
#include "eav/station.hpp"
#include "eav/vehicle.hpp"
#include "generators.hpp"
#include "reference_store.hpp"
#include "support.hpp"

using namespace eav;
using namespace eav::testing;
using namespace std::chrono_literals;
using Steady = std::chrono::steady_clock;

namespace {

struct Failure {
  std::string why;
};

void require(bool ok, const std::string& why) {
  if (!ok) throw Failure{why};
}

double seconds_since(Steady::time_point t0) { return std::chrono::duration<double>(Steady::now() - t0).count(); }

// Data directories whose reload is checked at the end, with the snapshot
// taken from the live registry.
std::vector<std::pair<std::filesystem::path, RegistrySnapshot>> g_replay;

struct Live {
  TempDir dir;
  std::shared_ptr<Registry> registry = std::make_shared<Registry>(dir.path());
  std::unique_ptr<Station> station;

  Live() {
    register_request(*registry, sample_request(), sample_station());
    StationConfig cfg;
    cfg.station_id = "s1";
    cfg.bind_address = "127.0.0.1";
    cfg.port = 0;
    cfg.tariff = Rate::parse("0.10");
    cfg.data_dir = dir.path();
    station = std::make_unique<Station>(cfg, registry);
  }
  ChargeIntent intent(const ChargeRequest& r, const char* kwh) const {
    ChargeIntent i;
    i.request = r;
    i.kwh = Kwh::parse(kwh);
    i.station_port = station->port();
    return i;
  }
};

std::string happy_path() {
  auto t0 = Steady::now();
  Live live;
  std::jthread server([&](std::stop_token st) { live.station->serve(st); });
  auto report = charge(live.intent(sample_request(), "10"));
  server.request_stop();
  server.join();
  const double secs = seconds_since(t0);
  require(std::holds_alternative<outcome::Completed>(report.outcome), "outcome " + describe(report.outcome));
  auto txs = live.registry->list_transactions();
  require(txs.size() == 1, std::to_string(txs.size()) + " transactions recorded");
  require(txs[0].total == Money::from_units(100), "total " + txs[0].total.to_string());
  require(report.receipt_transaction_id == txs[0].id, "receipt id differs from ledger id");
  require(secs < 2.0, "took " + std::to_string(secs) + " s");
  g_replay.emplace_back(live.dir.path(), live.registry->snapshot());
  // Keep the directory alive for the replay check.
  auto keep = std::filesystem::temp_directory_path() / ("eav-accept-happy-" + std::to_string(::getpid()));
  std::filesystem::copy(live.dir.path(), keep, std::filesystem::copy_options::recursive);
  g_replay.back().first = keep;
  char buf[64];
  std::snprintf(buf, sizeof buf, "total %s in %.3f s", txs[0].total.to_string().c_str(), secs);
  return buf;
}

std::string denial_path() {
  auto t0 = Steady::now();
  Live live;
  std::jthread server([&](std::stop_token st) { live.station->serve(st); });
  auto denied = charge(live.intent(sample_request("o-stranger", "c-stranger"), "10"));
  const auto after_denial = live.registry->cardinalities().transactions;
  auto ok = charge(live.intent(sample_request(), "10"));
  server.request_stop();
  server.join();
  const double secs = seconds_since(t0);
  require(denied.outcome == SessionOutcome{outcome::DeniedUnregistered{}}, "first outcome " + describe(denied.outcome));
  std::vector<std::string> types;
  for (const auto& e : denied.transcript)
    if (e.dir == TranscriptEntry::Dir::In) types.emplace_back(type_name(decode_message(e.frame)));
  require(types == std::vector<std::string>{"auth_denied", "close"}, "station frames were not auth_denied, close");
  require(after_denial == 0, "denied session recorded a transaction");
  require(std::holds_alternative<outcome::Completed>(ok.outcome), "follow-up outcome " + describe(ok.outcome));
  require(live.registry->list_transactions().size() == 1, "expected exactly one transaction");
  require(secs < 2.0, "took " + std::to_string(secs) + " s");
  char buf[64];
  std::snprintf(buf, sizeof buf, "denied then completed in %.3f s", secs);
  return buf;
}

std::string detail_mismatch() {
  Registry reg;
  auto req = sample_request();
  register_request(reg, req, sample_station());
  auto altered = req;
  altered.car_model_year += 1;
  auto d = reg.authorize("s1", altered);
  require(!d.granted && d.reason == DenialReason::DetailMismatch, "altered model year was not a detail mismatch");
  altered.car_model_year -= 1;
  require(reg.authorize("s1", altered).granted, "restored request was not granted");
  // The same decision drives the wire protocol.
  int n = 0;
  ServerContext ctx{"s1", Rate::parse("0.10"), [&](const ChargeRequest& r) { return reg.authorize("s1", r); },
                    [&] { return "id-" + std::to_string(++n); }};
  auto bad = req;
  bad.car_model_name = "Other";
  auto step = server_step(server::AwaitFileContent{}, msg::FileContent{bad}, ctx);
  require(!step.out.empty() && step.out[0] == Message{msg::AuthDenied{"detail-mismatch"}}, "wire denial reason");
  return "denied detail-mismatch, granted after restore";
}

std::string registration_property() {
  auto t0 = Steady::now();
  constexpr int kSequences = 1000;
  std::size_t ops = 0;
  for (std::uint64_t seed = 1; seed <= kSequences; ++seed) {
    Registry::Options opts;
    opts.sync = false;
    Registry reg(opts);
    ReferenceStore ref;
    OpGenerator gen(seed);
    auto err = check_sequence(reg, ref, gen, 24);
    require(err.empty(), "seed " + std::to_string(seed) + ": " + err);
    ops += 24;
  }
  const double secs = seconds_since(t0);
  require(secs < 30.0, "took " + std::to_string(secs) + " s");
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d sequences, %zu operations in %.2f s", kSequences, ops, secs);
  return buf;
}

std::string four_tuple() {
  Registry reg;
  auto c0 = reg.cardinalities();
  auto req = sample_request();
  register_request(reg, req, sample_station());
  auto c1 = reg.cardinalities();
  require(c1.owners - c0.owners == 1 && c1.cars - c0.cars == 1 && c1.stations - c0.stations == 1 &&
              c1.registrations - c0.registrations == 1,
          "fresh registration did not add (1,1,1,1)");
  bool duplicate = false;
  try {
    register_request(reg, req, sample_station());
  } catch (const RegistryError& e) {
    duplicate = e.kind() == RegistryError::Kind::DuplicateRegistration;
  }
  require(duplicate, "re-registration did not raise DuplicateRegistration");
  require(reg.cardinalities() == c1, "re-registration changed cardinalities");
  return "(1,1,1,1) then (0,0,0,0) with DuplicateRegistration";
}

std::string codec_and_fsm() {
  std::mt19937_64 rng(424242);
  constexpr int kMessages = 10000;
  for (int i = 0; i < kMessages; ++i) {
    auto m = random_message(rng);
    auto line = encode_message(m);
    require(decode_message(line) == m, "round trip failed for " + line);
  }

  // Totality: every (state, message kind) pair yields a state without
  // throwing; unexpected pairs end in a protocol error.
  msg::Bill bill{"b1", Kwh::parse("10"), Rate::parse("0.10"), Money::parse("1.00")};
  const std::vector<Message> msgs{msg::FileName{"test.json"}, msg::FileContent{sample_request()}, msg::AuthOk{"s1"},
                                  msg::AuthDenied{"not-registered"}, msg::AmountRequest{}, msg::Amount{Kwh::parse("10")},
                                  bill, msg::Payment{"b1", Money::parse("1.00")}, msg::Receipt{"t1", "b1"},
                                  msg::Close{"completed"}};
  int n = 0;
  ServerContext ctx{"s1", Rate::parse("0.10"), [](const ChargeRequest&) { return AuthDecision::grant(); },
                    [&] { return "id-" + std::to_string(++n); }};
  const std::vector<ServerState> sstates{server::AwaitFileName{}, server::AwaitFileContent{},
                                         server::AwaitAmount{sample_request()}, server::AwaitPayment{sample_request(), bill},
                                         server::Closed{outcome::DeniedUnregistered{}}};
  const std::map<std::size_t, std::size_t> server_accepts{{0, 0}, {1, 1}, {2, 5}, {3, 7}};
  std::size_t pairs = 0;
  for (std::size_t si = 0; si < sstates.size(); ++si)
    for (std::size_t mi = 0; mi < msgs.size(); ++mi) {
      ++pairs;
      ServerStep st;
      try {
        st = server_step(sstates[si], msgs[mi], ctx);
      } catch (const std::exception& e) {
        throw Failure{"server_step threw: " + std::string(e.what())};
      }
      if (si == 4) {
        require(st.state == sstates[si] && st.out.empty(), "closed server state did not absorb input");
        continue;
      }
      const auto* closed = std::get_if<server::Closed>(&st.state);
      const bool perr = closed && std::holds_alternative<outcome::ProtocolError>(closed->outcome);
      require(perr == (server_accepts.at(si) != mi), "server pair (" + std::to_string(si) + "," + std::to_string(mi) + ")");
    }

  ChargeIntent intent;
  intent.request = sample_request();
  intent.kwh = Kwh::parse("10");
  const std::vector<ClientState> cstates{client::SendFileName{},       client::SendFileContent{}, client::AwaitAuth{},
                                         client::AwaitAmountRequest{}, client::AwaitBill{},       client::SendPayment{bill},
                                         client::AwaitReceipt{bill},   client::Done{outcome::Completed{"t0"}}};
  const std::map<std::size_t, std::set<std::size_t>> client_accepts{{2, {2, 3, 9}}, {3, {4, 9}}, {4, {6, 9}}, {6, {8, 9}}};
  for (std::size_t si = 0; si < cstates.size(); ++si) {
    std::vector<std::optional<Message>> inputs{std::nullopt};
    for (const auto& m : msgs) inputs.emplace_back(m);
    for (const auto& in : inputs) {
      ++pairs;
      ClientStep st;
      try {
        st = client_step(cstates[si], in, intent);
      } catch (const std::exception& e) {
        throw Failure{"client_step threw: " + std::string(e.what())};
      }
      if (si == 7) {
        require(st.state == cstates[si] && st.out.empty(), "done client state did not absorb input");
        continue;
      }
      const bool ok = client_speaks(cstates[si]) ? !in : (in && client_accepts.at(si).count(in->index()));
      const auto* done = std::get_if<client::Done>(&st.state);
      const bool perr = done && std::holds_alternative<outcome::ProtocolError>(done->outcome);
      const bool close_input = in && in->index() == 9;
      if (!ok) require(perr, "client pair (" + std::to_string(si) + ") accepted an unexpected input");
      if (ok && !close_input) require(!perr, "client pair (" + std::to_string(si) + ") rejected a valid input");
    }
  }

  auto conv = converse(intent, ctx);
  std::vector<std::string_view> order;
  for (const auto& f : conv.frames) order.push_back(type_name(f));
  const std::vector<std::string_view> six_steps{"file_name", "file_content", "auth_ok", "amount_request", "amount",
                                                "bill",      "payment",      "receipt", "close"};
  require(order == six_steps, "composed transcript order differs");
  require(std::holds_alternative<outcome::Completed>(conv.client_outcome) && conv.client_outcome == conv.server_outcome,
          "composed outcome not completed on both sides");
  return std::to_string(kMessages) + " round trips, " + std::to_string(pairs) + " state/input pairs, six-step order";
}

struct FleetRun {
  TempDir a, b;
  FleetReport first;
  std::shared_ptr<Registry> registry;
};
std::unique_ptr<FleetRun> g_fleet;

SimConfig fleet_config(const std::filesystem::path& dir) {
  SimConfig cfg;
  cfg.seed = 42;
  cfg.n_stations = 4;
  cfg.n_vehicles = 100;
  cfg.registered_fraction = Fraction::parse("0.8");
  cfg.kwh_min = cfg.kwh_max = Kwh::parse("5");
  cfg.tariff = Rate::parse("0.10");
  cfg.data_dir = dir;
  return cfg;
}

std::string fleet_conservation() {
  auto t0 = Steady::now();
  g_fleet = std::make_unique<FleetRun>();
  g_fleet->first = run_sim(fleet_config(g_fleet->a.path()));
  auto second = run_sim(fleet_config(g_fleet->b.path()));
  const double secs = seconds_since(t0);
  const auto& r = g_fleet->first;
  require(r.sessions_total == 100, "sessions_total " + std::to_string(r.sessions_total));
  require(r.sessions_completed == 80, "completed " + std::to_string(r.sessions_completed));
  require(r.sessions_denied == 20, "denied " + std::to_string(r.sessions_denied));
  require(r.sessions_error == 0, "errors " + std::to_string(r.sessions_error));
  require(r.energy_sold.to_string() == "400.000", "energy " + r.energy_sold.to_string());
  require(r.revenue.to_string() == "40.00", "revenue " + r.revenue.to_string());
  require(to_json(r).dump() == to_json(second).dump(), "reports differ between runs");
  require(secs < 60.0, "took " + std::to_string(secs) + " s");
  g_fleet->registry = std::make_shared<Registry>(r.data_dir);
  g_replay.emplace_back(r.data_dir, g_fleet->registry->snapshot());
  char buf[128];
  std::snprintf(buf, sizeof buf, "80/20, %s kWh, %s, identical reports, %.2f s for two runs", r.energy_sold.to_string().c_str(),
                r.revenue.to_string().c_str(), secs);
  return buf;
}

std::vector<std::string> read_all(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_all(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

std::string ledger_audit() {
  require(g_fleet != nullptr, "fleet run unavailable");
  const auto& report = g_fleet->first;
  auto clean = verify_ledger(report, *g_fleet->registry);
  require(clean.passed, "untampered run failed: " + (clean.discrepancies.empty() ? "" : clean.discrepancies[0]));

  // Single-event deletion, on a copy of the data directory.
  TempDir tampered;
  std::filesystem::copy(report.data_dir, tampered.path(), std::filesystem::copy_options::recursive);
  auto log = tampered / "events.jsonl";
  auto lines = read_all(log);
  auto it = std::find_if(lines.begin(), lines.end(), [](auto& l) { return l.find("transaction_recorded") != std::string::npos; });
  require(it != lines.end(), "no transaction event to delete");
  lines.erase(it);
  write_all(log, lines);
  FleetReport moved = report;
  moved.data_dir = tampered.path();
  moved.transcript_dir = tampered / "transcripts";
  auto after_delete = verify_ledger(moved, Registry(tampered.path()));
  require(!after_delete.passed && !after_delete.discrepancies.empty(), "deletion not detected");

  // Single-transcript payment mutation, on a second copy.
  TempDir mutated;
  std::filesystem::copy(report.data_dir, mutated.path(), std::filesystem::copy_options::recursive);
  bool changed = false;
  for (const auto& p : list_transcripts(mutated / "transcripts")) {
    if (read_transcript(p).outcome != "completed") continue;
    auto tl = read_all(p);
    for (auto& l : tl) {
      auto j = nlohmann::json::parse(l);
      if (j["dir"] != "in") continue;
      auto m = decode_message(j["frame"].get<std::string>());
      if (auto* pay = std::get_if<msg::Payment>(&m)) {
        pay->amount = Money::from_units(pay->amount.units() + 5);
        auto f = encode_message(*pay);
        j["frame"] = f.substr(0, f.size() - 1);
        l = j.dump();
        changed = true;
      }
    }
    write_all(p, tl);
    break;
  }
  require(changed, "no payment frame to mutate");
  moved.data_dir = mutated.path();
  moved.transcript_dir = mutated / "transcripts";
  auto after_mutation = verify_ledger(moved, Registry(mutated.path()));
  require(!after_mutation.passed && !after_mutation.discrepancies.empty(), "payment mutation not detected");
  return "clean pass; deletion -> \"" + after_delete.discrepancies[0] + "\"; mutation -> \"" +
         after_mutation.discrepancies[0] + "\"";
}

std::string persistence_replay() {
  require(!g_replay.empty(), "no data directories to replay");
  std::size_t tuples = 0;
  for (const auto& [dir, snap] : g_replay) {
    Registry reloaded(dir);
    require(reloaded.snapshot() == snap, "reload of " + dir.string() + " differs");
    auto c = reloaded.cardinalities();
    tuples += c.owners + c.cars + c.stations + c.registrations + c.transactions;
  }
  for (const auto& [dir, snap] : g_replay)
    if (dir.filename().string().rfind("eav-accept-happy-", 0) == 0) std::filesystem::remove_all(dir);
  return std::to_string(g_replay.size()) + " data directories, " + std::to_string(tuples) + " tuples identical";
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<const char*, std::function<std::string()>>> criteria{
      {"end-to-end happy path", happy_path},
      {"denial path", denial_path},
      {"detail-mismatch authorization", detail_mismatch},
      {"registration constraints property", registration_property},
      {"four-tuple registration", four_tuple},
      {"codec and session machine properties", codec_and_fsm},
      {"fleet conservation", fleet_conservation},
      {"ledger audit", ledger_audit},
      {"persistence replay", persistence_replay},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    try {
      std::printf("PASS  %-40s %s\n", name, fn().c_str());
    } catch (const Failure& f) {
      ++failed;
      std::printf("FAIL  %-40s %s\n", name, f.why.c_str());
    } catch (const std::exception& e) {
      ++failed;
      std::printf("FAIL  %-40s exception: %s\n", name, e.what());
    }
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
