#include "eav/cli.hpp"

#include <csignal>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "eav/fleetsim.hpp"
#include "eav/regapi.hpp"
#include "eav/registry.hpp"
#include "eav/station.hpp"
#include "eav/vehicle.hpp"

namespace eav {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// A failure that maps to exit code 1, with a machine-readable kind.
struct DomainFailure {
  std::string kind;
  std::string message;
  ordered_json extra = ordered_json::object();
};

struct Globals {
  std::string data_dir = "data";
  bool json = false;
  std::string log_level = "warn";
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainFailure{"io", "cannot read " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw DomainFailure{"parse", path + " is not valid JSON: " + std::string(e.what())};
  }
}

template <class F>
F parse_decimal(const std::string& text, const char* what) {
  try {
    return F::parse(text);
  } catch (const DecimalError&) {
    throw CLI::ValidationError(what, "'" + text + "' is not a non-negative decimal at the supported precision");
  }
}

DomainFailure from_registry_error(const RegistryError& e) {
  DomainFailure f;
  switch (e.kind()) {
    case RegistryError::Kind::KeyConstraintViolation: f.kind = "key_violation"; break;
    case RegistryError::Kind::DuplicateRegistration: f.kind = "duplicate_registration"; break;
    case RegistryError::Kind::ForeignKeyViolation: f.kind = "foreign_key_violation"; break;
    case RegistryError::Kind::InvalidRecord: f.kind = "invalid"; break;
    case RegistryError::Kind::CorruptLog: f.kind = "corrupt_log"; break;
    case RegistryError::Kind::Io: f.kind = "io"; break;
  }
  f.message = e.what();
  if (e.relation()) f.extra["relation"] = to_string(*e.relation());
  if (!e.key().empty()) f.extra["key"] = e.key();
  if (e.kind() == RegistryError::Kind::CorruptLog) f.extra["line"] = e.line();
  for (const auto& i : e.issues()) f.extra["fields"][i.field] = i.message;
  return f;
}

// Blocks SIGINT/SIGTERM for the calling thread (and threads it spawns) and
// invokes on_signal from a watcher thread when one arrives.
class SignalWatcher {
public:
  explicit SignalWatcher(std::function<void()> on_signal) {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
    thread_ = std::jthread([this, fn = std::move(on_signal)](std::stop_token stop) {
      timespec tick{0, 200'000'000};
      while (!stop.stop_requested()) {
        if (sigtimedwait(&set_, nullptr, &tick) > 0) {
          fn();
          return;
        }
      }
    });
  }
  ~SignalWatcher() {
    thread_.request_stop();
    thread_.join();
    pthread_sigmask(SIG_SETMASK, &old_, nullptr);
  }

private:
  sigset_t set_{}, old_{};
  std::jthread thread_;
};

ordered_json report_json(const SessionReport& r) {
  ordered_json j{{"outcome", outcome_kind(r.outcome)}};
  if (auto* e = std::get_if<outcome::ProtocolError>(&r.outcome)) j["detail"] = e->detail;
  if (r.bill)
    j["bill"] = {{"bill_id", r.bill->bill_id},
                 {"kwh", r.bill->kwh.to_string()},
                 {"price_per_kwh", r.bill->price_per_kwh.to_string()},
                 {"total", r.bill->total.to_string()}};
  if (r.receipt_transaction_id) j["receipt_transaction_id"] = *r.receipt_transaction_id;
  return j;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Globals g;
  CLI::App app{"Machine-to-machine EV charging: station, vehicle, registration and fleet tools", "eav"};
  app.require_subcommand(1);
  app.add_option("--data-dir", g.data_dir, "Registry data directory")->envname("EAV_DATA_DIR");
  app.add_flag("--json", g.json, "Machine-readable JSON output");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  // station serve
  auto* station = app.add_subcommand("station", "Charging-station daemon")->require_subcommand(1);
  auto* station_serve = station->add_subcommand("serve", "Serve charging sessions, one at a time");
  std::string station_id, bind_address = "0.0.0.0", tariff_text, archive_dir;
  std::uint16_t station_port = kDefaultStationPort;
  double session_timeout_secs = 30;
  station_serve->add_option("--station-id", station_id, "Registered station id")->required();
  station_serve->add_option("--bind", bind_address, "Static bind address");
  station_serve->add_option("--port", station_port, "Listening port")->envname("EAV_STATION_PORT")->check(CLI::Range(1, 65535));
  station_serve->add_option("--tariff", tariff_text, "Price per kWh")->envname("EAV_TARIFF")->required();
  station_serve->add_option("--archive-dir", archive_dir, "Where received request files are archived");
  station_serve->add_option("--session-timeout-secs", session_timeout_secs, "Idle timeout per session")
      ->check(CLI::PositiveNumber);

  // api serve
  auto* api = app.add_subcommand("api", "Registration HTTP API")->require_subcommand(1);
  auto* api_serve = api->add_subcommand("serve", "Serve the registration API");
  std::uint16_t api_port = kDefaultApiPort;
  std::string api_bind = "0.0.0.0", cors_origin = "*";
  api_serve->add_option("--api-port", api_port, "HTTP port")->check(CLI::Range(1, 65535));
  api_serve->add_option("--bind", api_bind, "Bind address");
  api_serve->add_option("--cors-origin", cors_origin, "Allowed CORS origin for the web form");

  // register
  auto* reg = app.add_subcommand("register", "Register an owner's car at a station");
  std::string reg_file;
  reg->add_option("--file", reg_file, "Registration JSON (flat owner_*/car_*/station_* fields)")->required();

  // vehicle charge
  auto* vehicle = app.add_subcommand("vehicle", "Vehicle client")->require_subcommand(1);
  auto* vehicle_charge = vehicle->add_subcommand("charge", "Charge at a station");
  std::string request_file, host = "127.0.0.1", kwh_text, file_name;
  std::uint16_t vehicle_port = kDefaultStationPort;
  vehicle_charge->add_option("--request", request_file, "Charge request document, e.g. test.json")->required();
  vehicle_charge->add_option("--host", host, "Station address");
  vehicle_charge->add_option("--port", vehicle_port, "Station port")->check(CLI::Range(1, 65535));
  vehicle_charge->add_option("--kwh", kwh_text, "Energy to buy")->required();
  vehicle_charge->add_option("--file-name", file_name, "Name announced to the station (default: request file name)");

  // sim run
  auto* sim = app.add_subcommand("sim", "Fleet simulator")->require_subcommand(1);
  auto* sim_run = sim->add_subcommand("run", "Run a simulation scenario");
  std::string sim_config, sim_out;
  bool sim_verify = false;
  sim_run->add_option("--config", sim_config, "Scenario JSON")->required();
  sim_run->add_option("--out", sim_out, "Write the report here instead of stdout");
  sim_run->add_flag("--verify", sim_verify, "Audit transcripts against the ledger afterwards");

  // store show
  auto* store = app.add_subcommand("store", "Inspect the registry")->require_subcommand(1);
  auto* store_show = store->add_subcommand("show", "Print relations");
  std::string relation = "all", filter_station, filter_owner;
  store_show->add_option("--relation", relation, "owners|cars|stations|registrations|transactions|all")
      ->check(CLI::IsMember({"owners", "cars", "stations", "registrations", "transactions", "all"}));
  store_show->add_option("--station", filter_station, "Filter registrations/transactions by station");
  store_show->add_option("--owner", filter_owner, "Filter cars by owner");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << "Run with --help for usage.\n";
    return kExitUsage;
  }

  auto logger = spdlog::get("eav");
  if (!logger) logger = spdlog::stderr_color_mt("eav");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  auto emit = [&](const ordered_json& j, const std::string& text) {
    if (g.json)
      out << j.dump() << "\n";
    else
      out << text << "\n";
  };

  try {
    if (*station_serve) {
      StationConfig cfg;
      cfg.station_id = station_id;
      cfg.bind_address = bind_address;
      cfg.port = station_port;
      cfg.tariff = parse_decimal<Rate>(tariff_text, "--tariff");
      cfg.data_dir = g.data_dir;
      cfg.archive_dir = archive_dir;
      cfg.session_timeout = std::chrono::milliseconds(static_cast<long long>(session_timeout_secs * 1000));
      auto registry = std::make_shared<Registry>(std::filesystem::path(g.data_dir));
      std::stop_source stop;
      SignalWatcher watcher([&] { stop.request_stop(); });
      Station st(cfg, registry);
      if (spdlog::get_level() > spdlog::level::info)
        err << "station " << cfg.station_id << " listening on " << cfg.bind_address << ":" << st.port() << "\n";
      st.serve(stop.get_token());
      return kExitOk;
    }

    if (*api_serve) {
      auto registry = std::make_shared<Registry>(std::filesystem::path(g.data_dir));
      RegApi server(registry, cors_origin);
      auto port = server.bind(api_bind, api_port);
      SignalWatcher watcher([&] { server.stop(); });
      err << "registration API listening on " << api_bind << ":" << port << "\n";
      server.serve();
      return kExitOk;
    }

    if (*reg) {
      auto parsed = parse_submission(read_json_file(reg_file));
      if (auto* errs = std::get_if<FieldErrors>(&parsed)) {
        DomainFailure f{"invalid", "registration document has invalid fields"};
        for (const auto& [k, v] : *errs) f.extra["fields"][k] = v;
        throw f;
      }
      const auto& s = std::get<RegistrationSubmission>(parsed);
      Registry registry{std::filesystem::path(g.data_dir)};
      const auto before = registry.cardinalities();
      RegistrationRecord r;
      try {
        r = registry.register_car(s.owner, s.car, s.station);
      } catch (const RegistryError& e) {
        throw from_registry_error(e);
      }
      const auto after = registry.cardinalities();
      const auto added = (after.owners - before.owners) + (after.cars - before.cars) +
                         (after.stations - before.stations) + (after.registrations - before.registrations);
      ordered_json j = to_json(r);
      j["tuples_added"] = added;
      emit(j, "registered car " + r.car_id + " of owner " + r.car_owner_id + " at station " + r.station_id + " (" +
                  std::to_string(added) + " tuples added)");
      return kExitOk;
    }

    if (*vehicle_charge) {
      ChargeIntent intent;
      try {
        intent.request = load_charge_request(request_file);
      } catch (const RequestParseError& e) {
        throw DomainFailure{"parse", e.what()};
      } catch (const RequestError& e) {
        DomainFailure f{"invalid", e.what()};
        f.extra["field"] = e.field();
        throw f;
      }
      intent.file_name = file_name.empty() ? std::filesystem::path(request_file).filename().string() : file_name;
      intent.kwh = parse_decimal<Kwh>(kwh_text, "--kwh");
      if (intent.kwh.is_zero()) throw CLI::ValidationError("--kwh", "must be positive");
      intent.station_address = host;
      intent.station_port = vehicle_port;
      SessionReport report;
      try {
        report = charge(intent);
      } catch (const ConnectError& e) {
        throw DomainFailure{"connect", e.what()};
      }
      const auto kind = outcome_kind(report.outcome);
      if (kind == "denied") throw DomainFailure{"denied", "the station denied this vehicle", report_json(report)};
      if (kind != "completed")
        throw DomainFailure{std::string(kind), "session failed: " + describe(report.outcome), report_json(report)};
      emit(report_json(report), "charged " + report.bill->kwh.to_string() + " kWh, paid " + report.bill->total.to_string() +
                                    ", transaction " + *report.receipt_transaction_id);
      return kExitOk;
    }

    if (*sim_run) {
      SimConfig cfg;
      try {
        cfg = sim_config_from_json(read_json_file(sim_config));
      } catch (const SimError& e) {
        throw DomainFailure{"invalid", e.what()};
      }
      FleetReport report;
      try {
        report = run_sim(cfg);
      } catch (const SimError& e) {
        throw DomainFailure{"sim_setup", e.what()};
      }
      ordered_json j = to_json(report, true);
      bool audit_failed = false;
      if (sim_verify) {
        Registry reloaded{report.data_dir};
        auto audit = verify_ledger(report, reloaded);
        j["audit"] = {{"passed", audit.passed}, {"discrepancies", audit.discrepancies}};
        audit_failed = !audit.passed;
      }
      if (!sim_out.empty()) {
        std::ofstream f(sim_out);
        f << j.dump(2) << "\n";
        if (!f) throw DomainFailure{"io", "cannot write " + sim_out};
        if (g.json) out << j.dump() << "\n";
      } else {
        out << (g.json ? j.dump() : j.dump(2)) << "\n";
      }
      if (audit_failed) throw DomainFailure{"audit_failed", "ledger audit found discrepancies", j["audit"]};
      return kExitOk;
    }

    if (*store_show) {
      Registry registry{std::filesystem::path(g.data_dir)};
      ordered_json j = ordered_json::object();
      auto want = [&](const char* r) { return relation == "all" || relation == r; };
      auto arr = [](const auto& records) {
        ordered_json a = ordered_json::array();
        for (const auto& r : records) a.push_back(to_json(r));
        return a;
      };
      auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string_view>(s); };
      if (want("owners")) j["owners"] = arr(registry.list_owners());
      if (want("cars")) j["cars"] = arr(registry.list_cars(opt(filter_owner)));
      if (want("stations")) j["stations"] = arr(registry.list_stations());
      if (want("registrations")) j["registrations"] = arr(registry.list_registrations(opt(filter_station)));
      if (want("transactions")) j["transactions"] = arr(registry.list_transactions(opt(filter_station)));
      out << (g.json ? j.dump() : j.dump(2)) << "\n";
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainFailure& f) {
    if (g.json) {
      ordered_json j{{"error", {{"kind", f.kind}, {"message", f.message}}}};
      for (auto it = f.extra.begin(); it != f.extra.end(); ++it) j["error"][it.key()] = it.value();
      err << j.dump() << "\n";
    } else {
      err << "error (" << f.kind << "): " << f.message << "\n";
    }
    return kExitDomain;
  } catch (const RegistryError& e) {
    auto f = from_registry_error(e);
    if (g.json)
      err << ordered_json{{"error", {{"kind", f.kind}, {"message", f.message}}}}.dump() << "\n";
    else
      err << "error (" << f.kind << "): " << f.message << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    if (g.json)
      err << ordered_json{{"error", {{"kind", "failure"}, {"message", e.what()}}}}.dump() << "\n";
    else
      err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace eav
