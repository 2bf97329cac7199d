#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <spdlog/spdlog.h>
#include <thread>

#include "eav/billing.hpp"
#include "eav/cli.hpp"
#include "eav/fleetsim.hpp"
#include "eav/protocol.hpp"
#include "eav/registry.hpp"
#include "eav/station.hpp"
#include "eav/vehicle.hpp"

namespace py = pybind11;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace eav;

namespace {

py::object decimal_of(const std::string& s) { return py::module_::import("decimal").attr("Decimal")(s); }

template <int S, class T>
py::object to_py(Fixed<S, T> v) {
  return decimal_of(v.to_string());
}

template <class F>
F fixed_from_py(const py::handle& h, const char* what) {
  if (py::isinstance<py::bool_>(h)) throw py::type_error(std::string(what) + " must be a decimal");
  try {
    return F::parse(py::str(h).cast<std::string>());
  } catch (const DecimalError& e) {
    throw py::value_error(std::string(what) + ": " + e.what());
  }
}

py::object json_to_py(const ordered_json& j) {
  switch (j.type()) {
    case json::value_t::null: return py::none();
    case json::value_t::boolean: return py::bool_(j.get<bool>());
    case json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case json::value_t::number_float: return py::float_(j.get<double>());
    case json::value_t::string: return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list l;
      for (const auto& e : j) l.append(json_to_py(e));
      return std::move(l);
    }
    default: {
      py::dict d;
      for (auto it = j.begin(); it != j.end(); ++it) d[py::str(it.key())] = json_to_py(it.value());
      return std::move(d);
    }
  }
}

// Decimal values become JSON numbers through their exact text.
json py_to_json(const py::handle& h) {
  if (h.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(h)) return h.cast<bool>();
  if (py::isinstance<py::int_>(h)) {
    if (py::int_(0).attr("__le__")(h).cast<bool>()) return h.cast<std::uint64_t>();
    return h.cast<std::int64_t>();
  }
  if (py::isinstance<py::float_>(h)) return h.cast<double>();
  if (py::isinstance<py::str>(h)) return h.cast<std::string>();
  if (py::isinstance(h, py::module_::import("decimal").attr("Decimal"))) return json::parse(py::str(h).cast<std::string>());
  if (py::isinstance<py::dict>(h)) {
    json j = json::object();
    for (auto [k, v] : h.cast<py::dict>()) j[py::str(k).cast<std::string>()] = py_to_json(v);
    return j;
  }
  if (py::isinstance<py::list>(h) || py::isinstance<py::tuple>(h)) {
    json j = json::array();
    for (auto v : h) j.push_back(py_to_json(v));
    return j;
  }
  throw py::type_error("unsupported value of type " + py::str(h.get_type()).cast<std::string>());
}

py::dict message_to_py(const Message& m) {
  py::dict d;
  d["type"] = std::string(type_name(m));
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, msg::FileName>) d["name"] = v.name;
        if constexpr (std::is_same_v<T, msg::FileContent>) d["request"] = json_to_py(charge_request_to_json(v.request));
        if constexpr (std::is_same_v<T, msg::AuthOk>) d["station_id"] = v.station_id;
        if constexpr (std::is_same_v<T, msg::AuthDenied> || std::is_same_v<T, msg::Close>) d["reason"] = v.reason;
        if constexpr (std::is_same_v<T, msg::Amount>) d["kwh"] = to_py(v.kwh);
        if constexpr (std::is_same_v<T, msg::Bill>) {
          d["bill_id"] = v.bill_id;
          d["kwh"] = to_py(v.kwh);
          d["price_per_kwh"] = to_py(v.price_per_kwh);
          d["total"] = to_py(v.total);
        }
        if constexpr (std::is_same_v<T, msg::Payment>) {
          d["bill_id"] = v.bill_id;
          d["amount"] = to_py(v.amount);
        }
        if constexpr (std::is_same_v<T, msg::Receipt>) {
          d["transaction_id"] = v.transaction_id;
          d["bill_id"] = v.bill_id;
        }
      },
      m);
  return d;
}

Message message_from_py(const py::dict& d) { return decode_message(py_to_json(d).dump()); }

ChargeRequest request_from_py(const py::dict& d) {
  try {
    return charge_request_from_json(py_to_json(d));
  } catch (const RequestError& e) {
    throw py::value_error(e.what());
  }
}

std::string str_field(const py::dict& d, const char* key) {
  if (!d.contains(key)) return {};
  return py::str(d[key]).cast<std::string>();
}

OwnerRecord owner_from_py(const py::dict& d) {
  return {str_field(d, "id"), str_field(d, "name"), str_field(d, "email"), str_field(d, "phone")};
}

CarRecord car_from_py(const py::dict& d) {
  return {str_field(d, "id"), str_field(d, "model_name"), d.contains("model_year") ? d["model_year"].cast<int>() : 0,
          str_field(d, "date_purchased"), str_field(d, "owner_id")};
}

StationRecord station_from_py(const py::dict& d) { return {str_field(d, "id"), str_field(d, "name"), str_field(d, "address")}; }

template <class T>
py::list rows(const std::vector<T>& v) {
  py::list l;
  for (const auto& r : v) l.append(json_to_py(to_json(r)));
  return l;
}

py::dict report_to_py(const SessionReport& r) {
  py::dict d;
  d["outcome"] = std::string(outcome_kind(r.outcome));
  d["detail"] = describe(r.outcome);
  d["bill"] = r.bill ? py::object(message_to_py(*r.bill)) : py::none();
  d["receipt_transaction_id"] = r.receipt_transaction_id ? py::object(py::str(*r.receipt_transaction_id)) : py::none();
  py::list frames;
  for (const auto& e : r.transcript)
    frames.append(py::make_tuple(e.dir == TranscriptEntry::Dir::In ? "in" : "out", e.frame));
  d["transcript"] = frames;
  return d;
}

// A station serving on a background thread for the lifetime of the object.
class PyStation {
public:
  PyStation(std::shared_ptr<Registry> registry, std::string station_id, const py::handle& tariff,
            std::filesystem::path data_dir, std::string bind, std::uint16_t port, double session_timeout) {
    StationConfig cfg;
    cfg.station_id = std::move(station_id);
    cfg.tariff = fixed_from_py<Rate>(tariff, "tariff");
    cfg.data_dir = std::move(data_dir);
    cfg.bind_address = std::move(bind);
    cfg.port = port;
    cfg.session_timeout = std::chrono::milliseconds(static_cast<long long>(session_timeout * 1000));
    station_ = std::make_unique<Station>(cfg, std::move(registry));
  }
  ~PyStation() { stop(); }

  std::uint16_t port() const { return station_->port(); }
  std::filesystem::path transcript_dir() const { return station_->transcript_dir(); }

  void start() {
    if (thread_.joinable()) return;
    thread_ = std::jthread([this](std::stop_token st) { station_->serve(st); });
  }
  void stop() {
    if (!thread_.joinable()) return;
    py::gil_scoped_release release;
    thread_.request_stop();
    thread_.join();
  }

private:
  std::unique_ptr<Station> station_;
  std::jthread thread_;
};

PYBIND11_CONSTINIT py::gil_safe_call_once_and_store<py::object> g_registry_error;
PYBIND11_CONSTINIT py::gil_safe_call_once_and_store<py::object> g_codec_error;

}  // namespace

PYBIND11_MODULE(_eav, m) {
  m.doc() = "Inno-EAV charging protocol, registry, station and fleet simulator";

  g_registry_error.call_once_and_store_result(
      [&] { return py::object(py::exception<RegistryError>(m, "RegistryError", PyExc_ValueError)); });
  g_codec_error.call_once_and_store_result(
      [&] { return py::object(py::exception<CodecError>(m, "CodecError", PyExc_ValueError)); });
  py::register_exception<StationError>(m, "StationError", PyExc_RuntimeError);
  py::register_exception<TransportError>(m, "TransportError", PyExc_OSError);
  py::register_exception<SimError>(m, "SimError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const RegistryError& e) {
      py::object type = g_registry_error.get_stored();
      py::object inst = type(e.what());
      inst.attr("kind") = std::string(to_string(e.kind()));
      inst.attr("relation") = e.relation() ? py::object(py::str(std::string(to_string(*e.relation())))) : py::none();
      inst.attr("key") = e.key();
      inst.attr("line") = e.line();
      py::dict fields;
      for (const auto& i : e.issues()) fields[py::str(i.field)] = i.message;
      inst.attr("fields") = fields;
      PyErr_SetObject(type.ptr(), inst.ptr());
    } catch (const CodecError& e) {
      py::object type = g_codec_error.get_stored();
      py::object inst = type(e.what());
      inst.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(type.ptr(), inst.ptr());
    }
  });

  m.attr("MAX_FRAME_BYTES") = kMaxFrameBytes;

  spdlog::set_level(spdlog::level::warn);
  m.def(
      "set_log_level", [](const std::string& level) { spdlog::set_level(spdlog::level::from_str(level)); },
      py::arg("level"), "trace, debug, info, warn, error or off. Defaults to warn.");

  m.def("encode_message", [](const py::dict& d) { return py::bytes(encode_message(message_from_py(d))); },
        py::arg("message"), "Canonical wire frame (bytes, newline-terminated) for a message dict.");
  m.def(
      "decode_message",
      [](const py::object& line) {
        std::string s = py::isinstance<py::bytes>(line) ? line.cast<std::string>() : py::str(line).cast<std::string>();
        return message_to_py(decode_message(s));
      },
      py::arg("line"), "Parses one frame into a message dict; decimals become decimal.Decimal.");
  m.def(
      "price", [](const py::handle& kwh, const py::handle& rate) {
        return to_py(price(fixed_from_py<Kwh>(kwh, "kwh"), fixed_from_py<Rate>(rate, "rate")));
      },
      py::arg("kwh"), py::arg("rate"));
  m.def(
      "make_bill",
      [](const py::handle& kwh, const py::handle& tariff) {
        IdSource ids;
        try {
          return message_to_py(make_bill(fixed_from_py<Kwh>(kwh, "kwh"), fixed_from_py<Rate>(tariff, "tariff"),
                                         [&] { return ids.next(); }));
        } catch (const InvalidAmount& e) {
          throw py::value_error(e.what());
        }
      },
      py::arg("kwh"), py::arg("tariff"));

  py::class_<Registry, std::shared_ptr<Registry>>(m, "Registry")
      .def(py::init([](std::optional<std::filesystem::path> data_dir) {
             return data_dir ? std::make_shared<Registry>(*data_dir) : std::make_shared<Registry>();
           }),
           py::arg("data_dir") = py::none(), "In-memory store, or the event log under data_dir.")
      .def(
          "register_car",
          [](Registry& r, const py::dict& owner, const py::dict& car, const py::dict& station) {
            return json_to_py(to_json(r.register_car(owner_from_py(owner), car_from_py(car), station_from_py(station))));
          },
          py::arg("owner"), py::arg("car"), py::arg("station"))
      .def(
          "register_request",
          [](Registry& r, const py::dict& request, const py::dict& station) {
            auto req = request_from_py(request);
            return json_to_py(to_json(r.register_car(owner_of(req), car_of(req), station_from_py(station))));
          },
          py::arg("request"), py::arg("station"), "Registers the owner and car described by a charge request.")
      .def("add_station", [](Registry& r, const py::dict& s) { r.add_station(station_from_py(s)); })
      .def(
          "authorize",
          [](const Registry& r, const std::string& station_id, const py::dict& request) {
            auto d = r.authorize(station_id, request_from_py(request));
            py::dict out;
            out["granted"] = d.granted;
            out["reason"] = d.granted ? py::object(py::none()) : py::object(py::str(std::string(to_string(d.reason))));
            out["detail"] = d.detail;
            return out;
          },
          py::arg("station_id"), py::arg("request"))
      .def("owners", [](const Registry& r) { return rows(r.list_owners()); })
      .def(
          "cars", [](const Registry& r, std::optional<std::string> owner) { return rows(r.list_cars(owner)); },
          py::arg("owner_id") = py::none())
      .def("stations", [](const Registry& r) { return rows(r.list_stations()); })
      .def(
          "registrations",
          [](const Registry& r, std::optional<std::string> station) { return rows(r.list_registrations(station)); },
          py::arg("station_id") = py::none())
      .def(
          "transactions",
          [](const Registry& r, std::optional<std::string> station) { return rows(r.list_transactions(station)); },
          py::arg("station_id") = py::none())
      .def("cardinalities", [](const Registry& r) {
        auto c = r.cardinalities();
        py::dict d;
        d["owners"] = c.owners;
        d["cars"] = c.cars;
        d["stations"] = c.stations;
        d["registrations"] = c.registrations;
        d["transactions"] = c.transactions;
        return d;
      });

  py::class_<PyStation>(m, "Station")
      .def(py::init<std::shared_ptr<Registry>, std::string, const py::handle&, std::filesystem::path, std::string,
                    std::uint16_t, double>(),
           py::arg("registry"), py::arg("station_id"), py::arg("tariff"), py::arg("data_dir"),
           py::arg("bind") = "127.0.0.1", py::arg("port") = 0, py::arg("session_timeout") = 30.0)
      .def_property_readonly("port", &PyStation::port)
      .def_property_readonly("transcript_dir", &PyStation::transcript_dir)
      .def("start", &PyStation::start)
      .def("stop", &PyStation::stop)
      .def("__enter__", [](PyStation& s) -> PyStation& {
        s.start();
        return s;
      }, py::return_value_policy::reference)
      .def("__exit__", [](PyStation& s, const py::args&) { s.stop(); });

  m.def(
      "charge",
      [](const py::dict& request, const py::handle& kwh, const std::string& host, std::uint16_t port,
         const std::string& file_name, double timeout) {
        ChargeIntent intent;
        intent.request = request_from_py(request);
        intent.kwh = fixed_from_py<Kwh>(kwh, "kwh");
        intent.station_address = host;
        intent.station_port = port;
        intent.file_name = file_name;
        const auto ms = std::chrono::milliseconds(static_cast<long long>(timeout * 1000));
        SessionReport report;
        {
          py::gil_scoped_release release;
          report = charge(intent, {ms, ms});
        }
        return report_to_py(report);
      },
      py::arg("request"), py::arg("kwh"), py::arg("host") = "127.0.0.1", py::arg("port") = kDefaultStationPort,
      py::arg("file_name") = "test.json", py::arg("timeout") = 30.0, "Runs one charging session against a station.");

  py::class_<FleetReport>(m, "FleetReport")
      .def("to_dict", [](const FleetReport& r, bool runtime) { return json_to_py(to_json(r, runtime)); },
           py::arg("include_runtime") = false)
      .def("to_json", [](const FleetReport& r) { return to_json(r).dump(); }, "Canonical report text.")
      .def_readonly("data_dir", &FleetReport::data_dir)
      .def_readonly("transcript_dir", &FleetReport::transcript_dir)
      .def_readonly("sessions_completed", &FleetReport::sessions_completed)
      .def_readonly("sessions_denied", &FleetReport::sessions_denied)
      .def_readonly("sessions_error", &FleetReport::sessions_error)
      .def_property_readonly("revenue", [](const FleetReport& r) { return to_py(r.revenue); })
      .def_property_readonly("energy_sold", [](const FleetReport& r) { return to_py(r.energy_sold); });

  m.def(
      "run_sim",
      [](const py::dict& config) {
        SimConfig cfg = sim_config_from_json(py_to_json(config));
        py::gil_scoped_release release;
        return run_sim(cfg);
      },
      py::arg("config"), "Runs a fleet simulation; config uses the scenario JSON keys.");
  m.def(
      "verify_ledger",
      [](const FleetReport& report, const Registry& registry) {
        auto a = verify_ledger(report, registry);
        py::dict d;
        d["passed"] = a.passed;
        d["discrepancies"] = a.discrepancies;
        return d;
      },
      py::arg("report"), py::arg("registry"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "eav");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the eav command line in-process; returns (exit_code, stdout, stderr).");
}
