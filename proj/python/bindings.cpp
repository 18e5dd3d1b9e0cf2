#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oncache/sim.hpp"

namespace py = pybind11;
using namespace oncache;

namespace {

Bytes to_bytes(py::bytes b) {
  const std::string s = b;
  return Bytes(s.begin(), s.end());
}

FiveTuple tuple_of(const std::string& src, const std::string& dst,
                   std::uint16_t sport, std::uint16_t dport,
                   std::uint8_t proto) {
  return {Ipv4Addr::parse(src), Ipv4Addr::parse(dst), sport, dport, proto};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "User-space overlay cache with a fallback overlay and simulator";

  py::register_exception<ScenarioError>(m, "ScenarioError", PyExc_ValueError);

  m.def("ipv4_header_checksum",
        [](py::bytes header) { return ipv4_header_checksum(to_bytes(header)); },
        py::arg("header"));
  m.def("flow_hash",
        [](const std::string& src, const std::string& dst, std::uint16_t sport,
           std::uint16_t dport, std::uint8_t proto) {
          return flow_hash(tuple_of(src, dst, sport, dport, proto));
        },
        py::arg("src"), py::arg("dst"), py::arg("sport"), py::arg("dport"),
        py::arg("proto"));
  m.def("outer_udp_source_port",
        [](const std::string& src, const std::string& dst, std::uint16_t sport,
           std::uint16_t dport, std::uint8_t proto) {
          return outer_udp_source_port(tuple_of(src, dst, sport, dport, proto));
        },
        py::arg("src"), py::arg("dst"), py::arg("sport"), py::arg("dport"),
        py::arg("proto"));

  py::class_<Scenario>(m, "Scenario")
      .def_property_readonly("mode", [](const Scenario& s) { return mode_name(s.mode); })
      .def_readwrite("rpeer", &Scenario::rpeer)
      .def_readwrite("seed", &Scenario::seed)
      .def_property_readonly("hosts", [](const Scenario& s) {
        std::vector<std::string> out;
        for (const HostSpec& h : s.hosts) out.push_back(h.name);
        return out;
      })
      .def_property_readonly("containers", [](const Scenario& s) {
        std::vector<std::string> out;
        for (const ContainerSpec& c : s.containers) out.push_back(c.name);
        return out;
      })
      .def_property_readonly("flows", [](const Scenario& s) {
        std::vector<std::string> out;
        for (const FlowSpec& f : s.flows) out.push_back(f.name);
        return out;
      })
      .def("set_mode", [](Scenario& s, const std::string& m) { s.mode = parse_mode(m); })
      .def("set_cache_size", [](Scenario& s, std::size_t n) { s.cache_size = n; });

  m.def("parse_scenario", &parse_scenario_text, py::arg("text"));
  m.def("load_scenario", &load_scenario_file, py::arg("path"));
  m.def("run_scenario_json",
        [](const Scenario& s, std::uint64_t seed) {
          return format_machine_report(run_scenario(s, seed));
        },
        py::arg("scenario"), py::arg("seed"));
  m.def("run_scenario_text",
        [](const Scenario& s, std::uint64_t seed) {
          return format_text_report(run_scenario(s, seed));
        },
        py::arg("scenario"), py::arg("seed"));

  py::class_<Simulator>(m, "Simulator")
      .def(py::init<const Scenario&>(), py::arg("scenario"))
      .def("step",
           [](Simulator& s) {
             std::vector<std::pair<std::uint64_t, std::string>> out;
             for (const ObservedEvent& e : s.step()) out.emplace_back(e.tick, e.what);
             return out;
           })
      .def("pending", &Simulator::pending)
      .def("next_tick", &Simulator::next_tick)
      .def_property_readonly("now", &Simulator::now)
      .def("run_json", [](Simulator& s) { return format_machine_report(s.run()); })
      .def("report_json", [](const Simulator& s) { return format_machine_report(s.report()); })
      .def("schedule_send", &Simulator::schedule_send, py::arg("tick"),
           py::arg("flow"), py::arg("packets") = 1)
      .def("delivered_payloads", &Simulator::delivered_payloads, py::arg("flow"),
           py::arg("direction"))
      .def("dump_caches", [](Simulator& s, const std::string& host) {
        Host* h = s.cluster().host(host);
        if (!h) throw py::key_error(host);
        return dump_caches(h->caches);
      });
}
