#include "oncache/scenario.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace oncache {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string f;
  while (in >> f) out.push_back(f);
  return out;
}

std::uint64_t parse_uint(const std::string& s, int line, const char* what,
                         std::uint64_t max = UINT64_MAX) {
  // Decimal, or hex with a 0x prefix.
  const bool hex = s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X');
  const char* first = s.data() + (hex ? 2 : 0);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(first, s.data() + s.size(), v, hex ? 16 : 10);
  if (ec != std::errc{} || p != s.data() + s.size() || v > max) {
    throw ScenarioError(line, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, int line, const char* what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ScenarioError(line, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

template <typename F>
auto wrap(int line, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::exception& e) {
    throw ScenarioError(line, e.what());
  }
}

bool parse_bool(const std::string& s, int line) {
  if (s == "on" || s == "1" || s == "true" || s == "yes") return true;
  if (s == "off" || s == "0" || s == "false" || s == "no") return false;
  throw ScenarioError(line, "bad boolean '" + s + "'");
}

std::uint8_t parse_protocol(const std::string& s, int line) {
  if (s == "tcp") return kIpProtoTcp;
  if (s == "udp") return kIpProtoUdp;
  if (s == "icmp") return kIpProtoIcmp;
  throw ScenarioError(line, "unknown protocol '" + s + "'");
}

void need(const std::vector<std::string>& f, std::size_t n, int line,
          const char* what) {
  if (f.size() < n) {
    throw ScenarioError(line, std::string(what) + " needs at least " +
                                  std::to_string(n) + " fields, got " +
                                  std::to_string(f.size()));
  }
}

void parse_config(const std::vector<std::string>& f, int line, Scenario& s) {
  need(f, 2, line, "config entry");
  const std::string& key = f[0];
  if (key == "mode") {
    s.mode = wrap(line, [&] { return parse_mode(f[1]); });
  } else if (key == "rpeer") {
    s.rpeer = parse_bool(f[1], line);
  } else if (key == "cache_size") {
    s.cache_size = parse_uint(f[1], line, "cache_size");
    if (*s.cache_size == 0) throw ScenarioError(line, "cache_size must be > 0");
  } else if (key == "ct_timeout") {
    s.ct_timeout = parse_uint(f[1], line, "ct_timeout");
  } else if (key == "seed") {
    s.seed = parse_uint(f[1], line, "seed");
  } else {
    throw ScenarioError(line, "unknown config key '" + key + "'");
  }
}

void parse_host(const std::vector<std::string>& f, int line, Scenario& s) {
  need(f, 5, line, "host");
  HostSpec h;
  h.name = f[0];
  h.ip = wrap(line, [&] { return Ipv4Addr::parse(f[1]); });
  h.mac = wrap(line, [&] { return MacAddr::parse(f[2]); });
  h.ifidx = static_cast<std::uint32_t>(parse_uint(f[3], line, "ifidx", UINT32_MAX));
  h.vni = static_cast<std::uint32_t>(parse_uint(f[4], line, "vni", 0xffffff));
  for (std::size_t i = 5; i < f.size(); i += 2) {
    if (f[i] != "gw" || i + 1 >= f.size()) {
      throw ScenarioError(line, "unexpected host field '" + f[i] + "'");
    }
    h.gateway_mac = wrap(line, [&] { return MacAddr::parse(f[i + 1]); });
  }
  s.hosts.push_back(h);
}

void parse_container(const std::vector<std::string>& f, int line,
                     Scenario& s) {
  need(f, 4, line, "container");
  ContainerSpec c;
  c.name = f[0];
  c.host = f[1];
  c.ip = wrap(line, [&] { return Ipv4Addr::parse(f[2]); });
  c.mac = wrap(line, [&] { return MacAddr::parse(f[3]); });
  if (f.size() > 4) {
    c.veth_host = static_cast<std::uint32_t>(parse_uint(f[4], line, "veth", UINT32_MAX));
  }
  if (f.size() > 5) {
    c.veth_container =
        static_cast<std::uint32_t>(parse_uint(f[5], line, "veth", UINT32_MAX));
  }
  if (f.size() > 6) throw ScenarioError(line, "too many container fields");
  s.containers.push_back(c);
}

void parse_flow(const std::vector<std::string>& f, int line, Scenario& s) {
  need(f, 11, line, "flow");
  FlowSpec fl;
  fl.name = f[0];
  fl.src = f[1];
  fl.dst = f[2];
  fl.protocol = parse_protocol(f[3], line);
  fl.src_port = static_cast<std::uint16_t>(parse_uint(f[4], line, "port", 65535));
  fl.dst_port = static_cast<std::uint16_t>(parse_uint(f[5], line, "port", 65535));
  const std::string& pat = f[6];
  if (pat == "oneway") {
    fl.pattern = FlowPattern::kOneway;
  } else if (pat == "rr") {
    fl.pattern = FlowPattern::kRequestResponse;
  } else if (pat.rfind("ack", 0) == 0) {
    fl.pattern = FlowPattern::kAck;
    fl.ack_every = static_cast<std::uint32_t>(
        parse_uint(pat.size() > 3 ? pat.substr(3) : "1", line, "ack interval",
                   UINT32_MAX));
    if (fl.ack_every == 0) throw ScenarioError(line, "ack interval must be > 0");
  } else {
    throw ScenarioError(line, "unknown flow pattern '" + pat + "'");
  }
  fl.count = parse_uint(f[7], line, "packet count");
  fl.payload = static_cast<std::uint32_t>(parse_uint(f[8], line, "payload size", 1400));
  fl.start = parse_uint(f[9], line, "start tick");
  fl.interval = parse_uint(f[10], line, "interval");
  for (std::size_t i = 11; i < f.size(); i += 2) {
    if (f[i] != "tos" || i + 1 >= f.size()) {
      throw ScenarioError(line, "unexpected flow field '" + f[i] + "'");
    }
    fl.tos = static_cast<std::uint8_t>(parse_uint(f[i + 1], line, "tos", 255));
    if (fl.tos & kTosMarkMask) {
      throw ScenarioError(line, "flow tos must leave bits 0x0c clear");
    }
  }
  s.flows.push_back(fl);
}

// Trailing change options: gap N | hold a,b | nohold.
void parse_change_options(const std::vector<std::string>& f, std::size_t i,
                          int line, ScenarioEvent& e) {
  while (i < f.size()) {
    if (f[i] == "gap" && i + 1 < f.size()) {
      e.gap = parse_uint(f[i + 1], line, "gap");
      i += 2;
    } else if (f[i] == "hold" && i + 1 < f.size()) {
      std::istringstream names(f[i + 1]);
      std::string n;
      while (std::getline(names, n, ',')) {
        if (!n.empty()) e.change.hold_hosts.push_back(n);
      }
      i += 2;
    } else if (f[i] == "nohold") {
      e.change.use_hold_on = false;
      ++i;
    } else {
      throw ScenarioError(line, "unexpected change option '" + f[i] + "'");
    }
  }
}

CacheMap parse_map(const std::string& s, int line) {
  if (s == "egressip") return CacheMap::kEgressIp;
  if (s == "egress") return CacheMap::kEgress;
  if (s == "ingress") return CacheMap::kIngress;
  if (s == "filter") return CacheMap::kFilter;
  throw ScenarioError(line, "unknown cache map '" + s + "'");
}

void parse_event(const std::vector<std::string>& f, int line, Scenario& s) {
  need(f, 2, line, "event");
  ScenarioEvent e;
  e.line = line;
  e.tick = parse_uint(f[0], line, "tick");
  const std::string& kind = f[1];
  using Kind = ScenarioEvent::Kind;
  if (kind == "send") {
    need(f, 3, line, "send");
    e.kind = Kind::kSend;
    e.flow = f[2];
    if (f.size() > 3) e.packets = parse_uint(f[3], line, "packet count");
  } else if (kind == "add_filter") {
    need(f, 12, line, "add_filter");
    e.kind = Kind::kAddFilter;
    FilterRule r = parse_rule_fields(f, 2, line);
    std::size_t next = 12;
    if (f.size() > 12 && f[12] == "bidir") {
      r.bidirectional = true;
      next = 13;
    }
    e.change = NetworkChange::add_filter(r);
    parse_change_options(f, next, line, e);
  } else if (kind == "remove_filter") {
    need(f, 3, line, "remove_filter");
    e.kind = Kind::kRemoveFilter;
    e.change = NetworkChange::remove_filter(
        static_cast<std::uint32_t>(parse_uint(f[2], line, "rule id", UINT32_MAX)));
    parse_change_options(f, 3, line, e);
  } else if (kind == "migrate") {
    need(f, 4, line, "migrate");
    e.kind = Kind::kMigrate;
    e.container = f[2];
    e.change.kind = NetworkChange::Kind::kMigrate;
    e.change.to_host = f[3];
    std::size_t i = 4;
    if (f.size() > 5 && f[4] == "veth") {
      e.change.veth_host =
          static_cast<std::uint32_t>(parse_uint(f[5], line, "veth", UINT32_MAX));
      i = 6;
      if (f.size() > 6 && f[6] != "gap" && f[6] != "hold" && f[6] != "nohold") {
        e.change.veth_container =
            static_cast<std::uint32_t>(parse_uint(f[6], line, "veth", UINT32_MAX));
        i = 7;
      }
    }
    parse_change_options(f, i, line, e);
  } else if (kind == "underlay_change") {
    need(f, 4, line, "underlay_change");
    e.kind = Kind::kUnderlayChange;
    e.change = NetworkChange::underlay_change(
        f[2], wrap(line, [&] { return MacAddr::parse(f[3]); }));
    parse_change_options(f, 4, line, e);
  } else if (kind == "delete_container") {
    need(f, 3, line, "delete_container");
    e.kind = Kind::kDeleteContainer;
    e.container = f[2];
  } else if (kind == "flush_cache_key") {
    need(f, 5, line, "flush_cache_key");
    e.kind = Kind::kFlushCacheKey;
    e.host = f[2];
    e.map = parse_map(f[3], line);
    e.key = f[4];
    if (e.map == CacheMap::kFilter) {
      const auto colon = e.key.find(':');
      if (colon != std::string::npos) {
        if (e.key.substr(colon + 1) != "rev") {
          throw ScenarioError(line, "filter key suffix must be ':rev'");
        }
        e.reverse_key = true;
        e.key = e.key.substr(0, colon);
      }
      e.flow = e.key;
    }
  } else if (kind == "set_hold_on") {
    need(f, 4, line, "set_hold_on");
    e.kind = Kind::kSetHoldOn;
    e.host = f[2];
    e.flag = parse_bool(f[3], line);
  } else if (kind == "churn") {
    need(f, 4, line, "churn");
    e.kind = Kind::kChurn;
    e.host = f[2];
    e.churn_entries = parse_uint(f[3], line, "churn entries");
    if (f.size() > 4) e.churn_rounds = parse_uint(f[4], line, "churn rounds");
    if (f.size() > 5) {
      e.churn_per_tick = parse_uint(f[5], line, "churn rate");
      if (e.churn_per_tick == 0) throw ScenarioError(line, "churn rate must be > 0");
    }
  } else {
    throw ScenarioError(line, "unknown event '" + kind + "'");
  }
  s.events.push_back(std::move(e));
}

}  // namespace

FilterRule parse_rule_fields(const std::vector<std::string>& f,
                             std::size_t first, int line) {
  need(f, first + 10, line, "rule");
  FilterRule r;
  auto at = [&](std::size_t i) -> const std::string& { return f[first + i]; };
  r.id = static_cast<std::uint32_t>(parse_uint(at(0), line, "rule id", UINT32_MAX));
  r.priority = static_cast<std::int32_t>(parse_int(at(1), line, "priority"));
  if (at(2) != "*") r.protocol = parse_protocol(at(2), line);
  r.src = wrap(line, [&] { return Cidr::parse(at(3)); });
  r.dst = wrap(line, [&] { return Cidr::parse(at(4)); });
  if (at(5) != "*") {
    r.src_port = static_cast<std::uint16_t>(parse_uint(at(5), line, "port", 65535));
  }
  if (at(6) != "*") {
    r.dst_port = static_cast<std::uint16_t>(parse_uint(at(6), line, "port", 65535));
  }
  if (at(7) != "*") {
    r.dscp = static_cast<std::uint8_t>(parse_uint(at(7), line, "dscp", 63));
  }
  if (at(8) == "new") {
    r.state_gate = CtState::kNew;
  } else if (at(8) == "established") {
    r.state_gate = CtState::kEstablished;
  } else if (at(8) != "*") {
    throw ScenarioError(line, "unknown state gate '" + at(8) + "'");
  }
  if (at(9) == "allow") {
    r.action = RuleAction::kAllow;
  } else if (at(9) == "deny") {
    r.action = RuleAction::kDeny;
  } else {
    throw ScenarioError(line, "unknown rule action '" + at(9) + "'");
  }
  return r;
}

Scenario parse_scenario(std::istream& in) {
  Scenario s;
  std::string section;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const auto f = split_fields(raw);
    if (f.empty()) continue;
    if (f[0].front() == '[') {
      if (f.size() != 1 || f[0].back() != ']') {
        throw ScenarioError(line, "malformed section header");
      }
      section = f[0].substr(1, f[0].size() - 2);
      static const std::set<std::string> kSections = {
          "config", "hosts", "containers", "flows", "rules", "events"};
      if (!kSections.contains(section)) {
        throw ScenarioError(line, "unknown section [" + section + "]");
      }
      continue;
    }
    if (section.empty()) {
      throw ScenarioError(line, "entry outside of any section");
    } else if (section == "config") {
      parse_config(f, line, s);
    } else if (section == "hosts") {
      parse_host(f, line, s);
    } else if (section == "containers") {
      parse_container(f, line, s);
    } else if (section == "flows") {
      parse_flow(f, line, s);
    } else if (section == "rules") {
      FilterRule r = parse_rule_fields(f, 0, line);
      if (f.size() > 10) {
        if (f[10] != "bidir" || f.size() > 11) {
          throw ScenarioError(line, "unexpected rule field '" + f[10] + "'");
        }
        r.bidirectional = true;
      }
      s.rules.push_back(r);
    } else {
      parse_event(f, line, s);
    }
  }
  return s;
}

Scenario parse_scenario_text(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(0, "cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

void validate_scenario(const Scenario& s) {
  if (s.hosts.empty()) throw ScenarioError(0, "scenario has no hosts");
  std::set<std::string> hosts;
  for (const HostSpec& h : s.hosts) hosts.insert(h.name);
  std::set<std::string> containers;
  for (const ContainerSpec& c : s.containers) {
    if (!hosts.contains(c.host)) {
      throw ScenarioError(0, "container '" + c.name +
                                 "' references unknown host '" + c.host + "'");
    }
    containers.insert(c.name);
  }
  std::set<std::string> flows;
  for (const FlowSpec& f : s.flows) {
    if (!flows.insert(f.name).second) {
      throw ScenarioError(0, "duplicate flow name '" + f.name + "'");
    }
    for (const std::string* end : {&f.src, &f.dst}) {
      if (!containers.contains(*end)) {
        throw ScenarioError(0, "flow '" + f.name +
                                   "' references unknown container '" + *end +
                                   "'");
      }
    }
    if (f.src == f.dst) {
      throw ScenarioError(0, "flow '" + f.name + "' sends to itself");
    }
  }
  std::set<std::uint32_t> rule_ids;
  for (const FilterRule& r : s.rules) {
    if (!rule_ids.insert(r.id).second) {
      throw ScenarioError(0, "duplicate rule id " + std::to_string(r.id));
    }
  }
  using Kind = ScenarioEvent::Kind;
  for (const ScenarioEvent& e : s.events) {
    auto need_host = [&](const std::string& h, bool star) {
      if ((star && h == "*") || hosts.contains(h)) return;
      throw ScenarioError(e.line, "unknown host '" + h + "'");
    };
    auto need_container = [&](const std::string& c) {
      if (!containers.contains(c)) {
        throw ScenarioError(e.line, "unknown container '" + c + "'");
      }
    };
    auto need_flow = [&](const std::string& f) {
      if (!flows.contains(f)) {
        throw ScenarioError(e.line, "unknown flow '" + f + "'");
      }
    };
    for (const std::string& h : e.change.hold_hosts) need_host(h, false);
    switch (e.kind) {
      case Kind::kSend: need_flow(e.flow); break;
      case Kind::kMigrate:
        need_container(e.container);
        need_host(e.change.to_host, false);
        break;
      case Kind::kUnderlayChange: need_host(e.change.host, false); break;
      case Kind::kDeleteContainer: need_container(e.container); break;
      case Kind::kFlushCacheKey:
        need_host(e.host, true);
        if (e.map == CacheMap::kFilter) need_flow(e.flow);
        break;
      case Kind::kSetHoldOn:
      case Kind::kChurn: need_host(e.host, true); break;
      case Kind::kAddFilter:
      case Kind::kRemoveFilter: break;
    }
  }
}

std::unique_ptr<Cluster> build_topology(const Scenario& s) {
  validate_scenario(s);
  auto cluster =
      std::make_unique<Cluster>(s.mode, s.capacities(), s.ct_timeout);
  try {
    for (const HostSpec& h : s.hosts) cluster->add_host(h);
    for (const ContainerSpec& c : s.containers) cluster->add_container(c);
    for (const FilterRule& r : s.rules) cluster->add_rule(r);
  } catch (const TopologyError& e) {
    throw ScenarioError(0, e.what());
  } catch (const ConfigError& e) {
    throw ScenarioError(0, e.what());
  } catch (const DevmapFull& e) {
    throw ScenarioError(0, e.what());
  }
  return cluster;
}

}  // namespace oncache
