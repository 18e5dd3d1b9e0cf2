#include "oncache/cluster.hpp"

#include <algorithm>

namespace oncache {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kFastpath: return "fastpath";
    case Mode::kFallbackOnly: return "fallback-only";
    case Mode::kRewriteTunnel: return "rewrite-tunnel";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "fastpath") return Mode::kFastpath;
  if (text == "fallback-only") return Mode::kFallbackOnly;
  if (text == "rewrite-tunnel") return Mode::kRewriteTunnel;
  throw std::invalid_argument("unknown mode '" + std::string(text) + "'");
}

std::optional<Ipv4Addr> Host::container_on(std::uint32_t veth) const {
  auto it = veths.find(veth);
  if (it == veths.end()) return std::nullopt;
  return it->second;
}

Cluster::Cluster(Mode mode, CacheCapacities caps, std::uint64_t ct_timeout)
    : mode_(mode), caps_(caps), ct_timeout_(ct_timeout) {}

Host& Cluster::add_host(HostSpec spec) {
  for (const auto& h : hosts_) {
    if (h->spec.name == spec.name) {
      throw TopologyError("duplicate host name '" + spec.name + "'");
    }
    if (h->spec.ip == spec.ip) {
      throw TopologyError("duplicate host IP " + spec.ip.to_string());
    }
    if (h->spec.mac == spec.mac) {
      throw TopologyError("duplicate host MAC " + spec.mac.to_string());
    }
  }
  if (spec.ifidx == 0) {
    throw TopologyError("host '" + spec.name + "' needs a nonzero ifidx");
  }
  if (spec.vni >= (1u << 24)) {
    throw TopologyError("VNI of host '" + spec.name + "' exceeds 24 bits");
  }
  if (spec.gateway_mac.is_zero()) {
    const std::uint32_t v = spec.ip.value();
    spec.gateway_mac = MacAddr({0x02, 0xfe, static_cast<std::uint8_t>(v >> 24),
                                static_cast<std::uint8_t>(v >> 16),
                                static_cast<std::uint8_t>(v >> 8),
                                static_cast<std::uint8_t>(v)});
  }

  auto host = std::make_unique<Host>();
  host->spec = spec;
  host->caches = HostCaches(caps_);
  TunnelConfig tunnel;
  tunnel.local_ip = spec.ip;
  tunnel.local_mac = spec.mac;
  tunnel.host_ifidx = spec.ifidx;
  tunnel.vni = spec.vni;
  tunnel.gateway_mac = spec.gateway_mac;
  for (const auto& peer : hosts_) {
    tunnel.next_hop[peer->spec.ip] = peer->spec.mac;
    peer->fallback.tunnel().next_hop[spec.ip] = spec.mac;
  }
  host->fallback = FallbackPipeline(std::move(tunnel), ct_timeout_);
  for (const FilterRule& r : rules_.rules()) host->fallback.rules().add(r);
  if (mode_ == Mode::kRewriteTunnel) {
    host->rw = std::make_unique<RwState>(caps_.egress, caps_.egressip);
  }
  host->daemon.register_host_interface(host->caches, spec.ifidx, spec.mac,
                                       spec.ip);
  for (const auto& [ip, c] : containers_) {
    const Host* home = this->host(c.host);
    host->fallback.set_route(ip, RemoteRoute{home->spec.ip});
  }
  hosts_.push_back(std::move(host));
  return *hosts_.back();
}

std::uint32_t Cluster::free_veth(const Host& h) const {
  std::uint32_t v = 10;
  while (h.veths.contains(v) || v == h.spec.ifidx) v += 2;
  return v;
}

void Cluster::install_routes(const ContainerSpec& c) {
  Host* home = host(c.host);
  for (auto& h : hosts_) {
    if (h.get() == home) {
      h->fallback.set_route(c.ip, LocalRoute{c.veth_host, c.mac});
    } else {
      h->fallback.set_route(c.ip, RemoteRoute{home->spec.ip});
    }
  }
}

const ContainerSpec& Cluster::add_container(ContainerSpec spec) {
  Host* home = host(spec.host);
  if (!home) {
    throw TopologyError("container '" + spec.name + "' references unknown host '" +
                        spec.host + "'");
  }
  if (containers_.contains(spec.ip)) {
    throw TopologyError("duplicate container IP " + spec.ip.to_string());
  }
  if (container(spec.name)) {
    throw TopologyError("duplicate container name '" + spec.name + "'");
  }
  if (host_by_ip(spec.ip)) {
    throw TopologyError("container IP " + spec.ip.to_string() +
                        " collides with a host IP");
  }
  if (spec.mac.is_zero()) {
    throw TopologyError("container '" + spec.name + "' needs a MAC");
  }
  if (spec.veth_host == 0) spec.veth_host = free_veth(*home);
  if (spec.veth_container == 0) spec.veth_container = spec.veth_host + 1;
  if (home->veths.contains(spec.veth_host) || spec.veth_host == home->spec.ifidx) {
    throw TopologyError("veth ifidx " + std::to_string(spec.veth_host) +
                        " already used on host '" + spec.host + "'");
  }
  home->daemon.register_container(home->caches, spec.ip, spec.veth_host);
  home->veths[spec.veth_host] = spec.ip;
  auto [it, inserted] = containers_.emplace(spec.ip, spec);
  install_routes(it->second);
  return it->second;
}

void Cluster::remove_container(Ipv4Addr ip) {
  auto it = containers_.find(ip);
  if (it == containers_.end()) {
    throw TopologyError("unknown container " + ip.to_string());
  }
  Host* home = host(it->second.host);
  home->daemon.deregister_container(home->caches, ip);
  home->veths.erase(it->second.veth_host);
  for (auto& h : hosts_) h->fallback.erase_route(ip);
  containers_.erase(it);
}

void Cluster::move_container(Ipv4Addr ip, const std::string& to_host,
                             std::uint32_t veth_host,
                             std::uint32_t veth_container) {
  auto it = containers_.find(ip);
  if (it == containers_.end()) {
    throw TopologyError("unknown container " + ip.to_string());
  }
  Host* to = host(to_host);
  if (!to) throw TopologyError("unknown host '" + to_host + "'");
  ContainerSpec& c = it->second;
  Host* from = host(c.host);
  if (from == to) return;

  if (veth_host == 0) veth_host = free_veth(*to);
  if (veth_container == 0) veth_container = veth_host + 1;
  if (to->veths.contains(veth_host)) {
    throw TopologyError("veth ifidx " + std::to_string(veth_host) +
                        " already used on host '" + to_host + "'");
  }
  from->daemon.deregister_container(from->caches, ip);
  from->veths.erase(c.veth_host);
  c.host = to_host;
  c.veth_host = veth_host;
  c.veth_container = veth_container;
  to->daemon.register_container(to->caches, ip, veth_host);
  to->veths[veth_host] = ip;
  install_routes(c);

  for (auto& h : hosts_) {
    std::vector<FiveTuple> stale;
    for (const auto& [t, e] : h->fallback.conntrack().entries()) {
      if (t.src_ip == ip || t.dst_ip == ip) stale.push_back(t);
    }
    for (const FiveTuple& t : stale) h->fallback.conntrack().erase(t);
  }
}

void Cluster::set_host_mac(const std::string& name, MacAddr mac) {
  Host* h = host(name);
  if (!h) throw TopologyError("unknown host '" + name + "'");
  for (const auto& other : hosts_) {
    if (other.get() != h && other->spec.mac == mac) {
      throw TopologyError("MAC " + mac.to_string() + " already used by host '" +
                          other->spec.name + "'");
    }
  }
  h->spec.mac = mac;
  h->fallback.tunnel().local_mac = mac;
  h->daemon.register_host_interface(h->caches, h->spec.ifidx, mac, h->spec.ip);
  for (auto& other : hosts_) {
    if (other.get() != h) other->fallback.tunnel().next_hop[h->spec.ip] = mac;
  }
}

void Cluster::add_rule(const FilterRule& rule) {
  rules_.add(rule);
  for (auto& h : hosts_) h->fallback.rules().add(rule);
}

std::optional<FilterRule> Cluster::remove_rule(std::uint32_t id) {
  auto r = rules_.remove(id);
  if (r) {
    for (auto& h : hosts_) h->fallback.rules().remove(id);
  }
  return r;
}

Host* Cluster::host(const std::string& name) {
  for (auto& h : hosts_) {
    if (h->spec.name == name) return h.get();
  }
  return nullptr;
}

Host* Cluster::host_by_ip(Ipv4Addr ip) {
  for (auto& h : hosts_) {
    if (h->spec.ip == ip) return h.get();
  }
  return nullptr;
}

Host* Cluster::host_by_mac(MacAddr mac) {
  for (auto& h : hosts_) {
    if (h->spec.mac == mac) return h.get();
  }
  return nullptr;
}

std::size_t Cluster::host_index(const std::string& name) const {
  for (std::size_t i = 0; i < hosts_.size(); ++i) {
    if (hosts_[i]->spec.name == name) return i;
  }
  throw TopologyError("unknown host '" + name + "'");
}

const ContainerSpec* Cluster::container(Ipv4Addr ip) const {
  auto it = containers_.find(ip);
  return it == containers_.end() ? nullptr : &it->second;
}

const ContainerSpec* Cluster::container(const std::string& name) const {
  for (const auto& [ip, c] : containers_) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace oncache
