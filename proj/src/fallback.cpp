#include "oncache/fallback.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace oncache {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kContainerStack: return "container_stack";
    case Stage::kVethPair: return "veth_pair";
    case Stage::kOvs: return "ovs";
    case Stage::kHostStack: return "host_stack";
    case Stage::kLink: return "link";
  }
  return "?";
}

const char* ct_state_name(CtState s) {
  return s == CtState::kNew ? "NEW" : "ESTABLISHED";
}

const char* drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::kDenied: return "denied";
    case DropReason::kNoRoute: return "no_route";
    case DropReason::kUnknownPeer: return "unknown_peer";
    case DropReason::kVniMismatch: return "vni_mismatch";
    case DropReason::kMalformed: return "malformed";
    case DropReason::kNotForThisHost: return "not_for_this_host";
  }
  return "?";
}

// ConntrackTable

CtState ConntrackTable::observe(const FiveTuple& tuple, CtDirection direction,
                                std::uint64_t now) {
  auto it = entries_.find(tuple);
  if (it != entries_.end() && expired(it->second, now)) {
    entries_.erase(it);
    it = entries_.end();
  }
  if (it == entries_.end()) {
    it = entries_.emplace(tuple, ConntrackEntry{.tuple = tuple}).first;
  }
  ConntrackEntry& e = it->second;
  (direction == CtDirection::kForward ? e.seen_forward : e.seen_reverse) =
      true;
  if (e.seen_forward && e.seen_reverse) e.state = CtState::kEstablished;
  e.last_seen = now;
  return e.state;
}

const ConntrackEntry* ConntrackTable::find(const FiveTuple& tuple,
                                           std::uint64_t now) {
  auto it = entries_.find(tuple);
  if (it == entries_.end()) return nullptr;
  if (expired(it->second, now)) {
    entries_.erase(it);
    return nullptr;
  }
  return &it->second;
}

std::size_t ConntrackTable::expire(std::uint64_t now) {
  return std::erase_if(entries_,
                       [&](const auto& kv) { return expired(kv.second, now); });
}

// Rules

Cidr Cidr::parse(std::string_view text) {
  if (text == "*") return {};
  Cidr c;
  const auto slash = text.find('/');
  c.network = Ipv4Addr::parse(text.substr(0, slash));
  c.prefix_len = 32;
  if (slash != std::string_view::npos) {
    std::string_view len = text.substr(slash + 1);
    unsigned v = 0;
    auto [p, ec] = std::from_chars(len.data(), len.data() + len.size(), v);
    if (ec != std::errc{} || p != len.data() + len.size() || v > 32) {
      throw std::invalid_argument("bad prefix length in '" +
                                  std::string(text) + "'");
    }
    c.prefix_len = static_cast<std::uint8_t>(v);
  }
  return c;
}

bool Cidr::contains(Ipv4Addr ip) const {
  if (prefix_len == 0) return true;
  const std::uint32_t mask = prefix_len == 32
                                 ? 0xffffffffu
                                 : ~((std::uint32_t{1} << (32 - prefix_len)) - 1);
  return (ip.value() & mask) == (network.value() & mask);
}

std::string Cidr::to_string() const {
  if (prefix_len == 0) return "*";
  return network.to_string() + "/" + std::to_string(prefix_len);
}

namespace {

bool match_one_way(const FilterRule& r, const FiveTuple& t) {
  if (r.protocol && *r.protocol != t.protocol) return false;
  if (!r.src.contains(t.src_ip) || !r.dst.contains(t.dst_ip)) return false;
  if (r.src_port && *r.src_port != t.src_port) return false;
  if (r.dst_port && *r.dst_port != t.dst_port) return false;
  return true;
}

bool ordered_before(const FilterRule& a, const FilterRule& b) {
  if (a.priority != b.priority) return a.priority > b.priority;
  return a.id < b.id;
}

}  // namespace

bool FilterRule::matches_tuple(const FiveTuple& t) const {
  return match_one_way(*this, t) ||
         (bidirectional && match_one_way(*this, t.reversed()));
}

bool FilterRule::matches(const FiveTuple& t, std::uint8_t dscp_value,
                         CtState ct_state) const {
  if (dscp && *dscp != dscp_value) return false;
  if (state_gate && *state_gate != ct_state) return false;
  return matches_tuple(t);
}

std::string FilterRule::to_string() const {
  std::ostringstream out;
  auto opt = [](const auto& v) {
    return v ? std::to_string(static_cast<unsigned>(*v)) : std::string("*");
  };
  out << "rule " << id << " prio " << priority << " proto " << opt(protocol)
      << " " << src.to_string() << " -> " << dst.to_string() << " sport "
      << opt(src_port) << " dport " << opt(dst_port) << " dscp " << opt(dscp)
      << " state " << (state_gate ? ct_state_name(*state_gate) : "*") << " "
      << (action == RuleAction::kAllow ? "allow" : "deny")
      << (bidirectional ? " bidir" : "");
  return out.str();
}

void RuleSet::add(const FilterRule& rule) {
  if (find(rule.id)) {
    throw std::invalid_argument("duplicate rule id " + std::to_string(rule.id));
  }
  auto pos = std::upper_bound(rules_.begin(), rules_.end(), rule,
                              ordered_before);
  rules_.insert(pos, rule);
}

std::optional<FilterRule> RuleSet::remove(std::uint32_t id) {
  auto it = std::find_if(rules_.begin(), rules_.end(),
                         [&](const FilterRule& r) { return r.id == id; });
  if (it == rules_.end()) return std::nullopt;
  FilterRule r = *it;
  rules_.erase(it);
  return r;
}

const FilterRule* RuleSet::find(std::uint32_t id) const {
  for (const FilterRule& r : rules_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

RuleAction RuleSet::evaluate(const FiveTuple& t, std::uint8_t dscp_value,
                             CtState ct_state) const {
  return evaluate_rules(rules_, t, dscp_value, ct_state);
}

RuleAction evaluate_rules(std::span<const FilterRule> rules,
                          const FiveTuple& tuple, std::uint8_t dscp_value,
                          CtState ct_state) {
  for (const FilterRule& r : rules) {
    if (r.matches(tuple, dscp_value, ct_state)) return r.action;
  }
  return RuleAction::kAllow;
}

// VXLAN

ParsedFrame vxlan_encapsulate(const ParsedFrame& inner,
                              const TunnelConfig& tunnel, Ipv4Addr peer,
                              std::uint16_t ip_id) {
  auto hop = tunnel.next_hop.find(peer);
  if (hop == tunnel.next_hop.end()) {
    throw UnknownPeer("no next hop for peer " + peer.to_string());
  }
  const auto tuple = inner.five_tuple(IpLayer::kOuter);
  const std::size_t total = inner.size() + kVxlanOverhead;
  Bytes out(total);
  MutableByteSpan b = out;

  EthernetHeader{hop->second, tunnel.local_mac, kEtherTypeIpv4}.write(b, 0);

  Ipv4Header ip;
  ip.tos = 0;
  ip.total_length = static_cast<std::uint16_t>(total - kEthHeaderLen);
  ip.identification = ip_id;
  ip.flags_fragment = 0x4000;
  ip.ttl = 64;
  ip.protocol = kIpProtoUdp;
  ip.src = tunnel.local_ip;
  ip.dst = peer;
  ip.write(b, kEthHeaderLen);
  store_be16(b, kEthHeaderLen + 10,
             ipv4_header_checksum(ByteSpan(out).subspan(kEthHeaderLen,
                                                        kIpv4HeaderLen)));

  const std::size_t udp_off = kEthHeaderLen + kIpv4HeaderLen;
  UdpHeader udp;
  udp.src_port = tuple ? outer_udp_source_port(*tuple) : 49152;
  udp.dst_port = kVxlanPort;
  udp.length = static_cast<std::uint16_t>(total - udp_off);
  udp.checksum = 0;
  udp.write(b, udp_off);

  VxlanHeader{kVxlanFlagI, tunnel.vni}.write(b, udp_off + kUdpHeaderLen);
  std::copy(inner.bytes().begin(), inner.bytes().end(),
            out.begin() + kVxlanOverhead);
  return parse_frame(std::move(out));
}

ParsedFrame vxlan_decapsulate(const ParsedFrame& outer) {
  if (!outer.is_tunnel()) {
    throw FrameError(FrameErrc::kNotATunnel, "frame is not VXLAN");
  }
  const Bytes& b = outer.bytes();
  const std::size_t udp_end =
      *outer.outer_l4() + load_be16(b, *outer.outer_l4() + 4);
  return parse_frame(Bytes(b.begin() + static_cast<std::ptrdiff_t>(
                                           *outer.inner_eth()),
                           b.begin() + static_cast<std::ptrdiff_t>(udp_end)));
}

// FallbackPipeline

std::uint64_t FallbackCounters::total_drops() const {
  std::uint64_t n = 0;
  for (const auto& [r, c] : drops) n += c;
  return n;
}

void FallbackPipeline::set_route(Ipv4Addr container_ip, Route route) {
  routes_[container_ip] = std::move(route);
}

bool FallbackPipeline::erase_route(Ipv4Addr container_ip) {
  return routes_.erase(container_ip) != 0;
}

const Route* FallbackPipeline::find_route(Ipv4Addr container_ip) const {
  auto it = routes_.find(container_ip);
  return it == routes_.end() ? nullptr : &it->second;
}

std::uint16_t FallbackPipeline::next_ip_id(Ipv4Addr peer) {
  auto [it, fresh] = ip_ids_.try_emplace(peer, std::uint16_t{1});
  const std::uint16_t id = it->second;
  it->second = static_cast<std::uint16_t>(id + 1);
  return id;
}

Drop FallbackPipeline::drop(DropReason r) {
  ++counters_.drops[r];
  return Drop{r};
}

CtState FallbackPipeline::track(const FiveTuple& packet_tuple, bool inter_host,
                                bool local_is_src, std::uint64_t now) {
  if (inter_host) {
    return local_is_src
               ? conntrack_.observe(packet_tuple, CtDirection::kForward, now)
               : conntrack_.observe(packet_tuple.reversed(),
                                    CtDirection::kReverse, now);
  }
  if (conntrack_.find(packet_tuple, now) == nullptr &&
      conntrack_.find(packet_tuple.reversed(), now) != nullptr) {
    return conntrack_.observe(packet_tuple.reversed(), CtDirection::kReverse,
                              now);
  }
  return conntrack_.observe(packet_tuple, CtDirection::kForward, now);
}

EgressOutcome FallbackPipeline::egress(ParsedFrame frame, std::uint64_t now,
                                       StageSet* stages) {
  ++counters_.egress_packets;
  if (stages) stages->add(Stage::kOvs);
  const auto tuple = frame.five_tuple(IpLayer::kOuter);
  if (!tuple) return drop(DropReason::kMalformed);
  const Route* route = find_route(tuple->dst_ip);
  if (!route) return drop(DropReason::kNoRoute);

  const bool remote = std::holds_alternative<RemoteRoute>(*route);
  const CtState state = track(*tuple, remote, true, now);
  Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  if (rules_.evaluate(*tuple, dscp_of(ip.tos), state) == RuleAction::kDeny) {
    return drop(DropReason::kDenied);
  }

  EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
  eth.src = tunnel_.gateway_mac;
  if (const auto* local = std::get_if<LocalRoute>(route)) {
    eth.dst = local->container_mac;
    frame.set_ethernet(IpLayer::kOuter, eth);
    return VethDelivery{local->veth_ifidx, std::move(frame)};
  }

  eth.dst = kGlobalVirtualMac;
  frame.set_ethernet(IpLayer::kOuter, eth);
  if (state == CtState::kEstablished) {
    TosMarks marks = read_tos_marks(frame, IpLayer::kOuter);
    marks.steady = true;
    apply_tos_marks(frame, IpLayer::kOuter, marks);
    ++counters_.steady_marked;
  }
  const Ipv4Addr peer = std::get<RemoteRoute>(*route).peer_host_ip;
  if (!tunnel_.next_hop.contains(peer)) {
    return drop(DropReason::kUnknownPeer);
  }
  if (stages) stages->add(Stage::kHostStack);
  return WireFrame{tunnel_.host_ifidx,
                   vxlan_encapsulate(frame, tunnel_, peer, next_ip_id(peer))};
}

IngressOutcome FallbackPipeline::ingress(ParsedFrame frame, std::uint64_t now,
                                         StageSet* stages) {
  ++counters_.ingress_packets;
  if (stages) stages->add(Stage::kHostStack);
  if (!frame.outer_ip()) return drop(DropReason::kMalformed);
  const EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
  const Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  if (eth.dst != tunnel_.local_mac || ip.dst != tunnel_.local_ip) {
    return drop(DropReason::kNotForThisHost);
  }
  if (!frame.is_tunnel()) {
    ++counters_.host_local;
    return HostLocal{std::move(frame)};
  }
  if (frame.vxlan_header().vni != tunnel_.vni) {
    return drop(DropReason::kVniMismatch);
  }
  if (!frame.inner_ip()) return drop(DropReason::kMalformed);
  return ingress_inner(vxlan_decapsulate(frame), now, stages);
}

IngressOutcome FallbackPipeline::ingress_inner(ParsedFrame inner,
                                               std::uint64_t now,
                                               StageSet* stages) {
  if (stages) {
    stages->add(Stage::kOvs);
    stages->add(Stage::kVethPair);
  }
  const auto tuple = inner.five_tuple(IpLayer::kOuter);
  if (!tuple) return drop(DropReason::kMalformed);
  const Route* route = find_route(tuple->dst_ip);
  const auto* local = route ? std::get_if<LocalRoute>(route) : nullptr;
  if (!local) return drop(DropReason::kNoRoute);

  const CtState state = track(*tuple, true, false, now);
  const Ipv4Header ip = inner.ip_header(IpLayer::kOuter);
  if (rules_.evaluate(*tuple, dscp_of(ip.tos), state) == RuleAction::kDeny) {
    return drop(DropReason::kDenied);
  }
  EthernetHeader eth = inner.ethernet(IpLayer::kOuter);
  eth.src = tunnel_.gateway_mac;
  eth.dst = local->container_mac;
  inner.set_ethernet(IpLayer::kOuter, eth);
  if (state == CtState::kEstablished) {
    TosMarks marks = read_tos_marks(inner, IpLayer::kOuter);
    marks.steady = true;
    apply_tos_marks(inner, IpLayer::kOuter, marks);
    ++counters_.steady_marked;
  }
  return VethDelivery{local->veth_ifidx, std::move(inner)};
}

}  // namespace oncache
