#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "oncache/packet.hpp"

namespace oncache {

// Per-packet processing stages, named after the overlay data path rows.
enum class Stage : std::uint8_t {
  kContainerStack,
  kVethPair,
  kOvs,
  kHostStack,
  kLink,
};
inline constexpr std::size_t kStageCount = 5;
inline constexpr std::array<Stage, kStageCount> kAllStages = {
    Stage::kContainerStack, Stage::kVethPair, Stage::kOvs, Stage::kHostStack,
    Stage::kLink};

const char* stage_name(Stage s);

// Set of stages one packet executed in one direction.
class StageSet {
 public:
  void add(Stage s) { bits_ |= bit(s); }
  bool has(Stage s) const { return (bits_ & bit(s)) != 0; }
  void merge(StageSet o) { bits_ |= o.bits_; }
  bool empty() const { return bits_ == 0; }
  std::uint8_t bits() const { return bits_; }
  bool operator==(const StageSet&) const = default;

 private:
  static std::uint8_t bit(Stage s) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(s));
  }
  std::uint8_t bits_ = 0;
};

// Connection tracking.

enum class CtState { kNew, kEstablished };
enum class CtDirection { kForward, kReverse };

const char* ct_state_name(CtState s);

struct ConntrackEntry {
  FiveTuple tuple;
  CtState state = CtState::kNew;
  std::uint64_t last_seen = 0;
  bool seen_forward = false;
  bool seen_reverse = false;
};

class ConntrackTable {
 public:
  static constexpr std::uint64_t kDefaultTimeout = 300;

  explicit ConntrackTable(std::uint64_t timeout = kDefaultTimeout)
      : timeout_(timeout) {}

  // Records one packet of `tuple` (already in the table's orientation) seen
  // in `direction` at `now`, and returns the resulting state.
  CtState observe(const FiveTuple& tuple, CtDirection direction,
                  std::uint64_t now);

  // Live entry for `tuple`, purging it first if it has expired.
  const ConntrackEntry* find(const FiveTuple& tuple, std::uint64_t now);
  bool erase(const FiveTuple& tuple) { return entries_.erase(tuple) != 0; }
  // Drops every expired entry; returns the count.
  std::size_t expire(std::uint64_t now);

  std::uint64_t timeout() const { return timeout_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<FiveTuple, ConntrackEntry>& entries() const {
    return entries_;
  }

 private:
  bool expired(const ConntrackEntry& e, std::uint64_t now) const {
    return now > e.last_seen && now - e.last_seen > timeout_;
  }

  std::uint64_t timeout_;
  std::map<FiveTuple, ConntrackEntry> entries_;
};

// Filtering.

enum class RuleAction { kAllow, kDeny };

struct Cidr {
  Ipv4Addr network;
  std::uint8_t prefix_len = 0;  // 0 matches everything

  // "a.b.c.d/n", "a.b.c.d" (host route) or "*".
  static Cidr parse(std::string_view text);
  bool contains(Ipv4Addr ip) const;
  std::string to_string() const;
  bool operator==(const Cidr&) const = default;
};

struct FilterRule {
  std::uint32_t id = 0;
  std::int32_t priority = 0;  // higher is evaluated first
  std::optional<std::uint8_t> protocol;
  Cidr src;
  Cidr dst;
  std::optional<std::uint16_t> src_port;
  std::optional<std::uint16_t> dst_port;
  std::optional<std::uint8_t> dscp;
  std::optional<CtState> state_gate;
  RuleAction action = RuleAction::kAllow;
  // Also match the reversed tuple.
  bool bidirectional = false;

  // Pattern match on the tuple alone, ignoring dscp and the state gate.
  bool matches_tuple(const FiveTuple& t) const;
  bool matches(const FiveTuple& t, std::uint8_t dscp_value,
               CtState ct_state) const;
  std::string to_string() const;
  bool operator==(const FilterRule&) const = default;
};

class RuleSet {
 public:
  // Throws std::invalid_argument on a duplicate id.
  void add(const FilterRule& rule);
  std::optional<FilterRule> remove(std::uint32_t id);
  const FilterRule* find(std::uint32_t id) const;
  // Evaluation order: priority descending, then id ascending.
  const std::vector<FilterRule>& rules() const { return rules_; }
  RuleAction evaluate(const FiveTuple& t, std::uint8_t dscp_value,
                      CtState ct_state) const;

 private:
  std::vector<FilterRule> rules_;
};

// First match over `rules` in the given order; ALLOW when nothing matches.
RuleAction evaluate_rules(std::span<const FilterRule> rules,
                          const FiveTuple& tuple, std::uint8_t dscp_value,
                          CtState ct_state);

// DSCP as carried by a tos byte once the mark bits are ignored.
inline std::uint8_t dscp_of(std::uint8_t tos) {
  return static_cast<std::uint8_t>((tos & ~kTosMarkMask & 0xff) >> 2);
}

// Routing and tunnel configuration.

struct LocalRoute {
  std::uint32_t veth_ifidx = 0;  // host-side veth
  MacAddr container_mac;
  bool operator==(const LocalRoute&) const = default;
};

struct RemoteRoute {
  Ipv4Addr peer_host_ip;
  bool operator==(const RemoteRoute&) const = default;
};

using Route = std::variant<LocalRoute, RemoteRoute>;

struct TunnelConfig {
  Ipv4Addr local_ip;
  MacAddr local_mac;
  std::uint32_t host_ifidx = 0;
  std::uint32_t vni = 0;
  MacAddr gateway_mac;  // inner source MAC after L3 forwarding
  std::map<Ipv4Addr, MacAddr> next_hop;  // peer host IP -> underlay MAC
};

// Inner destination MAC of every routed inter-host frame.
inline constexpr MacAddr kGlobalVirtualMac{
    std::array<std::uint8_t, 6>{0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff}};

class UnknownPeer : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Prepends outer Ethernet/IPv4/UDP/VXLAN for `peer`. Throws UnknownPeer when
// the tunnel config has no next hop for it.
ParsedFrame vxlan_encapsulate(const ParsedFrame& inner,
                              const TunnelConfig& tunnel, Ipv4Addr peer,
                              std::uint16_t ip_id);

// Strips the outer 50 bytes. Throws FrameError(kNotATunnel).
ParsedFrame vxlan_decapsulate(const ParsedFrame& outer);

// Pipeline results.

enum class DropReason {
  kDenied,
  kNoRoute,
  kUnknownPeer,
  kVniMismatch,
  kMalformed,
  kNotForThisHost,
};

const char* drop_reason_name(DropReason r);

struct WireFrame {
  std::uint32_t ifidx = 0;
  ParsedFrame frame;
};

struct VethDelivery {
  std::uint32_t veth_ifidx = 0;
  ParsedFrame frame;
};

// Non-overlay traffic addressed to the host itself.
struct HostLocal {
  ParsedFrame frame;
};

struct Drop {
  DropReason reason;
};

using EgressOutcome = std::variant<WireFrame, VethDelivery, Drop>;
using IngressOutcome = std::variant<VethDelivery, HostLocal, Drop>;

struct FallbackCounters {
  std::uint64_t egress_packets = 0;
  std::uint64_t ingress_packets = 0;
  std::uint64_t steady_marked = 0;
  std::uint64_t host_local = 0;
  std::map<DropReason, std::uint64_t> drops;

  std::uint64_t total_drops() const;
};

// The standard overlay pipeline of one host: veth, switch (conntrack, rules,
// L3 forwarding, steady marking) and the host stack's VXLAN device.
class FallbackPipeline {
 public:
  FallbackPipeline() = default;
  FallbackPipeline(TunnelConfig tunnel, std::uint64_t ct_timeout)
      : tunnel_(std::move(tunnel)), conntrack_(ct_timeout) {}

  // Container frame arriving from a host-side veth. Records switch and host
  // stack stages; the caller owns container_stack/veth_pair/link.
  EgressOutcome egress(ParsedFrame frame, std::uint64_t now,
                       StageSet* stages = nullptr);

  // Frame arriving on the host interface. Records host_stack/ovs/veth_pair.
  IngressOutcome ingress(ParsedFrame frame, std::uint64_t now,
                         StageSet* stages = nullptr);

  // Entry point after decapsulation: `inner` is a container frame addressed
  // to a local container.
  IngressOutcome ingress_inner(ParsedFrame inner, std::uint64_t now,
                               StageSet* stages = nullptr);

  // Routes.
  void set_route(Ipv4Addr container_ip, Route route);
  bool erase_route(Ipv4Addr container_ip);
  const Route* find_route(Ipv4Addr container_ip) const;
  const std::map<Ipv4Addr, Route>& routes() const { return routes_; }

  TunnelConfig& tunnel() { return tunnel_; }
  const TunnelConfig& tunnel() const { return tunnel_; }
  RuleSet& rules() { return rules_; }
  const RuleSet& rules() const { return rules_; }
  ConntrackTable& conntrack() { return conntrack_; }
  const ConntrackTable& conntrack() const { return conntrack_; }
  const FallbackCounters& counters() const { return counters_; }

  // Next outer IP identification towards `peer` (starts at 1, wraps).
  std::uint16_t next_ip_id(Ipv4Addr peer);

 private:
  // Orientation-resolved conntrack step. Inter-host flows are keyed with
  // the local container as source; intra-host flows by first sighting.
  CtState track(const FiveTuple& packet_tuple, bool inter_host,
                bool local_is_src, std::uint64_t now);
  Drop drop(DropReason r);

  TunnelConfig tunnel_;
  ConntrackTable conntrack_;
  RuleSet rules_;
  std::map<Ipv4Addr, Route> routes_;
  std::map<Ipv4Addr, std::uint16_t> ip_ids_;
  FallbackCounters counters_;
};

}  // namespace oncache
