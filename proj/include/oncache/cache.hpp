#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "oncache/lru_map.hpp"
#include "oncache/packet.hpp"

namespace oncache {

struct Ipv4AddrHash {
  std::size_t operator()(Ipv4Addr a) const {
    return std::hash<std::uint32_t>{}(a.value());
  }
};

// Cached per-peer-host encapsulation: outer Ethernet/IPv4/UDP/VXLAN plus the
// routed inner Ethernet header, and the host interface to redirect to.
struct EgressInfo {
  std::array<std::uint8_t, kHeaderTemplateLen> header_template{};
  std::uint32_t host_ifidx = 0;

  // Template parses as a tunnel prefix with UDP dst 4789 and checksum 0.
  bool valid() const;
  bool operator==(const EgressInfo&) const = default;
};

struct IngressInfo {
  std::uint32_t veth_ifidx = 0;  // host-side veth, set by the daemon
  MacAddr dmac;
  MacAddr smac;

  bool complete() const {
    return veth_ifidx != 0 && !dmac.is_zero() && !smac.is_zero();
  }
  bool operator==(const IngressInfo&) const = default;
};

struct FilterAction {
  bool ingress_allowed = false;
  bool egress_allowed = false;

  bool fastpath_eligible() const { return ingress_allowed && egress_allowed; }
  bool operator==(const FilterAction&) const = default;
};

struct DevInfo {
  MacAddr mac;
  Ipv4Addr ip;
  bool operator==(const DevInfo&) const = default;
};

struct CacheCapacities {
  std::size_t egressip = 4096;
  std::size_t egress = 1024;
  std::size_t ingress = 1024;
  std::size_t filter = 4096;
  std::size_t devmap = 8;

  // Every LRU map sized to `n`; devmap keeps its bound.
  static CacheCapacities uniform(std::size_t n) { return {n, n, n, n, 8}; }
};

class DevmapFull : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Host interface table. Plain hash map semantics: entries only leave through
// explicit erase, never by pressure.
class Devmap {
 public:
  explicit Devmap(std::size_t capacity = 8) : capacity_(capacity) {}

  // Inserts or overwrites. Throws DevmapFull when a new ifidx would exceed
  // capacity.
  void put(std::uint32_t ifidx, const DevInfo& info);
  const DevInfo* find(std::uint32_t ifidx) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::map<std::uint32_t, DevInfo>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::map<std::uint32_t, DevInfo> entries_;
};

struct HostCaches {
  explicit HostCaches(const CacheCapacities& caps = {})
      : egressip(caps.egressip),
        egress(caps.egress),
        ingress(caps.ingress),
        filter(caps.filter),
        devmap(caps.devmap) {}

  LruMap<Ipv4Addr, Ipv4Addr, Ipv4AddrHash> egressip;  // container -> host
  LruMap<Ipv4Addr, EgressInfo, Ipv4AddrHash> egress;  // host -> template
  LruMap<Ipv4Addr, IngressInfo, Ipv4AddrHash> ingress;  // container -> veth
  LruMap<FiveTuple, FilterAction, FiveTupleHash> filter;
  Devmap devmap;
};

using FilterCache = LruMap<FiveTuple, FilterAction, FiveTupleHash>;

enum class Direction { kEgress, kIngress };

// Sets the named direction's flag for `tuple`, creating the entry with the
// other flag unset if needed. The tuple must already be canonical.
void whitelist_direction(FilterCache& filter, const FiveTuple& tuple,
                         Direction direction);

// True iff both flags are set. Refreshes recency on hit.
bool is_fastpath_allowed(FilterCache& filter, const FiveTuple& tuple);

// Filter keys are egress-oriented on every host: the local container is the
// source. Ingress-side callers pass the packet tuple and get it swapped.
inline FiveTuple canonical_tuple(const FiveTuple& packet_tuple,
                                 Direction seen_on) {
  return seen_on == Direction::kEgress ? packet_tuple : packet_tuple.reversed();
}

// Text dump, one line per entry, each LRU map most-recent first.
std::string dump_caches(const HostCaches& caches);

}  // namespace oncache
