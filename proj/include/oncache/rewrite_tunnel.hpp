#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <variant>

#include "oncache/cache.hpp"
#include "oncache/fastpath.hpp"
#include "oncache/initpath.hpp"
#include "oncache/packet.hpp"

namespace oncache {

// Host-level addressing for masquerading towards one destination container.
struct RwEgressInfo {
  MacAddr src_mac;
  MacAddr dst_mac;
  Ipv4Addr src_ip;
  Ipv4Addr dst_ip;
  std::uint32_t host_ifidx = 0;
  std::uint16_t restore_key = 0;  // allocated by the receiver; 0 = unknown
  // Set when a fast-path tunnel frame from the peer carries kIpFlagKeyWanted:
  // the peer lacks our key, so the next egress packet re-runs init.
  bool key_requested = false;

  bool learned() const {
    return host_ifidx != 0 && !src_mac.is_zero() && !dst_mac.is_zero();
  }
  bool complete() const { return learned() && restore_key != 0; }
  bool operator==(const RwEgressInfo&) const = default;
};

struct RestoreKeyId {
  std::uint16_t key = 0;
  Ipv4Addr src_host;
  auto operator<=>(const RestoreKeyId&) const = default;
};

struct RestoreKeyIdHash {
  std::size_t operator()(const RestoreKeyId& k) const {
    return (std::size_t{k.src_host.value()} << 16) ^ k.key;
  }
};

struct ContainerPair {
  Ipv4Addr src;
  Ipv4Addr dst;
  auto operator<=>(const ContainerPair&) const = default;
};

class IncompleteInfo : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeySpaceExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kRwMaxKeysPerPeer = 65535;

// Rewriting-tunnel state of one host: the masquerade table and the
// receiver-side ingressip map with its key allocator. The container ingress
// map is shared with HostCaches. Not copyable: the allocator tracks LRU
// evictions through a handler bound to this object.
class RwState {
 public:
  explicit RwState(std::size_t egress_capacity = 1024,
                   std::size_t ingressip_capacity = 4096);
  RwState(const RwState&) = delete;
  RwState& operator=(const RwState&) = delete;

  LruMap<Ipv4Addr, RwEgressInfo, Ipv4AddrHash>& egress() { return egress_; }
  const LruMap<Ipv4Addr, RwEgressInfo, Ipv4AddrHash>& egress() const {
    return egress_;
  }
  const LruMap<RestoreKeyId, ContainerPair, RestoreKeyIdHash>& ingressip()
      const {
    return ingressip_;
  }

  // Key for packets from `src_host` carrying `pair`. Reuses a live mapping,
  // else takes the smallest unused nonzero key for that host. Throws
  // KeySpaceExhausted when all 65535 keys of the host are live.
  std::uint16_t allocate_restore_key(Ipv4Addr src_host, ContainerPair pair);
  std::optional<ContainerPair> lookup(RestoreKeyId id);
  bool release(RestoreKeyId id);
  // Releases every mapping naming `container` as either end.
  std::size_t release_container(Ipv4Addr container);
  // Releases every mapping whose packets come from `src_host`.
  std::size_t release_host(Ipv4Addr src_host);

  // Smallest key allocate_restore_key would hand out for a new pair.
  std::uint16_t next_key(Ipv4Addr src_host) const;

 private:
  struct PeerKeys {
    std::set<std::uint16_t> free;  // released keys below next_fresh
    std::uint32_t next_fresh = 1;
    std::size_t live = 0;
  };

  void on_evict(const RestoreKeyId& id, const ContainerPair& pair);
  void forget(const RestoreKeyId& id, const ContainerPair& pair);

  LruMap<Ipv4Addr, RwEgressInfo, Ipv4AddrHash> egress_;
  LruMap<RestoreKeyId, ContainerPair, RestoreKeyIdHash> ingressip_;
  std::map<Ipv4Addr, PeerKeys> peers_;
  std::map<std::pair<Ipv4Addr, ContainerPair>, std::uint16_t> by_pair_;
};

// Rewrites a container frame into a host-addressed one: host MACs and IPs,
// identification = restore key, both checksums recomputed. Length unchanged.
// Throws IncompleteInfo when the key is 0.
ParsedFrame masquerade(const ParsedFrame& container_frame,
                       const RwEgressInfo& info);

struct Restored {
  ParsedFrame frame;
  std::uint32_t veth_ifidx = 0;
};

// Inverse of masquerade; nullopt when either map misses or the ingress entry
// is incomplete.
std::optional<Restored> restore(const ParsedFrame& frame, RwState& rw,
                                HostCaches& caches);

// A restored container frame that must continue through the fallback's
// post-decapsulation entry.
struct PassRestored {
  ParsedFrame frame;
  bool miss_marked = false;
  PassReason reason = PassReason::kIngressIncomplete;
};

using RwIngressVerdict = std::variant<RedirectPeer, PassToFallback, PassRestored>;

// Egress fast path in rewriting mode: masquerade instead of encapsulating.
Verdict rw_egress_prog(ParsedFrame frame, ProgContext& ctx, RwState& rw);

// Ingress fast path in rewriting mode. Tunnel frames use the VXLAN gates with
// the reverse check done against the masquerade table; host-addressed frames
// are looked up by (identification, source host IP) and restored.
RwIngressVerdict rw_ingress_prog(ParsedFrame frame, ProgContext& ctx,
                                 RwState& rw);

// Egress-Init plus key learning: records host addressing for the inner
// destination, allocates the reverse flow's key and writes it into the inner
// identification, flagged with kIpFlagKeyCarried, before erasing the marks.
InitResult rw_egress_init_prog(ParsedFrame frame, std::uint32_t egress_ifidx,
                               HostCaches& caches, RwState& rw);

// Clears kIpFlagKeyCarried on the container-carrying IP header, so the flag
// never reaches a container.
void clear_key_carried(ParsedFrame& frame);

// Ingress-Init plus key learning. Only frames flagged with kIpFlagKeyCarried
// teach a key; the flag is cleared. `from_tunnel` is false for restored
// frames, whose identification holds this host's own key.
InitResult rw_ingress_init_prog(ParsedFrame frame, HostCaches& caches,
                                RwState& rw, bool from_tunnel);

}  // namespace oncache
