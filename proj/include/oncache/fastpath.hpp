#pragma once

#include <cstdint>
#include <variant>

#include "oncache/cache.hpp"
#include "oncache/packet.hpp"

namespace oncache {

// Tunnel frame ready for the host interface.
struct Redirect {
  std::uint32_t ifidx = 0;
  ParsedFrame frame;
};

// Container frame ready for the container-side end of a veth.
struct RedirectPeer {
  std::uint32_t veth_ifidx = 0;
  ParsedFrame frame;
};

enum class PassReason {
  kNotIpv4,
  kFilterMiss,
  kEgressIpMiss,
  kEgressMiss,
  kReverseIngressIncomplete,
  kDevCheck,
  kIngressIncomplete,
  kReverseEgressMiss,
  kRestoreMiss,
};

const char* pass_reason_name(PassReason r);

struct PassToFallback {
  ParsedFrame frame;
  bool miss_marked = false;
  PassReason reason = PassReason::kNotIpv4;
};

using Verdict = std::variant<Redirect, RedirectPeer, PassToFallback>;

struct ProgContext {
  HostCaches& caches;
  bool hold_on = false;
  std::uint32_t ingress_ifidx = 0;  // arrival interface, for ingress_prog
  bool rpeer = false;  // accounting only; frame bytes are unaffected
  std::uint16_t outer_ip_id = 0;  // written into redirected tunnel frames
};

// Cache-hit egress path for a frame leaving a container.
Verdict egress_prog(ParsedFrame frame, ProgContext& ctx);

// Cache-hit ingress path for a frame arriving on a host interface.
Verdict ingress_prog(ParsedFrame frame, ProgContext& ctx);

// Outer headers of a devmap-checked frame: dst MAC/IP belong to the arrival
// interface, EtherType IPv4 and TTL >= 1.
bool ingress_destination_check(const ParsedFrame& frame, const Devmap& devmap,
                               std::uint32_t ifidx);

}  // namespace oncache
