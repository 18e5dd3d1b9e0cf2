#pragma once

#include <cstdint>
#include <set>

#include "oncache/cache.hpp"
#include "oncache/packet.hpp"

namespace oncache {

// Outcome of one init program run; the frame is always passed on.
struct InitResult {
  ParsedFrame frame;
  bool initialized = false;  // a cache write happened
};

// TC egress of the host interface. Learns egress/egressip/filter state from
// tunnel frames whose inner tos carries both marks, then erases the marks.
InitResult egress_init_prog(ParsedFrame frame, std::uint32_t egress_ifidx,
                            HostCaches& caches);

// TC ingress of the container-side veth. Completes the daemon-created
// ingress entry with the frame's MACs and whitelists the ingress direction.
InitResult ingress_init_prog(ParsedFrame frame, HostCaches& caches);

// Clears both mark bits of the frame's container-carrying IP header. Used at
// the wire and container boundaries so marks never leave a host.
void scrub_marks(ParsedFrame& frame);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// User-space agent: pre-creates ingress entries at container provisioning
// and fills devmap at host bring-up.
class HostDaemon {
 public:
  // Upserts an incomplete ingress entry. Throws ConfigError if `ip` is
  // already registered on this host.
  void register_container(HostCaches& caches, Ipv4Addr ip,
                          std::uint32_t veth_ifidx);
  // Forgets the registration and drops the ingress entry.
  bool deregister_container(HostCaches& caches, Ipv4Addr ip);
  // Throws DevmapFull past the devmap capacity.
  void register_host_interface(HostCaches& caches, std::uint32_t ifidx,
                               MacAddr mac, Ipv4Addr ip);

  bool registered(Ipv4Addr ip) const { return containers_.contains(ip); }
  const std::set<Ipv4Addr>& containers() const { return containers_; }

 private:
  std::set<Ipv4Addr> containers_;
};

}  // namespace oncache
