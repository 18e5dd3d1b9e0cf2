#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oncache/cache.hpp"
#include "oncache/fallback.hpp"
#include "oncache/initpath.hpp"
#include "oncache/rewrite_tunnel.hpp"

namespace oncache {

enum class Mode { kFastpath, kFallbackOnly, kRewriteTunnel };

const char* mode_name(Mode m);
// "fastpath", "fallback-only", "rewrite-tunnel"; throws std::invalid_argument.
Mode parse_mode(std::string_view text);

struct HostSpec {
  std::string name;
  Ipv4Addr ip;
  MacAddr mac;
  std::uint32_t ifidx = 0;
  std::uint32_t vni = 0;
  MacAddr gateway_mac;  // zero: derived from the host IP
};

struct ContainerSpec {
  std::string name;
  std::string host;
  Ipv4Addr ip;
  MacAddr mac;
  std::uint32_t veth_host = 0;  // 0: assigned at placement
  std::uint32_t veth_container = 0;
};

struct Host {
  HostSpec spec;
  HostCaches caches;
  FallbackPipeline fallback;
  HostDaemon daemon;
  std::unique_ptr<RwState> rw;
  bool hold_on = false;
  std::uint16_t fast_ip_id = 1;
  std::map<std::uint32_t, Ipv4Addr> veths;  // host-side veth -> container

  std::uint16_t next_fast_ip_id() { return fast_ip_id++; }
  std::optional<Ipv4Addr> container_on(std::uint32_t veth) const;
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hosts, containers and their per-host state. Rules are replicated to every
// host's fallback.
class Cluster {
 public:
  Cluster(Mode mode, CacheCapacities caps, std::uint64_t ct_timeout);

  Mode mode() const { return mode_; }

  // Registers the host interface, peers it with every existing host and
  // installs remote routes for existing containers.
  Host& add_host(HostSpec spec);
  // Daemon registration, local route on its host, remote routes elsewhere.
  const ContainerSpec& add_container(ContainerSpec spec);
  // Removes routes and the daemon registration; caches elsewhere untouched.
  void remove_container(Ipv4Addr ip);
  // Re-homes a container: routes, daemon registrations and the conntrack
  // entries that name it. veth 0 picks free indexes on the target.
  void move_container(Ipv4Addr ip, const std::string& to_host,
                      std::uint32_t veth_host = 0,
                      std::uint32_t veth_container = 0);
  // New underlay MAC for a host: devmap, tunnel config and every peer's
  // next hop.
  void set_host_mac(const std::string& host, MacAddr mac);

  void add_rule(const FilterRule& rule);
  std::optional<FilterRule> remove_rule(std::uint32_t id);
  const RuleSet& rules() const { return rules_; }

  std::vector<std::unique_ptr<Host>>& hosts() { return hosts_; }
  const std::vector<std::unique_ptr<Host>>& hosts() const { return hosts_; }
  Host* host(const std::string& name);
  Host* host_by_ip(Ipv4Addr ip);
  Host* host_by_mac(MacAddr mac);
  std::size_t host_index(const std::string& name) const;

  const ContainerSpec* container(Ipv4Addr ip) const;
  const ContainerSpec* container(const std::string& name) const;
  const std::map<Ipv4Addr, ContainerSpec>& containers() const {
    return containers_;
  }

 private:
  void install_routes(const ContainerSpec& c);
  std::uint32_t free_veth(const Host& h) const;

  Mode mode_;
  CacheCapacities caps_;
  std::uint64_t ct_timeout_;
  std::vector<std::unique_ptr<Host>> hosts_;
  std::map<Ipv4Addr, ContainerSpec> containers_;
  RuleSet rules_;
};

}  // namespace oncache
