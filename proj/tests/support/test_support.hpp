#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>

#include "oncache/cluster.hpp"
#include "oncache/packet.hpp"
#include "oncache/scenario.hpp"

namespace support {

using namespace oncache;

struct FrameArgs {
  Ipv4Addr src{10, 1, 0, 2};
  Ipv4Addr dst{10, 2, 0, 2};
  std::uint16_t sport = 40000;
  std::uint16_t dport = 80;
  std::uint8_t protocol = kIpProtoTcp;
  MacAddr dmac;
  MacAddr smac;
  std::size_t payload = 32;
  std::uint8_t tos = 0;
  std::uint16_t ip_id = 1;
  std::uint8_t ttl = 64;
};

ParsedFrame container_frame(const FrameArgs& a);

// Host i (0-based): h<i+1>, 192.168.0.<i+1>, MAC 02:00:00:00:00:<i+1>,
// ifidx 2, VNI 42. Container k on host i: c<i+1>_<k+1>, 10.<i+1>.0.<k+2>.
HostSpec host_spec(std::size_t i);
ContainerSpec container_spec(std::size_t host, std::size_t k);

std::unique_ptr<Cluster> make_cluster(Mode mode, std::size_t hosts,
                                      std::size_t per_host,
                                      CacheCapacities caps = {});

// Frame leaving container k of host i towards container k2 of host j.
ParsedFrame frame_between(Cluster& c, std::size_t i, std::size_t k,
                          std::size_t j, std::size_t k2,
                          std::uint16_t sport = 40000,
                          std::uint16_t dport = 80,
                          std::uint8_t tos = 0);

// Comparison masks. Tunnel frames: outer identification and checksum, inner
// tos mark bits and inner checksum. Plain frames: tos mark bits, checksum.
Bytes masked_tunnel(const ParsedFrame& f);
Bytes masked_plain(const ParsedFrame& f);
// Plain frames: identification and the IPv4 checksum.
Bytes masked_id(const ParsedFrame& f);

// Scenario text with hosts/containers per the naming above and one flow
// "f" from c1_1 to c2_1.
std::string two_host_text(const std::string& mode, const std::string& pattern,
                          std::uint64_t count, std::uint64_t interval = 1,
                          const std::string& extra_events = "");

// Randomized 2-4 host world with up to 16 containers and 64 flows.
Scenario random_scenario(std::uint64_t seed, Mode mode);

}  // namespace support
