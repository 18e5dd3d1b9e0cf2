#include "oncache/initpath.hpp"

#include <algorithm>

namespace oncache {

namespace {

bool both_marks(const ParsedFrame& frame, IpLayer layer) {
  const TosMarks m = read_tos_marks(frame, layer);
  return m.miss && m.steady;
}

}  // namespace

InitResult egress_init_prog(ParsedFrame frame, std::uint32_t egress_ifidx,
                            HostCaches& caches) {
  if (!frame.is_tunnel() || !frame.inner_ip() ||
      !both_marks(frame, IpLayer::kInner)) {
    return {std::move(frame), false};
  }
  if (const auto tuple = frame.five_tuple(IpLayer::kInner)) {
    whitelist_direction(caches.filter,
                        canonical_tuple(*tuple, Direction::kEgress),
                        Direction::kEgress);
  }

  EgressInfo info;
  std::copy_n(frame.bytes().begin(), kHeaderTemplateLen,
              info.header_template.begin());
  info.host_ifidx = egress_ifidx;
  const Ipv4Header outer = frame.ip_header(IpLayer::kOuter);
  const Ipv4Header inner = frame.ip_header(IpLayer::kInner);
  caches.egress.put(outer.dst, info, PutMode::kInsertIfAbsent);
  caches.egressip.put(inner.dst, outer.dst, PutMode::kInsertIfAbsent);

  apply_tos_marks(frame, IpLayer::kInner, {});
  return {std::move(frame), true};
}

InitResult ingress_init_prog(ParsedFrame frame, HostCaches& caches) {
  if (!frame.outer_ip() || !both_marks(frame, IpLayer::kOuter)) {
    return {std::move(frame), false};
  }
  const auto tuple = frame.five_tuple(IpLayer::kOuter);
  if (!tuple) return {std::move(frame), false};
  IngressInfo* entry = caches.ingress.get_mut(tuple->dst_ip);
  if (!entry) return {std::move(frame), false};
  const EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
  entry->dmac = eth.dst;
  entry->smac = eth.src;
  whitelist_direction(caches.filter,
                      canonical_tuple(*tuple, Direction::kIngress),
                      Direction::kIngress);
  apply_tos_marks(frame, IpLayer::kOuter, {});
  return {std::move(frame), true};
}

void scrub_marks(ParsedFrame& frame) {
  const IpLayer layer = frame.payload_layer();
  if (!frame.ip_offset(layer)) return;
  if (read_tos_marks(frame, layer) != TosMarks{}) {
    apply_tos_marks(frame, layer, {});
  }
}

void HostDaemon::register_container(HostCaches& caches, Ipv4Addr ip,
                                    std::uint32_t veth_ifidx) {
  if (containers_.contains(ip)) {
    throw ConfigError("container " + ip.to_string() +
                      " already registered on this host");
  }
  containers_.insert(ip);
  caches.ingress.put(ip, IngressInfo{veth_ifidx, {}, {}}, PutMode::kUpsert);
}

bool HostDaemon::deregister_container(HostCaches& caches, Ipv4Addr ip) {
  caches.ingress.erase(ip);
  return containers_.erase(ip) != 0;
}

void HostDaemon::register_host_interface(HostCaches& caches,
                                         std::uint32_t ifidx, MacAddr mac,
                                         Ipv4Addr ip) {
  caches.devmap.put(ifidx, DevInfo{mac, ip});
}

}  // namespace oncache
