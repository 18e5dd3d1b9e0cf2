#include "oncache/fastpath.hpp"

#include <algorithm>

namespace oncache {

const char* pass_reason_name(PassReason r) {
  switch (r) {
    case PassReason::kNotIpv4: return "not_ipv4";
    case PassReason::kFilterMiss: return "filter_miss";
    case PassReason::kEgressIpMiss: return "egressip_miss";
    case PassReason::kEgressMiss: return "egress_miss";
    case PassReason::kReverseIngressIncomplete:
      return "reverse_ingress_incomplete";
    case PassReason::kDevCheck: return "devcheck";
    case PassReason::kIngressIncomplete: return "ingress_incomplete";
    case PassReason::kReverseEgressMiss: return "reverse_egress_miss";
    case PassReason::kRestoreMiss: return "restore_miss";
  }
  return "?";
}

namespace {

PassToFallback pass(ParsedFrame frame, PassReason reason, bool mark,
                    IpLayer layer, const ProgContext& ctx) {
  bool marked = false;
  if (mark && !ctx.hold_on) {
    TosMarks m = read_tos_marks(frame, layer);
    m.miss = true;
    apply_tos_marks(frame, layer, m);
    marked = true;
  }
  return PassToFallback{std::move(frame), marked, reason};
}

}  // namespace

Verdict egress_prog(ParsedFrame frame, ProgContext& ctx) {
  const auto tuple = frame.five_tuple(IpLayer::kOuter);
  if (!tuple) {
    return PassToFallback{std::move(frame), false, PassReason::kNotIpv4};
  }
  HostCaches& c = ctx.caches;
  if (!is_fastpath_allowed(c.filter,
                           canonical_tuple(*tuple, Direction::kEgress))) {
    return pass(std::move(frame), PassReason::kFilterMiss, true,
                IpLayer::kOuter, ctx);
  }
  const auto host_ip = c.egressip.get(tuple->dst_ip);
  if (!host_ip) {
    return pass(std::move(frame), PassReason::kEgressIpMiss, true,
                IpLayer::kOuter, ctx);
  }
  const auto info = c.egress.get(*host_ip);
  if (!info) {
    return pass(std::move(frame), PassReason::kEgressMiss, true,
                IpLayer::kOuter, ctx);
  }
  const auto reverse = c.ingress.get(tuple->src_ip);
  if (!reverse || !reverse->complete()) {
    return pass(std::move(frame), PassReason::kReverseIngressIncomplete,
                false, IpLayer::kOuter, ctx);
  }

  // Template over [0, 64): outer headers plus the routed inner Ethernet.
  const Bytes& in = frame.bytes();
  Bytes out(in.size() + kVxlanOverhead);
  std::copy(info->header_template.begin(), info->header_template.end(),
            out.begin());
  std::copy(in.begin() + kEthHeaderLen, in.end(),
            out.begin() + kHeaderTemplateLen);

  MutableByteSpan b = out;
  const std::size_t ip_off = kEthHeaderLen;
  const std::size_t udp_off = ip_off + kIpv4HeaderLen;
  store_be16(b, ip_off + 2, static_cast<std::uint16_t>(out.size() - ip_off));
  store_be16(b, ip_off + 4, ctx.outer_ip_id);
  store_be16(b, ip_off + 10, 0);
  store_be16(b, ip_off + 10,
             ipv4_header_checksum(ByteSpan(out).subspan(ip_off,
                                                        kIpv4HeaderLen)));
  store_be16(b, udp_off, outer_udp_source_port(*tuple));
  store_be16(b, udp_off + 4, static_cast<std::uint16_t>(out.size() - udp_off));
  return Redirect{info->host_ifidx, parse_frame(std::move(out))};
}

bool ingress_destination_check(const ParsedFrame& frame, const Devmap& devmap,
                               std::uint32_t ifidx) {
  const DevInfo* dev = devmap.find(ifidx);
  if (!dev || !frame.outer_ip()) return false;
  const EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
  const Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  return eth.dst == dev->mac && eth.ether_type == kEtherTypeIpv4 &&
         ip.dst == dev->ip && ip.ttl >= 1;
}

Verdict ingress_prog(ParsedFrame frame, ProgContext& ctx) {
  HostCaches& c = ctx.caches;
  if (!ingress_destination_check(frame, c.devmap, ctx.ingress_ifidx) ||
      !frame.is_tunnel() || !frame.inner_ip()) {
    return PassToFallback{std::move(frame), false, PassReason::kDevCheck};
  }
  const auto tuple = frame.five_tuple(IpLayer::kInner);
  if (!tuple) {
    return PassToFallback{std::move(frame), false, PassReason::kNotIpv4};
  }
  if (!is_fastpath_allowed(c.filter,
                           canonical_tuple(*tuple, Direction::kIngress))) {
    return pass(std::move(frame), PassReason::kFilterMiss, true,
                IpLayer::kInner, ctx);
  }
  const auto info = c.ingress.get(tuple->dst_ip);
  if (!info || !info->complete()) {
    return pass(std::move(frame), PassReason::kIngressIncomplete, true,
                IpLayer::kInner, ctx);
  }
  if (!c.egressip.get(tuple->src_ip)) {
    return pass(std::move(frame), PassReason::kReverseEgressMiss, false,
                IpLayer::kInner, ctx);
  }

  const Bytes& in = frame.bytes();
  Bytes out(in.begin() + kVxlanOverhead, in.end());
  info->dmac.write(out, 0);
  info->smac.write(out, 6);
  return RedirectPeer{info->veth_ifidx, parse_frame(std::move(out))};
}

}  // namespace oncache
