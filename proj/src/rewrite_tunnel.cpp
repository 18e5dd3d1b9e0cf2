#include "oncache/rewrite_tunnel.hpp"

#include <algorithm>

namespace oncache {

// RwState

RwState::RwState(std::size_t egress_capacity, std::size_t ingressip_capacity)
    : egress_(egress_capacity), ingressip_(ingressip_capacity) {
  ingressip_.set_eviction_handler(
      [this](const RestoreKeyId& id, const ContainerPair& pair) {
        on_evict(id, pair);
      });
}

std::uint16_t RwState::next_key(Ipv4Addr src_host) const {
  auto it = peers_.find(src_host);
  if (it == peers_.end()) return 1;
  const PeerKeys& pk = it->second;
  if (!pk.free.empty()) return *pk.free.begin();
  if (pk.next_fresh > kRwMaxKeysPerPeer) return 0;
  return static_cast<std::uint16_t>(pk.next_fresh);
}

std::uint16_t RwState::allocate_restore_key(Ipv4Addr src_host,
                                            ContainerPair pair) {
  auto known = by_pair_.find({src_host, pair});
  if (known != by_pair_.end()) {
    ingressip_.get_mut(RestoreKeyId{known->second, src_host});
    return known->second;
  }
  PeerKeys& pk = peers_[src_host];
  std::uint16_t key;
  if (!pk.free.empty()) {
    key = *pk.free.begin();
    pk.free.erase(pk.free.begin());
  } else if (pk.next_fresh <= kRwMaxKeysPerPeer) {
    key = static_cast<std::uint16_t>(pk.next_fresh++);
  } else {
    throw KeySpaceExhausted("no free restore key for peer " +
                            src_host.to_string());
  }
  ++pk.live;
  by_pair_[{src_host, pair}] = key;
  // May evict another mapping; the handler releases its key.
  ingressip_.put(RestoreKeyId{key, src_host}, pair, PutMode::kInsertIfAbsent);
  return key;
}

std::optional<ContainerPair> RwState::lookup(RestoreKeyId id) {
  return ingressip_.get(id);
}

void RwState::forget(const RestoreKeyId& id, const ContainerPair& pair) {
  by_pair_.erase({id.src_host, pair});
  auto it = peers_.find(id.src_host);
  if (it == peers_.end()) return;
  PeerKeys& pk = it->second;
  --pk.live;
  if (id.key + 1u == pk.next_fresh) {
    --pk.next_fresh;
    // Fold trailing free keys back into the fresh range.
    while (!pk.free.empty() && *pk.free.rbegin() + 1u == pk.next_fresh) {
      pk.free.erase(std::prev(pk.free.end()));
      --pk.next_fresh;
    }
  } else {
    pk.free.insert(id.key);
  }
}

void RwState::on_evict(const RestoreKeyId& id, const ContainerPair& pair) {
  forget(id, pair);
}

bool RwState::release(RestoreKeyId id) {
  const ContainerPair* pair = ingressip_.peek(id);
  if (!pair) return false;
  const ContainerPair copy = *pair;
  ingressip_.erase(id);
  forget(id, copy);
  return true;
}

std::size_t RwState::release_container(Ipv4Addr container) {
  std::vector<RestoreKeyId> doomed;
  for (const auto& [id, pair] : ingressip_.entries()) {
    if (pair.src == container || pair.dst == container) doomed.push_back(id);
  }
  for (const RestoreKeyId& id : doomed) release(id);
  return doomed.size();
}

std::size_t RwState::release_host(Ipv4Addr src_host) {
  std::vector<RestoreKeyId> doomed;
  for (const auto& [id, pair] : ingressip_.entries()) {
    if (id.src_host == src_host) doomed.push_back(id);
  }
  for (const RestoreKeyId& id : doomed) release(id);
  return doomed.size();
}

// Frame rewriting

namespace {

ParsedFrame rewrite_addresses(const ParsedFrame& in, MacAddr dst_mac,
                              MacAddr src_mac, Ipv4Addr src_ip, Ipv4Addr dst_ip,
                              std::optional<std::uint16_t> ip_id) {
  ParsedFrame f = in;
  EthernetHeader eth = f.ethernet(IpLayer::kOuter);
  eth.dst = dst_mac;
  eth.src = src_mac;
  f.set_ethernet(IpLayer::kOuter, eth);
  Ipv4Header ip = f.ip_header(IpLayer::kOuter);
  ip.src = src_ip;
  ip.dst = dst_ip;
  if (ip_id) ip.identification = *ip_id;
  f.set_ip_header(IpLayer::kOuter, ip);
  if (f.l4_offset(IpLayer::kOuter)) f.refresh_l4_checksum(IpLayer::kOuter);
  return f;
}

PassToFallback pass_marked(ParsedFrame frame, PassReason reason, bool mark,
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

PassRestored pass_restored(ParsedFrame frame, PassReason reason, bool mark,
                           const ProgContext& ctx) {
  PassToFallback p =
      pass_marked(std::move(frame), reason, mark, IpLayer::kOuter, ctx);
  return PassRestored{std::move(p.frame), p.miss_marked, reason};
}

bool both_marks(const ParsedFrame& frame, IpLayer layer) {
  const TosMarks m = read_tos_marks(frame, layer);
  return m.miss && m.steady;
}

}  // namespace

ParsedFrame masquerade(const ParsedFrame& container_frame,
                       const RwEgressInfo& info) {
  if (info.restore_key == 0) {
    throw IncompleteInfo("masquerade needs an allocated restore key");
  }
  if (!container_frame.outer_ip()) {
    throw FrameError(FrameErrc::kNoSuchHeader, "masquerade needs IPv4");
  }
  return rewrite_addresses(container_frame, info.dst_mac, info.src_mac,
                           info.src_ip, info.dst_ip, info.restore_key);
}

std::optional<Restored> restore(const ParsedFrame& frame, RwState& rw,
                                HostCaches& caches) {
  if (!frame.outer_ip()) return std::nullopt;
  const Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  const auto pair = rw.lookup(RestoreKeyId{ip.identification, ip.src});
  if (!pair) return std::nullopt;
  const auto info = caches.ingress.get(pair->dst);
  if (!info || !info->complete()) return std::nullopt;
  return Restored{rewrite_addresses(frame, info->dmac, info->smac, pair->src,
                                    pair->dst, std::nullopt),
                  info->veth_ifidx};
}

Verdict rw_egress_prog(ParsedFrame frame, ProgContext& ctx, RwState& rw) {
  const auto tuple = frame.five_tuple(IpLayer::kOuter);
  if (!tuple) {
    return PassToFallback{std::move(frame), false, PassReason::kNotIpv4};
  }
  HostCaches& c = ctx.caches;
  if (!is_fastpath_allowed(c.filter,
                           canonical_tuple(*tuple, Direction::kEgress))) {
    return pass_marked(std::move(frame), PassReason::kFilterMiss, true,
                       IpLayer::kOuter, ctx);
  }
  RwEgressInfo* info = rw.egress().get_mut(tuple->dst_ip);
  if (!info || !info->complete()) {
    return pass_marked(std::move(frame), PassReason::kEgressMiss, true,
                       IpLayer::kOuter, ctx);
  }
  if (info->key_requested && !ctx.hold_on) {
    info->key_requested = false;
    return pass_marked(std::move(frame), PassReason::kEgressMiss, true,
                       IpLayer::kOuter, ctx);
  }
  const auto reverse = c.ingress.get(tuple->src_ip);
  if (!reverse || !reverse->complete()) {
    return PassToFallback{std::move(frame), false,
                          PassReason::kReverseIngressIncomplete};
  }
  return Redirect{info->host_ifidx, masquerade(frame, *info)};
}

RwIngressVerdict rw_ingress_prog(ParsedFrame frame, ProgContext& ctx,
                                 RwState& rw) {
  HostCaches& c = ctx.caches;
  if (!ingress_destination_check(frame, c.devmap, ctx.ingress_ifidx)) {
    return PassToFallback{std::move(frame), false, PassReason::kDevCheck};
  }

  if (frame.is_tunnel()) {
    const auto tuple = frame.five_tuple(IpLayer::kInner);
    if (!frame.inner_ip() || !tuple) {
      return PassToFallback{std::move(frame), false, PassReason::kNotIpv4};
    }
    if (!is_fastpath_allowed(c.filter,
                             canonical_tuple(*tuple, Direction::kIngress))) {
      return pass_marked(std::move(frame), PassReason::kFilterMiss, true,
                         IpLayer::kInner, ctx);
    }
    const auto info = c.ingress.get(tuple->dst_ip);
    if (!info || !info->complete()) {
      return pass_marked(std::move(frame), PassReason::kIngressIncomplete,
                         true, IpLayer::kInner, ctx);
    }
    // Ingress-Init learns the missing key, so this miss is curable here.
    RwEgressInfo* reverse = rw.egress().get_mut(tuple->src_ip);
    if (!reverse || !reverse->complete()) {
      return pass_marked(std::move(frame), PassReason::kReverseEgressMiss,
                         true, IpLayer::kInner, ctx);
    }
    if (frame.ip_header(IpLayer::kOuter).flags_fragment & kIpFlagKeyWanted) {
      reverse->key_requested = true;
    }
    const Bytes& in = frame.bytes();
    Bytes out(in.begin() + kVxlanOverhead, in.end());
    info->dmac.write(out, 0);
    info->smac.write(out, 6);
    return RedirectPeer{info->veth_ifidx, parse_frame(std::move(out))};
  }

  if (!frame.five_tuple(IpLayer::kOuter)) {
    return PassToFallback{std::move(frame), false, PassReason::kNotIpv4};
  }
  const Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  const auto pair = rw.lookup(RestoreKeyId{ip.identification, ip.src});
  if (!pair) {
    return PassToFallback{std::move(frame), false, PassReason::kRestoreMiss};
  }
  const EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
  ParsedFrame restored = rewrite_addresses(frame, eth.dst, eth.src, pair->src,
                                           pair->dst, std::nullopt);
  const FiveTuple tuple = *restored.five_tuple(IpLayer::kOuter);
  if (!is_fastpath_allowed(c.filter,
                           canonical_tuple(tuple, Direction::kIngress))) {
    return pass_restored(std::move(restored), PassReason::kFilterMiss, true,
                         ctx);
  }
  const auto info = c.ingress.get(pair->dst);
  if (!info || !info->complete()) {
    return pass_restored(std::move(restored), PassReason::kIngressIncomplete,
                         true, ctx);
  }
  const RwEgressInfo* reverse = rw.egress().get_mut(pair->src);
  if (!reverse || !reverse->complete()) {
    return pass_restored(std::move(restored), PassReason::kReverseEgressMiss,
                         false, ctx);
  }
  EthernetHeader out_eth = eth;
  out_eth.dst = info->dmac;
  out_eth.src = info->smac;
  restored.set_ethernet(IpLayer::kOuter, out_eth);
  return RedirectPeer{info->veth_ifidx, std::move(restored)};
}

InitResult rw_egress_init_prog(ParsedFrame frame, std::uint32_t egress_ifidx,
                               HostCaches& caches, RwState& rw) {
  if (!frame.is_tunnel() || !frame.inner_ip() ||
      !both_marks(frame, IpLayer::kInner)) {
    return {std::move(frame), false};
  }
  const auto tuple = frame.five_tuple(IpLayer::kInner);
  if (tuple) {
    whitelist_direction(caches.filter,
                        canonical_tuple(*tuple, Direction::kEgress),
                        Direction::kEgress);
  }
  const EthernetHeader outer_eth = frame.ethernet(IpLayer::kOuter);
  Ipv4Header outer = frame.ip_header(IpLayer::kOuter);
  Ipv4Header inner = frame.ip_header(IpLayer::kInner);

  RwEgressInfo* info = rw.egress().get_mut(inner.dst);
  if (!info) {
    rw.egress().put(inner.dst, RwEgressInfo{});
    info = rw.egress().get_mut(inner.dst);
  }
  if (info->restore_key == 0) {
    outer.flags_fragment |= kIpFlagKeyWanted;
    frame.set_ip_header(IpLayer::kOuter, outer);
  }
  info->src_mac = outer_eth.src;
  info->dst_mac = outer_eth.dst;
  info->src_ip = outer.src;
  info->dst_ip = outer.dst;
  info->host_ifidx = egress_ifidx;

  // Reverse flow: packets from the peer host, inner dst -> inner src.
  std::uint16_t key = 0;
  try {
    key = rw.allocate_restore_key(outer.dst, ContainerPair{inner.dst,
                                                           inner.src});
  } catch (const KeySpaceExhausted&) {
    key = 0;
  }
  inner.identification = key;
  if (key != 0) inner.flags_fragment |= kIpFlagKeyCarried;
  inner.tos = static_cast<std::uint8_t>(inner.tos & ~kTosMarkMask);
  frame.set_ip_header(IpLayer::kInner, inner);
  return {std::move(frame), true};
}

void clear_key_carried(ParsedFrame& frame) {
  const IpLayer layer = frame.payload_layer();
  if (!frame.ip_offset(layer)) return;
  Ipv4Header ip = frame.ip_header(layer);
  if (ip.flags_fragment & kIpFlagKeyCarried) {
    ip.flags_fragment &= static_cast<std::uint16_t>(~kIpFlagKeyCarried);
    frame.set_ip_header(layer, ip);
  }
}

InitResult rw_ingress_init_prog(ParsedFrame frame, HostCaches& caches,
                                RwState& rw, bool from_tunnel) {
  if (!frame.outer_ip() || !both_marks(frame, IpLayer::kOuter)) {
    return {std::move(frame), false};
  }
  const auto tuple = frame.five_tuple(IpLayer::kOuter);
  if (!tuple) return {std::move(frame), false};
  bool wrote = false;
  if (IngressInfo* entry = caches.ingress.get_mut(tuple->dst_ip)) {
    const EthernetHeader eth = frame.ethernet(IpLayer::kOuter);
    entry->dmac = eth.dst;
    entry->smac = eth.src;
    whitelist_direction(caches.filter,
                        canonical_tuple(*tuple, Direction::kIngress),
                        Direction::kIngress);
    wrote = true;
  }
  Ipv4Header ip = frame.ip_header(IpLayer::kOuter);
  const bool carried = (ip.flags_fragment & kIpFlagKeyCarried) != 0;
  const std::uint16_t key = ip.identification;
  if (carried) {
    ip.flags_fragment &= static_cast<std::uint16_t>(~kIpFlagKeyCarried);
    frame.set_ip_header(IpLayer::kOuter, ip);
  }
  if (from_tunnel && carried && key != 0) {
    RwEgressInfo* info = rw.egress().get_mut(tuple->src_ip);
    if (!info) {
      rw.egress().put(tuple->src_ip, RwEgressInfo{});
      info = rw.egress().get_mut(tuple->src_ip);
    }
    info->restore_key = key;
    wrote = true;
  }
  apply_tos_marks(frame, IpLayer::kOuter, {});
  return {std::move(frame), wrote};
}

}  // namespace oncache
