#include "oncache/cache.hpp"

#include <sstream>

namespace oncache {

bool EgressInfo::valid() const {
  ByteSpan t = header_template;
  if (load_be16(t, 12) != kEtherTypeIpv4) return false;
  if ((t[14] >> 4) != 4 || (t[14] & 0x0f) != 5) return false;
  if (t[14 + 9] != kIpProtoUdp) return false;
  const std::size_t udp = kEthHeaderLen + kIpv4HeaderLen;
  if (load_be16(t, udp + 2) != kVxlanPort) return false;
  if (load_be16(t, udp + 6) != 0) return false;
  if ((t[udp + kUdpHeaderLen] & kVxlanFlagI) == 0) return false;
  return load_be16(t, kVxlanOverhead + 12) == kEtherTypeIpv4;
}

void Devmap::put(std::uint32_t ifidx, const DevInfo& info) {
  auto it = entries_.find(ifidx);
  if (it != entries_.end()) {
    it->second = info;
    return;
  }
  if (entries_.size() >= capacity_) {
    throw DevmapFull("devmap full (" + std::to_string(capacity_) +
                     " interfaces), cannot add ifidx " +
                     std::to_string(ifidx));
  }
  entries_.emplace(ifidx, info);
}

const DevInfo* Devmap::find(std::uint32_t ifidx) const {
  auto it = entries_.find(ifidx);
  return it == entries_.end() ? nullptr : &it->second;
}

void whitelist_direction(FilterCache& filter, const FiveTuple& tuple,
                         Direction direction) {
  FilterAction fresh;
  (direction == Direction::kEgress ? fresh.egress_allowed
                                   : fresh.ingress_allowed) = true;
  if (filter.put(tuple, fresh, PutMode::kInsertIfAbsent) !=
      PutResult::kRejected) {
    return;
  }
  // Existing entry: lookup-then-modify.
  if (FilterAction* a = filter.get_mut(tuple)) {
    (direction == Direction::kEgress ? a->egress_allowed
                                     : a->ingress_allowed) = true;
  }
}

bool is_fastpath_allowed(FilterCache& filter, const FiveTuple& tuple) {
  const FilterAction* a = filter.get_mut(tuple);
  return a != nullptr && a->fastpath_eligible();
}

std::string dump_caches(const HostCaches& caches) {
  std::ostringstream out;
  for (const auto& [k, v] : caches.egressip.entries()) {
    out << "egressip " << k.to_string() << " -> " << v.to_string() << "\n";
  }
  for (const auto& [k, v] : caches.egress.entries()) {
    out << "egress " << k.to_string() << " -> ifidx " << v.host_ifidx
        << " template";
    static const char* kHex = "0123456789abcdef";
    out << ' ';
    for (std::uint8_t b : v.header_template) {
      out << kHex[b >> 4] << kHex[b & 0xf];
    }
    out << "\n";
  }
  for (const auto& [k, v] : caches.ingress.entries()) {
    out << "ingress " << k.to_string() << " -> veth " << v.veth_ifidx
        << " dmac " << v.dmac.to_string() << " smac " << v.smac.to_string()
        << (v.complete() ? "" : " (incomplete)") << "\n";
  }
  for (const auto& [k, v] : caches.filter.entries()) {
    out << "filter " << k.to_string() << " -> egress "
        << (v.egress_allowed ? 1 : 0) << " ingress "
        << (v.ingress_allowed ? 1 : 0) << "\n";
  }
  for (const auto& [k, v] : caches.devmap.entries()) {
    out << "devmap " << k << " -> " << v.mac.to_string() << " "
        << v.ip.to_string() << "\n";
  }
  return out.str();
}

}  // namespace oncache
