#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oncache/rewrite_tunnel.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace oncache;

namespace {

const Ipv4Addr kPeer(192, 168, 0, 2);

ContainerPair pair_n(std::uint32_t n) {
  return {Ipv4Addr(10, 2, static_cast<std::uint8_t>(n >> 8),
                   static_cast<std::uint8_t>(n)),
          Ipv4Addr(10, 1, 0, 2)};
}

RwEgressInfo full_info(std::uint16_t key) {
  RwEgressInfo i;
  i.src_mac = MacAddr({2, 0, 0, 0, 0, 1});
  i.dst_mac = MacAddr({2, 0, 0, 0, 0, 2});
  i.src_ip = Ipv4Addr(192, 168, 0, 1);
  i.dst_ip = kPeer;
  i.host_ifidx = 2;
  i.restore_key = key;
  return i;
}

}  // namespace

TEST(RestoreKeys, SmallestUnusedAgreesWithOracle) {
  RwState rw(16, 10000);
  std::set<std::uint32_t> used;
  std::map<std::uint32_t, std::uint16_t> live;  // pair index -> key
  std::mt19937_64 rng(3);
  for (int n = 0; n < 5000; ++n) {
    const std::uint32_t p = static_cast<std::uint32_t>(rng() % 300);
    if (rng() % 3 == 0) {
      auto it = live.find(p);
      if (it == live.end()) continue;
      EXPECT_TRUE(rw.release(RestoreKeyId{it->second, kPeer}));
      used.erase(it->second);
      live.erase(it);
      continue;
    }
    const std::uint32_t want =
        live.count(p) ? live[p] : oracle::smallest_unused(used);
    EXPECT_EQ(rw.next_key(kPeer), oracle::smallest_unused(used));
    const std::uint16_t k = rw.allocate_restore_key(kPeer, pair_n(p));
    ASSERT_EQ(k, want);
    used.insert(k);
    live[p] = k;
  }
  // Injective: every live key maps back to exactly its pair.
  for (const auto& [p, k] : live) {
    EXPECT_EQ(rw.lookup(RestoreKeyId{k, kPeer}), pair_n(p));
  }
}

TEST(RestoreKeys, PerSourceHostSpaces) {
  RwState rw;
  EXPECT_EQ(rw.allocate_restore_key(kPeer, pair_n(1)), 1);
  EXPECT_EQ(rw.allocate_restore_key(Ipv4Addr(192, 168, 0, 3), pair_n(1)), 1);
  EXPECT_EQ(rw.allocate_restore_key(kPeer, pair_n(2)), 2);
  EXPECT_EQ(rw.allocate_restore_key(kPeer, pair_n(1)), 1);
  EXPECT_EQ(rw.release_host(kPeer), 2u);
  EXPECT_EQ(rw.next_key(kPeer), 1);
}

TEST(RestoreKeys, EvictionReleasesKey) {
  RwState rw(16, 2);
  rw.allocate_restore_key(kPeer, pair_n(1));
  rw.allocate_restore_key(kPeer, pair_n(2));
  rw.allocate_restore_key(kPeer, pair_n(3));  // evicts key 1
  EXPECT_FALSE(rw.lookup(RestoreKeyId{1, kPeer}).has_value());
  EXPECT_EQ(rw.next_key(kPeer), 1);
  EXPECT_EQ(rw.allocate_restore_key(kPeer, pair_n(4)), 1);
}

TEST(RestoreKeys, Exhaustion) {
  const ContainerPair kFresh{Ipv4Addr(10, 9, 9, 9), Ipv4Addr(10, 1, 0, 2)};
  RwState rw(16, 70000);
  for (std::uint32_t n = 1; n <= kRwMaxKeysPerPeer; ++n) {
    ASSERT_EQ(rw.allocate_restore_key(kPeer, pair_n(n)), n);
  }
  EXPECT_EQ(rw.next_key(kPeer), 0);
  EXPECT_THROW(rw.allocate_restore_key(kPeer, kFresh), KeySpaceExhausted);
  EXPECT_TRUE(rw.release(RestoreKeyId{777, kPeer}));
  EXPECT_EQ(rw.allocate_restore_key(kPeer, kFresh), 777);
}

TEST(RestoreKeys, ReleaseContainer) {
  RwState rw;
  rw.allocate_restore_key(kPeer, pair_n(1));
  rw.allocate_restore_key(kPeer, pair_n(2));
  EXPECT_EQ(rw.release_container(pair_n(1).src), 1u);
  EXPECT_EQ(rw.release_container(Ipv4Addr(10, 1, 0, 2)), 1u);
  EXPECT_EQ(rw.ingressip().size(), 0u);
}

TEST(Masquerade, RoundTripPreservesContainerBytes) {
  std::mt19937_64 rng(9);
  RwState rw;
  HostCaches caches;
  const ContainerPair pair{Ipv4Addr(10, 1, 0, 2), Ipv4Addr(10, 2, 0, 2)};
  const std::uint16_t key = rw.allocate_restore_key(Ipv4Addr(192, 168, 0, 1), pair);
  const MacAddr cmac({0x0a, 0, 0, 2, 0, 1});
  const MacAddr gw({0x02, 0xfe, 0, 0, 0, 2});
  caches.ingress.put(pair.dst, IngressInfo{7, cmac, gw});
  RwEgressInfo info = full_info(key);
  for (int n = 0; n < 2000; ++n) {
    support::FrameArgs a;
    a.src = pair.src;
    a.dst = pair.dst;
    a.protocol = n % 3 == 0 ? kIpProtoUdp : n % 3 == 1 ? kIpProtoTcp : kIpProtoIcmp;
    a.sport = static_cast<std::uint16_t>(rng());
    a.dport = static_cast<std::uint16_t>(rng());
    a.payload = rng() % 1400;
    a.ip_id = static_cast<std::uint16_t>(rng());
    a.tos = static_cast<std::uint8_t>(rng() & ~kTosMarkMask);
    a.dmac = cmac;
    a.smac = gw;
    const ParsedFrame in = support::container_frame(a);
    const ParsedFrame m = masquerade(in, info);
    EXPECT_EQ(m.size(), in.size());
    const Ipv4Header ip = m.ip_header(IpLayer::kOuter);
    EXPECT_EQ(ip.identification, key);
    EXPECT_EQ(ip.src, info.src_ip);
    EXPECT_EQ(ip.dst, info.dst_ip);
    EXPECT_TRUE(ipv4_checksum_valid(m.bytes(), *m.outer_ip()));
    const auto r = restore(m, rw, caches);
    ASSERT_TRUE(r.has_value());
    EXPECT_EQ(r->veth_ifidx, 7u);
    EXPECT_EQ(support::masked_id(r->frame), support::masked_id(in));
  }
}

TEST(Masquerade, ZeroKeyIsIncomplete) {
  const ParsedFrame f = support::container_frame({});
  EXPECT_THROW(masquerade(f, full_info(0)), IncompleteInfo);
  EXPECT_FALSE(full_info(0).complete());
  EXPECT_TRUE(full_info(3).complete());
}

TEST(Restore, MissesReturnNothing) {
  RwState rw;
  HostCaches caches;
  const ParsedFrame m = masquerade(support::container_frame({}), full_info(5));
  EXPECT_FALSE(restore(m, rw, caches).has_value());
  rw.allocate_restore_key(Ipv4Addr(192, 168, 0, 1),
                          {Ipv4Addr(10, 1, 0, 2), Ipv4Addr(10, 2, 0, 2)});
  caches.ingress.put(Ipv4Addr(10, 2, 0, 2), IngressInfo{7, {}, {}});
  const ParsedFrame m1 = masquerade(support::container_frame({}), full_info(1));
  EXPECT_FALSE(restore(m1, rw, caches).has_value());
}

TEST(RewriteMode, StateOnlyInRewriteMode) {
  EXPECT_NE(support::make_cluster(Mode::kRewriteTunnel, 2, 1)->hosts()[0]->rw,
            nullptr);
  EXPECT_EQ(support::make_cluster(Mode::kFastpath, 2, 1)->hosts()[0]->rw,
            nullptr);
}

namespace {

ParsedFrame rw_wire(Cluster& c) {
  ParsedFrame in = support::frame_between(c, 0, 0, 1, 0);
  in.set_ip_header(IpLayer::kOuter, [&] {
    Ipv4Header ip = in.ip_header(IpLayer::kOuter);
    ip.identification = 0x1234;
    return ip;
  }());
  auto w = std::get<WireFrame>(c.hosts()[0]->fallback.egress(in, 1)).frame;
  apply_tos_marks(w, IpLayer::kInner, {true, true});
  return w;
}

RwEgressInfo* learned_at_h2(Cluster& c, ParsedFrame wire) {
  Host& h2 = *c.hosts()[1];
  auto d = std::get<VethDelivery>(h2.fallback.ingress(wire, 2));
  apply_tos_marks(d.frame, IpLayer::kOuter, {true, true});
  InitResult r = rw_ingress_init_prog(d.frame, h2.caches, *h2.rw, true);
  EXPECT_EQ(r.frame.ip_header(IpLayer::kOuter).flags_fragment &
                kIpFlagKeyCarried,
            0);
  return h2.rw->egress().get_mut(support::container_spec(0, 0).ip);
}

}  // namespace

TEST(RewriteInit, EgressInitCarriesKeyAndWantsOne) {
  auto c = support::make_cluster(Mode::kRewriteTunnel, 2, 1);
  Host& h1 = *c->hosts()[0];
  InitResult r = rw_egress_init_prog(rw_wire(*c), 2, h1.caches, *h1.rw);
  ASSERT_TRUE(r.initialized);
  const Ipv4Header inner = r.frame.ip_header(IpLayer::kInner);
  EXPECT_NE(inner.flags_fragment & kIpFlagKeyCarried, 0);
  const std::uint16_t key = h1.rw->allocate_restore_key(
      c->hosts()[1]->spec.ip,
      {support::container_spec(1, 0).ip, support::container_spec(0, 0).ip});
  EXPECT_EQ(inner.identification, key);
  EXPECT_NE(r.frame.ip_header(IpLayer::kOuter).flags_fragment &
                kIpFlagKeyWanted,
            0);
  EXPECT_TRUE(ipv4_checksum_valid(r.frame.bytes(), *r.frame.outer_ip()));
  EXPECT_TRUE(ipv4_checksum_valid(r.frame.bytes(), *r.frame.inner_ip()));

  const RwEgressInfo* info = learned_at_h2(*c, r.frame);
  ASSERT_NE(info, nullptr);
  EXPECT_EQ(info->restore_key, key);
}

TEST(RewriteInit, UnflaggedIdentificationTeachesNothing) {
  auto c = support::make_cluster(Mode::kRewriteTunnel, 2, 1);
  const RwEgressInfo* info = learned_at_h2(*c, rw_wire(*c));
  EXPECT_TRUE(info == nullptr || info->restore_key == 0);
}
