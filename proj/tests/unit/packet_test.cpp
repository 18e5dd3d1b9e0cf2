#include <gtest/gtest.h>

#include <random>

#include "oncache/fallback.hpp"
#include "oncache/packet.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace oncache;

namespace {

TunnelConfig tunnel_for_test() {
  TunnelConfig t;
  t.local_ip = Ipv4Addr(192, 168, 0, 1);
  t.local_mac = MacAddr::parse("02:00:00:00:00:01");
  t.host_ifidx = 2;
  t.vni = 42;
  t.gateway_mac = MacAddr::parse("02:fe:c0:a8:00:01");
  t.next_hop[Ipv4Addr(192, 168, 0, 2)] = MacAddr::parse("02:00:00:00:00:02");
  return t;
}

}  // namespace

TEST(Addresses, ParseAndPrint) {
  EXPECT_EQ(Ipv4Addr::parse("10.1.2.3").to_string(), "10.1.2.3");
  EXPECT_EQ(Ipv4Addr::parse("10.1.2.3").value(), 0x0a010203u);
  EXPECT_EQ(MacAddr::parse("AA:bb:0c:DD:ee:0F").to_string(), "aa:bb:0c:dd:ee:0f");
  EXPECT_THROW(Ipv4Addr::parse("10.1.2"), std::invalid_argument);
  EXPECT_THROW(Ipv4Addr::parse("10.1.2.256"), std::invalid_argument);
  EXPECT_THROW(MacAddr::parse("aa:bb:cc:dd:ee"), std::invalid_argument);
  EXPECT_TRUE(MacAddr().is_zero());
}

TEST(Checksum, AgreesWithWordSumOracleOnRandomHeaders) {
  std::mt19937_64 rng(20240601);
  for (int n = 0; n < 1000; ++n) {
    std::vector<std::uint8_t> h(20);
    for (auto& b : h) b = static_cast<std::uint8_t>(rng());
    h[10] = h[11] = 0;
    const std::uint16_t got = ipv4_header_checksum(h);
    EXPECT_EQ(got, oracle::ip_checksum(h));
    h[10] = static_cast<std::uint8_t>(got >> 8);
    h[11] = static_cast<std::uint8_t>(got);
    EXPECT_TRUE(ipv4_checksum_valid(h, 0));
  }
}

TEST(Checksum, RejectsWrongLength) {
  std::vector<std::uint8_t> h(19);
  EXPECT_THROW(ipv4_header_checksum(h), std::invalid_argument);
}

TEST(Checksum, KnownHeaderVector) {
  // Classic example header, checksum 0xb861.
  std::vector<std::uint8_t> h = {0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40,
                                 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
                                 0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7};
  EXPECT_EQ(ipv4_header_checksum(h), 0xb861);
}

TEST(FlowHash, AgreesWithFnvOracleAndStaysInRange) {
  std::mt19937_64 rng(99);
  for (int n = 0; n < 5000; ++n) {
    FiveTuple t{Ipv4Addr(static_cast<std::uint32_t>(rng())),
                Ipv4Addr(static_cast<std::uint32_t>(rng())),
                static_cast<std::uint16_t>(rng()),
                static_cast<std::uint16_t>(rng()),
                static_cast<std::uint8_t>(rng())};
    const auto bytes = oracle::tuple_bytes(t.src_ip.value(), t.dst_ip.value(),
                                           t.src_port, t.dst_port, t.protocol);
    EXPECT_EQ(flow_hash(t), oracle::fnv1a32(bytes));
    const std::uint16_t port = outer_udp_source_port(t);
    EXPECT_GE(port, 49152);
    EXPECT_EQ(port, oracle::udp_source_port(t.src_ip.value(), t.dst_ip.value(),
                                            t.src_port, t.dst_port, t.protocol));
  }
}

TEST(FlowHash, EmptyInputOffsetBasis) {
  EXPECT_EQ(oracle::fnv1a32({}), 2166136261u);
  EXPECT_EQ(oracle::fnv1a32({'a'}), 0xe40c292cu);
}

TEST(Frames, ContainerFrameParsesWithValidChecksums) {
  for (std::uint8_t proto : {kIpProtoTcp, kIpProtoUdp, kIpProtoIcmp}) {
    support::FrameArgs a;
    a.protocol = proto;
    a.payload = 100;
    const ParsedFrame f = support::container_frame(a);
    ASSERT_TRUE(f.outer_ip());
    EXPECT_FALSE(f.is_tunnel());
    EXPECT_TRUE(ipv4_checksum_valid(f.bytes(), *f.outer_ip()));
    const auto t = f.five_tuple(IpLayer::kOuter);
    ASSERT_TRUE(t);
    EXPECT_EQ(t->protocol, proto);
    if (proto == kIpProtoIcmp) {
      EXPECT_EQ(t->src_port, 0);
      EXPECT_EQ(t->dst_port, 0);
    } else {
      EXPECT_EQ(t->src_port, 40000);
      EXPECT_EQ(t->dst_port, 80);
    }
    EXPECT_EQ(f.l4_payload(IpLayer::kOuter).size(), 100u);
    const std::size_t l4 = *f.outer_l4();
    ByteSpan seg = ByteSpan(f.bytes()).subspan(l4);
    EXPECT_EQ(ones_complement_sum(
                  seg, proto == kIpProtoIcmp
                           ? 0
                           : (a.src.value() >> 16) + (a.src.value() & 0xffff) +
                                 (a.dst.value() >> 16) +
                                 (a.dst.value() & 0xffff) + proto +
                                 static_cast<std::uint32_t>(seg.size())),
              0xffff);
  }
}

TEST(Frames, ReparseRoundTrip) {
  const ParsedFrame f = support::container_frame({});
  const ParsedFrame g = parse_frame(serialize_frame(f));
  EXPECT_EQ(f, g);
}

TEST(Frames, TruncatedAndOptionsRejected) {
  const ParsedFrame f = support::container_frame({});
  Bytes shortened(f.bytes().begin(), f.bytes().begin() + 20);
  try {
    parse_frame(shortened);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code(), FrameErrc::kTruncated);
  }
  Bytes opts = f.bytes();
  opts[14] = 0x46;
  try {
    parse_frame(opts);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code(), FrameErrc::kUnsupportedIpOptions);
  }
  Bytes tiny(10);
  EXPECT_THROW(parse_frame(tiny), FrameError);
}

TEST(Frames, NonIpv4OnlyEthernet) {
  Bytes b(60);
  b[12] = 0x86;
  b[13] = 0xdd;
  const ParsedFrame f = parse_frame(b);
  EXPECT_FALSE(f.outer_ip());
  EXPECT_FALSE(f.five_tuple(IpLayer::kOuter));
}

TEST(TosMarks, PreserveOtherBitsAndChecksum) {
  for (int tos = 0; tos < 256; ++tos) {
    support::FrameArgs a;
    a.tos = static_cast<std::uint8_t>(tos);
    ParsedFrame f = support::container_frame(a);
    apply_tos_marks(f, IpLayer::kOuter, {true, false});
    Ipv4Header h = f.ip_header(IpLayer::kOuter);
    EXPECT_EQ(h.tos & ~kTosMarkMask & 0xff, tos & ~kTosMarkMask & 0xff);
    EXPECT_EQ(h.tos & kTosMarkMask, kTosMissBit);
    EXPECT_TRUE(ipv4_checksum_valid(f.bytes(), *f.outer_ip()));
    apply_tos_marks(f, IpLayer::kOuter, {true, true});
    EXPECT_EQ(read_tos_marks(f, IpLayer::kOuter), (TosMarks{true, true}));
    apply_tos_marks(f, IpLayer::kOuter, {});
    h = f.ip_header(IpLayer::kOuter);
    EXPECT_EQ(h.tos, tos & ~kTosMarkMask & 0xff);
    EXPECT_TRUE(ipv4_checksum_valid(f.bytes(), *f.outer_ip()));
  }
}

TEST(Vxlan, EncapsulationAddsFiftyBytes) {
  const TunnelConfig t = tunnel_for_test();
  const ParsedFrame inner = support::container_frame({});
  const Ipv4Addr peer(192, 168, 0, 2);
  const ParsedFrame outer = vxlan_encapsulate(inner, t, peer, 7);
  EXPECT_EQ(outer.size(), inner.size() + kVxlanOverhead);
  ASSERT_TRUE(outer.is_tunnel());
  EXPECT_EQ(*outer.inner_eth(), kVxlanOverhead);
  const Ipv4Header ip = outer.ip_header(IpLayer::kOuter);
  EXPECT_EQ(ip.src, t.local_ip);
  EXPECT_EQ(ip.dst, peer);
  EXPECT_EQ(ip.identification, 7);
  EXPECT_EQ(ip.protocol, kIpProtoUdp);
  EXPECT_EQ(ip.total_length, outer.size() - kEthHeaderLen);
  EXPECT_TRUE(ipv4_checksum_valid(outer.bytes(), *outer.outer_ip()));
  const UdpHeader udp = UdpHeader::read(outer.bytes(), *outer.outer_l4());
  EXPECT_EQ(udp.dst_port, kVxlanPort);
  EXPECT_EQ(udp.checksum, 0);
  EXPECT_EQ(udp.src_port, outer_udp_source_port(*inner.five_tuple(IpLayer::kOuter)));
  EXPECT_EQ(outer.vxlan_header().vni, 42u);
  EXPECT_EQ(outer.vxlan_header().flags, kVxlanFlagI);
  EXPECT_EQ(outer.ethernet(IpLayer::kOuter).dst, t.next_hop.at(peer));

  const ParsedFrame back = vxlan_decapsulate(outer);
  EXPECT_EQ(back.bytes(), inner.bytes());
  EXPECT_THROW(vxlan_encapsulate(inner, t, Ipv4Addr(1, 2, 3, 4), 1), UnknownPeer);
  EXPECT_THROW(vxlan_decapsulate(inner), FrameError);
}

TEST(Vxlan, InnerLayerMarksTargetInnerHeader) {
  const TunnelConfig t = tunnel_for_test();
  ParsedFrame outer = vxlan_encapsulate(support::container_frame({}), t,
                                        Ipv4Addr(192, 168, 0, 2), 1);
  apply_tos_marks(outer, IpLayer::kInner, {true, true});
  EXPECT_EQ(read_tos_marks(outer, IpLayer::kOuter), TosMarks{});
  EXPECT_EQ(read_tos_marks(outer, IpLayer::kInner), (TosMarks{true, true}));
  EXPECT_TRUE(ipv4_checksum_valid(outer.bytes(), *outer.inner_ip()));
}
