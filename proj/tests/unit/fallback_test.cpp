#include <gtest/gtest.h>

#include <random>

#include "oncache/cluster.hpp"
#include "oncache/fallback.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace oncache;

namespace {

const FiveTuple kTuple{Ipv4Addr(10, 1, 0, 2), Ipv4Addr(10, 2, 0, 2), 40000, 80,
                       kIpProtoTcp};

}  // namespace

TEST(Conntrack, NewUntilBothDirectionsSeen) {
  ConntrackTable ct;
  EXPECT_EQ(ct.observe(kTuple, CtDirection::kForward, 1), CtState::kNew);
  EXPECT_EQ(ct.observe(kTuple, CtDirection::kForward, 2), CtState::kNew);
  EXPECT_EQ(ct.observe(kTuple, CtDirection::kReverse, 3), CtState::kEstablished);
  EXPECT_EQ(ct.observe(kTuple, CtDirection::kForward, 4), CtState::kEstablished);
  EXPECT_EQ(ct.size(), 1u);
}

TEST(Conntrack, MatchesTwoFlagOracle) {
  std::mt19937_64 rng(11);
  ConntrackTable ct(20);
  oracle::Conntrack model(20);
  std::uint64_t now = 0;
  for (int n = 0; n < 20000; ++n) {
    now += rng() % 8;
    const int flow = static_cast<int>(rng() % 12);
    const bool fwd = rng() % 2;
    const FiveTuple t{Ipv4Addr(10, 0, 0, static_cast<std::uint8_t>(flow)),
                      Ipv4Addr(10, 9, 0, 1), 1000, 80, kIpProtoTcp};
    const CtState got =
        ct.observe(t, fwd ? CtDirection::kForward : CtDirection::kReverse, now);
    EXPECT_EQ(got == CtState::kEstablished, model.observe(flow, fwd, now));
  }
}

TEST(Conntrack, ExpiryStartsOver) {
  ConntrackTable ct(10);
  ct.observe(kTuple, CtDirection::kForward, 0);
  ct.observe(kTuple, CtDirection::kReverse, 5);
  EXPECT_NE(ct.find(kTuple, 15), nullptr);
  EXPECT_EQ(ct.find(kTuple, 16), nullptr);
  EXPECT_EQ(ct.observe(kTuple, CtDirection::kReverse, 30), CtState::kNew);
  ct.observe(FiveTuple{}, CtDirection::kForward, 31);
  EXPECT_EQ(ct.expire(100), 2u);
}

TEST(Cidr, Parse) {
  EXPECT_TRUE(Cidr::parse("*").contains(Ipv4Addr(1, 2, 3, 4)));
  const Cidr c = Cidr::parse("10.1.0.0/16");
  EXPECT_TRUE(c.contains(Ipv4Addr(10, 1, 200, 3)));
  EXPECT_FALSE(c.contains(Ipv4Addr(10, 2, 0, 1)));
  EXPECT_TRUE(Cidr::parse("10.1.0.2").contains(Ipv4Addr(10, 1, 0, 2)));
  EXPECT_FALSE(Cidr::parse("10.1.0.2").contains(Ipv4Addr(10, 1, 0, 3)));
  EXPECT_THROW(Cidr::parse("10.0.0.0/33"), std::invalid_argument);
  EXPECT_EQ(c.to_string(), "10.1.0.0/16");
}

TEST(Rules, ThreeRuleWalkAgreesWithOracle) {
  // Rule A: deny tcp to port 80 when NEW (prio 10). Rule B: allow from
  // 10.1.0.0/16 (prio 10, higher id). Rule C: deny dscp 8 (prio 5).
  FilterRule a;
  a.id = 1;
  a.priority = 10;
  a.protocol = kIpProtoTcp;
  a.dst_port = 80;
  a.state_gate = CtState::kNew;
  a.action = RuleAction::kDeny;
  FilterRule b;
  b.id = 2;
  b.priority = 10;
  b.src = Cidr::parse("10.1.0.0/16");
  b.action = RuleAction::kAllow;
  FilterRule c;
  c.id = 3;
  c.priority = 5;
  c.dscp = 8;
  c.action = RuleAction::kDeny;
  RuleSet rs;
  rs.add(c);
  rs.add(b);
  rs.add(a);
  ASSERT_EQ(rs.rules()[0].id, 1u);
  ASSERT_EQ(rs.rules()[1].id, 2u);
  ASSERT_EQ(rs.rules()[2].id, 3u);

  std::mt19937_64 rng(5);
  for (int n = 0; n < 5000; ++n) {
    FiveTuple t{Ipv4Addr(10, static_cast<std::uint8_t>(1 + rng() % 2), 0, 2),
                Ipv4Addr(10, 3, 0, 2), static_cast<std::uint16_t>(rng() % 3),
                static_cast<std::uint16_t>(79 + rng() % 3),
                rng() % 2 ? kIpProtoTcp : kIpProtoUdp};
    const std::uint8_t dscp = static_cast<std::uint8_t>(rng() % 2 ? 8 : 0);
    const CtState st = rng() % 2 ? CtState::kNew : CtState::kEstablished;
    // Oracle: walk a, b, c in that order.
    RuleAction want = RuleAction::kAllow;
    if (t.protocol == kIpProtoTcp && t.dst_port == 80 && st == CtState::kNew) {
      want = RuleAction::kDeny;
    } else if ((t.src_ip.value() >> 16) == 0x0a01) {
      want = RuleAction::kAllow;
    } else if (dscp == 8) {
      want = RuleAction::kDeny;
    }
    EXPECT_EQ(rs.evaluate(t, dscp, st), want);
  }
}

TEST(Rules, DuplicateIdAndRemove) {
  RuleSet rs;
  FilterRule r;
  r.id = 4;
  rs.add(r);
  EXPECT_THROW(rs.add(r), std::invalid_argument);
  EXPECT_TRUE(rs.remove(4).has_value());
  EXPECT_FALSE(rs.remove(4).has_value());
  EXPECT_EQ(rs.evaluate(kTuple, 0, CtState::kNew), RuleAction::kAllow);
}

TEST(Rules, BidirectionalAlsoMatchesReverse) {
  FilterRule r;
  r.dst_port = 80;
  EXPECT_TRUE(r.matches_tuple(kTuple));
  EXPECT_FALSE(r.matches_tuple(kTuple.reversed()));
  r.bidirectional = true;
  EXPECT_TRUE(r.matches_tuple(kTuple.reversed()));
}

TEST(Rules, DscpIgnoresMarkBits) {
  EXPECT_EQ(dscp_of(0x20), 8);
  EXPECT_EQ(dscp_of(0x20 | kTosMarkMask), 8);
}

class FallbackPipelineTest : public ::testing::Test {
 protected:
  void SetUp() override { cluster = support::make_cluster(Mode::kFallbackOnly, 2, 2); }

  Host& h(std::size_t i) { return *cluster->hosts()[i]; }

  std::unique_ptr<Cluster> cluster;
};

TEST_F(FallbackPipelineTest, RemoteEgressEncapsulatesAndRoutes) {
  const ParsedFrame in = support::frame_between(*cluster, 0, 0, 1, 0);
  StageSet st;
  EgressOutcome out = h(0).fallback.egress(in, 1, &st);
  ASSERT_TRUE(std::holds_alternative<WireFrame>(out));
  const ParsedFrame& w = std::get<WireFrame>(out).frame;
  EXPECT_EQ(w.size(), in.size() + 50);
  EXPECT_EQ(w.ip_header(IpLayer::kOuter).dst, h(1).spec.ip);
  EXPECT_EQ(w.ethernet(IpLayer::kOuter).dst, h(1).spec.mac);
  EXPECT_EQ(w.ethernet(IpLayer::kInner).dst, kGlobalVirtualMac);
  EXPECT_EQ(w.ethernet(IpLayer::kInner).src, h(0).spec.gateway_mac);
  EXPECT_EQ(read_tos_marks(w, IpLayer::kInner), TosMarks{});
  EXPECT_TRUE(st.has(Stage::kOvs));
  EXPECT_TRUE(st.has(Stage::kHostStack));
  EXPECT_FALSE(st.has(Stage::kVethPair));
}

TEST_F(FallbackPipelineTest, LocalEgressDeliversOnVeth) {
  const ParsedFrame in = support::frame_between(*cluster, 0, 0, 0, 1);
  StageSet st;
  EgressOutcome out = h(0).fallback.egress(in, 1, &st);
  ASSERT_TRUE(std::holds_alternative<VethDelivery>(out));
  const auto& d = std::get<VethDelivery>(out);
  EXPECT_EQ(d.frame.ethernet(IpLayer::kOuter).dst, support::container_spec(0, 1).mac);
  EXPECT_FALSE(st.has(Stage::kHostStack));
  EXPECT_EQ(h(0).container_on(d.veth_ifidx), support::container_spec(0, 1).ip);
}

TEST_F(FallbackPipelineTest, SteadyMarkOnceEstablished) {
  const ParsedFrame req = support::frame_between(*cluster, 0, 0, 1, 0);
  auto w1 = std::get<WireFrame>(h(0).fallback.egress(req, 1));
  auto d1 = std::get<VethDelivery>(h(1).fallback.ingress(w1.frame, 2));
  EXPECT_FALSE(read_tos_marks(d1.frame, IpLayer::kOuter).steady);
  const ParsedFrame resp = support::frame_between(*cluster, 1, 0, 0, 0, 80, 40000);
  auto w2 = std::get<WireFrame>(h(1).fallback.egress(resp, 3));
  EXPECT_TRUE(read_tos_marks(w2.frame, IpLayer::kInner).steady);
  auto d2 = std::get<VethDelivery>(h(0).fallback.ingress(w2.frame, 4));
  EXPECT_TRUE(read_tos_marks(d2.frame, IpLayer::kOuter).steady);
  EXPECT_EQ(d2.frame.ethernet(IpLayer::kOuter).src, h(0).spec.gateway_mac);
}

TEST_F(FallbackPipelineTest, IngressRejections) {
  const ParsedFrame req = support::frame_between(*cluster, 0, 0, 1, 0);
  auto w = std::get<WireFrame>(h(0).fallback.egress(req, 1));
  // Wrong host.
  auto wrong = h(0).fallback.ingress(w.frame, 2);
  ASSERT_TRUE(std::holds_alternative<Drop>(wrong));
  EXPECT_EQ(std::get<Drop>(wrong).reason, DropReason::kNotForThisHost);
  // VNI mismatch.
  h(1).fallback.tunnel().vni = 7;
  auto vni = h(1).fallback.ingress(w.frame, 2);
  EXPECT_EQ(std::get<Drop>(vni).reason, DropReason::kVniMismatch);
  h(1).fallback.tunnel().vni = 42;
  // Plain frame addressed to the host.
  support::FrameArgs a;
  a.dmac = h(1).spec.mac;
  a.dst = h(1).spec.ip;
  auto local = h(1).fallback.ingress(support::container_frame(a), 2);
  EXPECT_TRUE(std::holds_alternative<HostLocal>(local));
}

TEST_F(FallbackPipelineTest, DenyAndNoRoute) {
  FilterRule deny;
  deny.id = 1;
  deny.dst_port = 80;
  deny.action = RuleAction::kDeny;
  h(0).fallback.rules().add(deny);
  auto out = h(0).fallback.egress(support::frame_between(*cluster, 0, 0, 1, 0), 1);
  EXPECT_EQ(std::get<Drop>(out).reason, DropReason::kDenied);
  support::FrameArgs a;
  a.dst = Ipv4Addr(10, 99, 0, 1);
  auto none = h(0).fallback.egress(support::container_frame(a), 1);
  EXPECT_EQ(std::get<Drop>(none).reason, DropReason::kNoRoute);
  EXPECT_EQ(h(0).fallback.counters().total_drops(), 2u);
  EXPECT_EQ(h(0).fallback.conntrack().size(), 1u);
}

TEST_F(FallbackPipelineTest, OuterIdCountsPerPeer) {
  const ParsedFrame req = support::frame_between(*cluster, 0, 0, 1, 0);
  auto a = std::get<WireFrame>(h(0).fallback.egress(req, 1));
  auto b = std::get<WireFrame>(h(0).fallback.egress(req, 2));
  EXPECT_EQ(a.frame.ip_header(IpLayer::kOuter).identification, 1);
  EXPECT_EQ(b.frame.ip_header(IpLayer::kOuter).identification, 2);
}
