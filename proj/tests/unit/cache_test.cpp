#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "oncache/cache.hpp"
#include "oncache/lru_map.hpp"
#include "oracles.hpp"

using namespace oncache;

TEST(LruMap, MatchesRecencyListOracleUnderRandomOps) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    std::mt19937_64 rng(seed);
    const std::size_t cap = 1 + rng() % 16;
    LruMap<int, int> lru(cap);
    oracle::Lru<int, int> model(cap);
    std::vector<int> evicted;
    lru.set_eviction_handler([&](const int& k, const int&) { evicted.push_back(k); });
    for (int op = 0; op < 5000; ++op) {
      const int key = static_cast<int>(rng() % 40);
      const int value = static_cast<int>(rng() % 1000);
      switch (rng() % 6) {
        case 0:
          EXPECT_EQ(lru.get(key), model.get(key));
          break;
        case 1:
          EXPECT_EQ(lru.peek(key) ? std::optional<int>(*lru.peek(key))
                                  : std::nullopt,
                    model.peek(key));
          break;
        case 2:
        case 3:
          EXPECT_EQ(lru.put(key, value) != PutResult::kRejected,
                    model.put(key, value, false));
          break;
        case 4:
          EXPECT_EQ(lru.put(key, value, PutMode::kInsertIfAbsent) !=
                        PutResult::kRejected,
                    model.put(key, value, true));
          break;
        case 5:
          EXPECT_EQ(lru.erase(key), model.erase(key));
          break;
      }
      ASSERT_LE(lru.size(), cap);
    }
    std::vector<std::pair<int, int>> got(lru.entries().begin(), lru.entries().end());
    EXPECT_EQ(got, model.items());
    EXPECT_EQ(evicted, model.evicted());
    EXPECT_EQ(lru.evictions(), model.evicted().size());
  }
}

TEST(LruMap, InsertIfAbsentRejectsWithoutRefreshing) {
  LruMap<int, int> lru(2);
  lru.put(1, 10);
  lru.put(2, 20);
  EXPECT_EQ(lru.put(1, 11, PutMode::kInsertIfAbsent), PutResult::kRejected);
  EXPECT_EQ(*lru.peek(1), 10);
  lru.put(3, 30);  // 1 is least recent: upsert-if-absent did not touch it
  EXPECT_FALSE(lru.contains(1));
  EXPECT_EQ(lru.lru_key(), 2);
}

TEST(LruMap, ZeroCapacityRejected) {
  EXPECT_THROW((LruMap<int, int>(0)), std::invalid_argument);
}

TEST(LruMap, EraseIfAndCopyKeepOrder) {
  LruMap<int, int> lru(8);
  for (int i = 0; i < 8; ++i) lru.put(i, i);
  EXPECT_EQ(lru.erase_if([](int k, int) { return k % 2 == 0; }), 4u);
  LruMap<int, int> copy = lru;
  copy.get(1);
  EXPECT_EQ(lru.entries().front().first, 7);
  EXPECT_EQ(copy.entries().front().first, 1);
  EXPECT_EQ(copy.size(), 4u);
}

TEST(Capacities, Defaults) {
  const CacheCapacities c;
  EXPECT_EQ(c.egressip, 4096u);
  EXPECT_EQ(c.egress, 1024u);
  EXPECT_EQ(c.ingress, 1024u);
  EXPECT_EQ(c.filter, 4096u);
  EXPECT_EQ(c.devmap, 8u);
  const CacheCapacities u = CacheCapacities::uniform(512);
  EXPECT_EQ(u.egress, 512u);
  EXPECT_EQ(u.devmap, 8u);
  HostCaches h(u);
  EXPECT_EQ(h.filter.capacity(), 512u);
}

TEST(Devmap, FullThrowsAndNeverEvicts) {
  Devmap d(2);
  d.put(1, {MacAddr::parse("02:00:00:00:00:01"), Ipv4Addr(1, 1, 1, 1)});
  d.put(2, {MacAddr::parse("02:00:00:00:00:02"), Ipv4Addr(1, 1, 1, 2)});
  EXPECT_THROW(d.put(3, {}), DevmapFull);
  d.put(2, {MacAddr::parse("02:00:00:00:00:09"), Ipv4Addr(1, 1, 1, 9)});
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.find(2)->ip, Ipv4Addr(1, 1, 1, 9));
  EXPECT_EQ(d.find(7), nullptr);
}

TEST(Whitelist, BothDirectionsRequired) {
  FilterCache f(16);
  const FiveTuple t{Ipv4Addr(10, 0, 0, 1), Ipv4Addr(10, 0, 0, 2), 1, 2, 6};
  EXPECT_FALSE(is_fastpath_allowed(f, t));
  whitelist_direction(f, t, Direction::kEgress);
  EXPECT_FALSE(is_fastpath_allowed(f, t));
  EXPECT_TRUE(f.peek(t)->egress_allowed);
  whitelist_direction(f, t, Direction::kEgress);
  EXPECT_FALSE(f.peek(t)->ingress_allowed);
  whitelist_direction(f, t, Direction::kIngress);
  EXPECT_TRUE(is_fastpath_allowed(f, t));
  EXPECT_FALSE(is_fastpath_allowed(f, t.reversed()));
}

TEST(Whitelist, CanonicalTupleSwapsOnIngress) {
  const FiveTuple t{Ipv4Addr(10, 0, 0, 1), Ipv4Addr(10, 0, 0, 2), 1, 2, 6};
  EXPECT_EQ(canonical_tuple(t, Direction::kEgress), t);
  EXPECT_EQ(canonical_tuple(t, Direction::kIngress), t.reversed());
}

TEST(Ingress, CompleteNeedsAllFields) {
  IngressInfo i;
  EXPECT_FALSE(i.complete());
  i.veth_ifidx = 10;
  EXPECT_FALSE(i.complete());
  i.dmac = MacAddr::parse("0a:00:00:00:00:01");
  i.smac = MacAddr::parse("02:fe:00:00:00:01");
  EXPECT_TRUE(i.complete());
}

TEST(DumpCaches, ListsEveryMap) {
  HostCaches h;
  h.egressip.put(Ipv4Addr(10, 2, 0, 2), Ipv4Addr(192, 168, 0, 2));
  h.ingress.put(Ipv4Addr(10, 1, 0, 2), IngressInfo{10, {}, {}});
  h.devmap.put(2, {MacAddr::parse("02:00:00:00:00:01"), Ipv4Addr(192, 168, 0, 1)});
  const std::string d = dump_caches(h);
  EXPECT_NE(d.find("egressip 10.2.0.2 -> 192.168.0.2"), std::string::npos);
  EXPECT_NE(d.find("(incomplete)"), std::string::npos);
  EXPECT_NE(d.find("devmap 2 -> 02:00:00:00:00:01 192.168.0.1"), std::string::npos);
}
