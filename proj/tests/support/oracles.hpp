#pragma once

// Straight-line reference models kept independent of the library code.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace oracle {

// Sum of big-endian 16-bit words, carries folded, complemented.
std::uint16_t ip_checksum(const std::vector<std::uint8_t>& header);

// FNV-1a, 32 bit.
std::uint32_t fnv1a32(const std::vector<std::uint8_t>& bytes);

// 13-byte tuple layout: src, dst (4 each), sport, dport (2 each), proto.
std::vector<std::uint8_t> tuple_bytes(std::uint32_t src, std::uint32_t dst,
                                      std::uint16_t sport, std::uint16_t dport,
                                      std::uint8_t proto);

std::uint16_t udp_source_port(std::uint32_t src, std::uint32_t dst,
                              std::uint16_t sport, std::uint16_t dport,
                              std::uint8_t proto);

// LRU as a plain recency vector, most recent first.
template <typename K, typename V>
class Lru {
 public:
  explicit Lru(std::size_t cap) : cap_(cap) {}

  std::optional<V> get(const K& k) {
    auto it = find(k);
    if (it == items_.end()) return std::nullopt;
    auto kv = *it;
    items_.erase(it);
    items_.insert(items_.begin(), kv);
    return kv.second;
  }
  std::optional<V> peek(const K& k) const {
    for (const auto& kv : items_) {
      if (kv.first == k) return kv.second;
    }
    return std::nullopt;
  }
  // Returns false when insert_only and present.
  bool put(const K& k, const V& v, bool insert_only) {
    auto it = find(k);
    if (it != items_.end()) {
      if (insert_only) return false;
      items_.erase(it);
    } else if (items_.size() == cap_) {
      evicted_.push_back(items_.back().first);
      items_.pop_back();
    }
    items_.insert(items_.begin(), {k, v});
    return true;
  }
  bool erase(const K& k) {
    auto it = find(k);
    if (it == items_.end()) return false;
    items_.erase(it);
    return true;
  }
  const std::vector<std::pair<K, V>>& items() const { return items_; }
  const std::vector<K>& evicted() const { return evicted_; }

 private:
  typename std::vector<std::pair<K, V>>::iterator find(const K& k) {
    return std::find_if(items_.begin(), items_.end(),
                        [&](const auto& kv) { return kv.first == k; });
  }
  std::size_t cap_;
  std::vector<std::pair<K, V>> items_;
  std::vector<K> evicted_;
};

// Per-flow pair of "seen" flags with a last-seen clock.
class Conntrack {
 public:
  explicit Conntrack(std::uint64_t timeout) : timeout_(timeout) {}
  // Returns true when the flow counts as established after this packet.
  bool observe(int flow, bool forward, std::uint64_t now) {
    auto it = flows_.find(flow);
    if (it != flows_.end() && now > it->second.last &&
        now - it->second.last > timeout_) {
      flows_.erase(it);
    }
    State& s = flows_[flow];
    (forward ? s.fwd : s.rev) = true;
    s.last = now;
    return s.fwd && s.rev;
  }

 private:
  struct State {
    bool fwd = false;
    bool rev = false;
    std::uint64_t last = 0;
  };
  std::uint64_t timeout_;
  std::map<int, State> flows_;
};

// Smallest positive integer not in `used`.
inline std::uint32_t smallest_unused(const std::set<std::uint32_t>& used) {
  std::uint32_t k = 1;
  while (used.count(k)) ++k;
  return k;
}

}  // namespace oracle
