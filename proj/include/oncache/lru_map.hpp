#pragma once

#include <cstddef>
#include <functional>
#include <list>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace oncache {

enum class PutMode { kInsertIfAbsent, kUpsert };
enum class PutResult { kInserted, kUpdated, kRejected };

// Bounded hash map with least-recently-used eviction. Recency is refreshed
// by get()/get_mut() and by successful put(); peek()/contains() leave it
// alone. Iteration via entries() runs most-recent first.
template <typename K, typename V, typename Hash = std::hash<K>>
class LruMap {
 public:
  using Entry = std::pair<K, V>;
  using EvictionHandler = std::function<void(const K&, const V&)>;

  explicit LruMap(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("LruMap capacity is 0");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }
  std::size_t evictions() const { return evictions_; }

  // Called for every entry dropped by capacity pressure (not by erase()).
  void set_eviction_handler(EvictionHandler handler) {
    on_evict_ = std::move(handler);
  }

  std::optional<V> get(const K& key) {
    V* v = get_mut(key);
    if (!v) return std::nullopt;
    return *v;
  }

  // Pointer stays valid until the entry is erased or evicted.
  V* get_mut(const K& key) {
    auto it = index_.find(key);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second);
    return &it->second->second;
  }

  const V* peek(const K& key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &it->second->second;
  }

  bool contains(const K& key) const { return index_.count(key) != 0; }

  PutResult put(const K& key, V value, PutMode mode = PutMode::kUpsert) {
    auto it = index_.find(key);
    if (it != index_.end()) {
      if (mode == PutMode::kInsertIfAbsent) return PutResult::kRejected;
      it->second->second = std::move(value);
      order_.splice(order_.begin(), order_, it->second);
      return PutResult::kUpdated;
    }
    if (index_.size() == capacity_) evict_one();
    order_.emplace_front(key, std::move(value));
    index_.emplace(key, order_.begin());
    return PutResult::kInserted;
  }

  bool erase(const K& key) {
    auto it = index_.find(key);
    if (it == index_.end()) return false;
    order_.erase(it->second);
    index_.erase(it);
    return true;
  }

  // Removes every entry whose key satisfies `pred`; returns the count.
  template <typename Pred>
  std::size_t erase_if(Pred pred) {
    std::size_t n = 0;
    for (auto it = order_.begin(); it != order_.end();) {
      if (pred(it->first, it->second)) {
        index_.erase(it->first);
        it = order_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  void clear() {
    order_.clear();
    index_.clear();
  }

  // Most-recent first.
  const std::list<Entry>& entries() const { return order_; }

  std::optional<K> lru_key() const {
    if (order_.empty()) return std::nullopt;
    return order_.back().first;
  }

  LruMap(const LruMap& other)
      : capacity_(other.capacity_),
        order_(other.order_),
        evictions_(other.evictions_),
        on_evict_(other.on_evict_) {
    reindex();
  }
  LruMap& operator=(const LruMap& other) {
    if (this != &other) {
      capacity_ = other.capacity_;
      order_ = other.order_;
      evictions_ = other.evictions_;
      on_evict_ = other.on_evict_;
      reindex();
    }
    return *this;
  }
  LruMap(LruMap&&) noexcept = default;
  LruMap& operator=(LruMap&&) noexcept = default;

 private:
  void evict_one() {
    Entry victim = std::move(order_.back());
    order_.pop_back();
    index_.erase(victim.first);
    ++evictions_;
    if (on_evict_) on_evict_(victim.first, victim.second);
  }

  void reindex() {
    index_.clear();
    for (auto it = order_.begin(); it != order_.end(); ++it) {
      index_.emplace(it->first, it);
    }
  }

  std::size_t capacity_;
  std::list<Entry> order_;
  std::unordered_map<K, typename std::list<Entry>::iterator, Hash> index_;
  std::size_t evictions_ = 0;
  EvictionHandler on_evict_;
};

}  // namespace oncache
