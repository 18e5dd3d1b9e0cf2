#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oncache/cluster.hpp"
#include "oncache/fallback.hpp"

namespace oncache {

class ChangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkChange {
  enum class Kind { kAddFilter, kRemoveFilter, kMigrate, kUnderlayChange };

  Kind kind = Kind::kAddFilter;
  FilterRule rule;              // kAddFilter
  std::uint32_t rule_id = 0;    // kRemoveFilter
  Ipv4Addr container;           // kMigrate
  std::string to_host;          // kMigrate
  std::uint32_t veth_host = 0;  // kMigrate, 0 = pick
  std::uint32_t veth_container = 0;
  std::string host;             // kUnderlayChange
  MacAddr new_mac;              // kUnderlayChange
  // Hosts that raise the hold-on flag; empty means every host.
  std::vector<std::string> hold_hosts;
  // Ablation switch: skip steps (1) and (4).
  bool use_hold_on = true;

  static NetworkChange add_filter(FilterRule rule);
  static NetworkChange remove_filter(std::uint32_t id);
  static NetworkChange migrate(Ipv4Addr container, std::string to_host);
  static NetworkChange underlay_change(std::string host, MacAddr new_mac);
};

const char* change_kind_name(NetworkChange::Kind k);

void set_hold_on(Host& host, bool flag);

// Cache entries step (2) removes, per host index.
struct AffectedKeys {
  struct PerHost {
    std::vector<Ipv4Addr> egressip;
    std::vector<Ipv4Addr> egress;
    std::vector<Ipv4Addr> ingress;
    std::vector<FiveTuple> filter;
    std::vector<Ipv4Addr> rw_egress;
    std::optional<Ipv4Addr> rw_release_container;
    bool clear_all_egress = false;
  };
  std::vector<PerHost> hosts;

  std::size_t total() const;
};

AffectedKeys derive_affected_keys(Cluster& cluster, const NetworkChange& change);

// The four-step hold-on procedure as separately runnable steps:
// (1) raise hold-on, (2) remove affected entries, (3) mutate the fallback,
// (4) clear hold-on. Validates the change at construction.
class ChangeExecution {
 public:
  ChangeExecution(Cluster& cluster, NetworkChange change);

  // Runs the next step; returns its number (1-4).
  int run_step();
  void run_all();
  int steps_done() const { return steps_done_; }
  bool done() const { return steps_done_ == 4; }
  const NetworkChange& change() const { return change_; }
  std::size_t removed_entries() const { return removed_; }

 private:
  std::vector<Host*> hold_scope();
  void remove_affected();
  void mutate();

  Cluster& cluster_;
  NetworkChange change_;
  std::optional<FilterRule> removed_rule_;
  int steps_done_ = 0;
  std::size_t removed_ = 0;
};

void apply_change(Cluster& cluster, const NetworkChange& change);

// Drops routes and the daemon registration. Remote caches are left to age
// out; packets still sent at the container fall back and drop there.
// Returns false for an unknown IP.
bool delete_container(Cluster& cluster, Ipv4Addr ip);

}  // namespace oncache
