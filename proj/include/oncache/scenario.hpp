#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "oncache/cluster.hpp"
#include "oncache/coherency.hpp"
#include "oncache/fallback.hpp"

namespace oncache {

enum class FlowPattern {
  kOneway,           // fixed schedule, forward only
  kRequestResponse,  // each request waits for the previous response
  kAck,              // fixed-schedule data, one ack per N delivered
};

struct FlowSpec {
  std::string name;
  std::string src;  // container names
  std::string dst;
  std::uint8_t protocol = kIpProtoTcp;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  FlowPattern pattern = FlowPattern::kOneway;
  std::uint32_t ack_every = 1;
  std::uint64_t count = 1;
  std::uint32_t payload = 64;
  std::uint64_t start = 0;
  std::uint64_t interval = 1;
  std::uint8_t tos = 0;  // bits 0x0c are reserved for marks
};

enum class CacheMap { kEgressIp, kEgress, kIngress, kFilter };

struct ScenarioEvent {
  enum class Kind {
    kSend,
    kAddFilter,
    kRemoveFilter,
    kMigrate,
    kUnderlayChange,
    kDeleteContainer,
    kFlushCacheKey,
    kSetHoldOn,
    kChurn,
  };

  std::uint64_t tick = 0;
  Kind kind = Kind::kSend;
  int line = 0;

  std::string flow;          // kSend, kFlushCacheKey (filter key)
  std::uint64_t packets = 1;  // kSend
  NetworkChange change;      // change kinds
  std::uint64_t gap = 0;     // ticks between change steps
  std::string container;     // kMigrate, kDeleteContainer
  std::string host;          // kFlushCacheKey, kSetHoldOn, kChurn ("*" = all)
  CacheMap map = CacheMap::kFilter;
  std::string key;           // kFlushCacheKey: IP, container/host name or flow
  bool reverse_key = false;  // kFlushCacheKey filter key of the reverse flow
  bool flag = false;         // kSetHoldOn
  std::uint64_t churn_entries = 0;
  std::uint64_t churn_rounds = 1;
  std::uint64_t churn_per_tick = 1;
};

struct Scenario {
  Mode mode = Mode::kFastpath;
  bool rpeer = false;
  std::optional<std::size_t> cache_size;
  std::uint64_t ct_timeout = ConntrackTable::kDefaultTimeout;
  std::uint64_t seed = 1;
  std::vector<HostSpec> hosts;
  std::vector<ContainerSpec> containers;
  std::vector<FlowSpec> flows;
  std::vector<FilterRule> rules;
  std::vector<ScenarioEvent> events;

  CacheCapacities capacities() const {
    return cache_size ? CacheCapacities::uniform(*cache_size)
                      : CacheCapacities{};
  }
};

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(int line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what
                                    : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Line-oriented format; see README for the grammar. Throws ScenarioError.
Scenario parse_scenario(std::istream& in);
Scenario parse_scenario_text(const std::string& text);
Scenario load_scenario_file(const std::string& path);

// Cross-reference checks (names, flow endpoints, ports); throws
// ScenarioError. build_topology runs it.
void validate_scenario(const Scenario& s);

// Hosts, containers and rules wired into a fresh cluster.
std::unique_ptr<Cluster> build_topology(const Scenario& s);

FilterRule parse_rule_fields(const std::vector<std::string>& fields,
                             std::size_t first, int line);

}  // namespace oncache
