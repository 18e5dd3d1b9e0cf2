#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oncache/cluster.hpp"
#include "oncache/coherency.hpp"
#include "oncache/scenario.hpp"

namespace oncache {

// Exact fraction with a positive denominator, always reduced.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  bool is_integer() const { return den_ == 1; }
  double to_double() const { return static_cast<double>(num_) / den_; }
  // "n" or "n/d".
  std::string to_string() const;

  friend Rational operator+(Rational a, Rational b);
  friend Rational operator-(Rational a, Rational b);
  friend Rational operator*(Rational a, Rational b);
  friend Rational operator/(Rational a, Rational b);
  bool operator==(const Rational&) const = default;

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

// Per-stage CPU share in percent, indexed by Stage.
struct StageWeights {
  std::array<std::int64_t, kStageCount> egress{};
  std::array<std::int64_t, kStageCount> ingress{};

  static StageWeights defaults();
};

enum class PathClass : std::uint8_t {
  kEgressFast,
  kEgressFallback,
  kIngressFast,
  kIngressFallback,
  kLocal,  // intra-host, either direction
};
inline constexpr std::size_t kPathClassCount = 5;

const char* path_class_name(PathClass c);

struct ClassStages {
  std::uint64_t packets = 0;
  std::array<std::uint64_t, kStageCount> stages{};
};

struct FlowMetrics {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t fastpath_hits = 0;
  std::uint64_t fallback_traversals = 0;
  std::uint64_t pipeline_entries = 0;
  std::uint64_t miss_marks_set = 0;
  std::uint64_t cache_inits = 0;
  std::uint64_t wire_bytes = 0;
  std::map<std::string, std::uint64_t> drop_reasons;
  std::array<std::uint64_t, kStageCount> egress_stages{};
  std::array<std::uint64_t, kStageCount> ingress_stages{};
  std::array<ClassStages, kPathClassCount> classes{};

  std::uint64_t in_flight() const { return sent - delivered - dropped; }
};

struct DirectionCost {
  Rational fastpath;  // modelled cost per packet
  Rational fallback;
  Rational reduction_percent;
};

struct CostReport {
  DirectionCost egress;
  DirectionCost ingress;
};

// Average stage cost per packet of each class. A class without packets is
// charged its nominal stage set: fast egress executes container_stack, link
// and (without rpeer) veth_pair; fast ingress link and container_stack;
// fallback every stage.
CostReport cost_report(const FlowMetrics& metrics, const StageWeights& weights,
                       bool rpeer);

enum class PacketOutcome : std::uint8_t { kInFlight, kDelivered, kDropped };

struct PacketRecord {
  std::uint64_t id = 0;
  std::size_t flow = 0;
  int dir = 0;  // 0 forward (flow src -> dst), 1 reverse
  std::uint64_t seq = 0;  // per flow and direction, from 0
  std::uint64_t sent_tick = 0;
  std::uint64_t done_tick = 0;
  std::optional<PathClass> egress_class;
  std::optional<PathClass> ingress_class;
  PacketOutcome outcome = PacketOutcome::kInFlight;
  std::string drop_reason;
  std::uint64_t done_event = 0;  // event index of delivery or drop
  bool chained = false;  // schedules the next request of a rr flow
};

// One of the four steps of a network change, stamped on execution.
struct ChangeStamp {
  std::size_t change = 0;
  int step = 0;
  std::uint64_t tick = 0;
  std::uint64_t event_index = 0;
  std::uint64_t delivered = 0;  // aggregate counters right after the step
  std::uint64_t cache_inits = 0;
  std::uint64_t fastpath_hits = 0;
};

struct FastpathObservation {
  std::size_t host = 0;
  Direction direction = Direction::kEgress;
  const ParsedFrame& input;
  const ParsedFrame& output;
  std::uint64_t tick = 0;
  std::uint32_t ifidx = 0;  // redirect target: host interface or host-side veth
};

using FastpathObserver = std::function<void(const FastpathObservation&)>;

struct ObservedEvent {
  std::uint64_t index = 0;
  std::uint64_t tick = 0;
  std::string what;
};

struct MetricsReport {
  Mode mode = Mode::kFastpath;
  bool rpeer = false;
  std::uint64_t seed = 0;
  std::uint64_t final_tick = 0;
  std::uint64_t events = 0;
  FlowMetrics aggregate;
  std::vector<std::pair<std::string, FlowMetrics>> flows;
  std::vector<ChangeStamp> changes;
  CostReport cost;
  std::vector<std::pair<std::string, CostReport>> flow_costs;
};

std::string format_text_report(const MetricsReport& r);
// Single JSON object, fixed key order.
std::string format_machine_report(const MetricsReport& r);

// Discrete-event world: one tick per scheduler quantum, one tick per
// inter-host hop, intra-host delivery within the tick.
class Simulator {
 public:
  explicit Simulator(const Scenario& scenario);
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  // Executes every task of the next pending tick.
  std::vector<ObservedEvent> step();
  bool pending() const { return !queue_.empty(); }
  std::optional<std::uint64_t> next_tick() const;
  // Steps until nothing is pending.
  MetricsReport run();
  MetricsReport report() const;

  void set_fastpath_observer(FastpathObserver observer) {
    observer_ = std::move(observer);
  }

  // Extra packets of a flow in its forward direction.
  void schedule_send(std::uint64_t tick, const std::string& flow,
                     std::uint64_t packets = 1);
  // Steps k = 1..4 run at tick + (k-1) * gap. Returns the change index.
  std::size_t schedule_change(std::uint64_t tick, NetworkChange change,
                              std::uint64_t gap = 0, int line = 0);
  // Step k runs at step_ticks[k-1]; ticks must be non-decreasing. Within a
  // tick, tasks run in scheduling order.
  std::size_t schedule_change(const std::array<std::uint64_t, 4>& step_ticks,
                              NetworkChange change, int line = 0);
  void schedule_callback(std::uint64_t tick, std::function<void()> fn);

  Cluster& cluster() { return *cluster_; }
  const Scenario& scenario() const { return scenario_; }
  std::uint64_t now() const { return now_; }
  std::uint64_t events_executed() const { return event_index_; }
  const std::vector<PacketRecord>& packets() const { return records_; }
  const std::vector<ChangeStamp>& change_stamps() const { return stamps_; }
  const FlowMetrics& aggregate() const { return aggregate_; }
  const FlowMetrics& flow_metrics(std::size_t flow) const {
    return flows_.at(flow).metrics;
  }
  std::size_t flow_index(const std::string& name) const;
  // Payload digests in delivery order for one flow direction.
  const std::vector<std::uint64_t>& delivered_payloads(std::size_t flow,
                                                       int dir) const {
    return flows_.at(flow).payloads[dir];
  }

 private:
  struct FlowState {
    FlowSpec spec;
    Ipv4Addr ip[2];  // [0] flow src, [1] flow dst
    std::uint64_t remaining = 0;  // scheduled forward sends still to go
    std::uint64_t next_seq[2] = {0, 0};
    std::uint32_t tcp_seq[2] = {1, 1};
    std::uint64_t acked = 0;  // forward deliveries since the last ack
    std::mt19937_64 rng[2];
    std::vector<std::uint64_t> payloads[2];
    FlowMetrics metrics;
  };

  struct Task {
    std::function<void()> fn;
  };

  void schedule(std::uint64_t tick, std::function<void()> fn);
  void run_tick();
  void run_change_step(std::size_t change, int line);
  void schedule_script_event(const ScenarioEvent& e);
  void schedule_flow(std::size_t flow);
  void scheduled_send(std::size_t flow);

  // Packet path.
  void send_packet(std::size_t flow, int dir, bool chained);
  void egress(std::size_t host, ParsedFrame frame, std::uint64_t pkt);
  void fallback_egress(std::size_t host, ParsedFrame frame, std::uint64_t pkt,
                       StageSet stages);
  void emit(std::size_t host, ParsedFrame frame, std::uint64_t pkt);
  void arrive(std::size_t host, ParsedFrame frame, std::uint64_t pkt);
  void fallback_ingress(std::size_t host, ParsedFrame frame,
                        std::uint64_t pkt, StageSet stages);
  void deliver(std::size_t host, std::uint32_t veth, ParsedFrame frame,
               std::uint64_t pkt, bool from_tunnel);
  void drop(std::uint64_t pkt, const std::string& reason);
  void on_delivered(const PacketRecord& rec);

  // Accounting.
  template <typename F>
  void bump(std::uint64_t pkt, F&& f) {
    f(aggregate_);
    f(flows_[records_[pkt].flow].metrics);
  }
  // Dropped packets keep their stage counts but stay out of the per-class
  // cost averages.
  void account(std::uint64_t pkt, Direction dir, PathClass cls,
               StageSet stages, bool priced = true);
  bool init_allowed(const Host& h) const;
  void note_init(std::uint64_t pkt, bool initialized);

  // Script events.
  void flush_cache_key(const ScenarioEvent& e);
  void churn_step(std::vector<std::size_t> hosts, std::uint64_t entries,
                  std::uint64_t rounds, std::uint64_t per_tick,
                  std::uint64_t done);
  void reconcile_ingress(Host& h);
  std::vector<std::size_t> host_scope(const std::string& name, int line);
  void note(const std::string& what);

  Scenario scenario_;
  std::unique_ptr<Cluster> cluster_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, Task> queue_;
  std::uint64_t seq_ = 0;
  std::uint64_t now_ = 0;
  std::uint64_t event_index_ = 0;
  std::vector<FlowState> flows_;
  std::vector<PacketRecord> records_;
  std::map<Ipv4Addr, std::uint16_t> container_ip_ids_;
  struct PendingChange {
    NetworkChange change;
    std::unique_ptr<ChangeExecution> exec;
  };
  std::vector<PendingChange> changes_;
  std::vector<ChangeStamp> stamps_;
  FlowMetrics aggregate_;
  FastpathObserver observer_;
  std::vector<ObservedEvent>* sink_ = nullptr;
};

// Builds the world for `scenario` with `seed` and runs it to exhaustion.
MetricsReport run_scenario(const Scenario& scenario, std::uint64_t seed);

// FNV-1a 64 digest used for delivered payload bytes.
std::uint64_t payload_digest(ByteSpan bytes);

}  // namespace oncache
