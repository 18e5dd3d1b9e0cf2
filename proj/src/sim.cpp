#include "oncache/sim.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>
#include <variant>

#include <nlohmann/json.hpp>

#include "oncache/fastpath.hpp"
#include "oncache/initpath.hpp"
#include "oncache/rewrite_tunnel.hpp"

namespace oncache {

// Rational

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::invalid_argument("zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  num_ = g ? num / g : 0;
  den_ = g ? den / g : 1;
}

std::string Rational::to_string() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational operator+(Rational a, Rational b) {
  return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_};
}
Rational operator-(Rational a, Rational b) {
  return {a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_};
}
Rational operator*(Rational a, Rational b) {
  return {a.num_ * b.num_, a.den_ * b.den_};
}
Rational operator/(Rational a, Rational b) {
  return {a.num_ * b.den_, a.den_ * b.num_};
}

StageWeights StageWeights::defaults() {
  return {{30, 6, 17, 24, 23}, {26, 4, 19, 21, 30}};
}

const char* path_class_name(PathClass c) {
  switch (c) {
    case PathClass::kEgressFast: return "egress_fast";
    case PathClass::kEgressFallback: return "egress_fallback";
    case PathClass::kIngressFast: return "ingress_fast";
    case PathClass::kIngressFallback: return "ingress_fallback";
    case PathClass::kLocal: return "local";
  }
  return "?";
}

namespace {

std::size_t idx(Stage s) { return static_cast<std::size_t>(s); }
std::size_t idx(PathClass c) { return static_cast<std::size_t>(c); }

Rational class_cost(const ClassStages& cs,
                    const std::array<std::int64_t, kStageCount>& w,
                    StageSet nominal) {
  std::int64_t total = 0;
  if (cs.packets == 0) {
    for (Stage s : kAllStages) {
      if (nominal.has(s)) total += w[idx(s)];
    }
    return Rational(total);
  }
  for (Stage s : kAllStages) {
    total += w[idx(s)] * static_cast<std::int64_t>(cs.stages[idx(s)]);
  }
  return Rational(total, static_cast<std::int64_t>(cs.packets));
}

DirectionCost direction_cost(Rational fast, Rational fallback) {
  DirectionCost d{fast, fallback, Rational(0)};
  if (fallback.num() != 0) {
    d.reduction_percent = (fallback - fast) / fallback * Rational(100);
  }
  return d;
}

StageSet stages_of(std::initializer_list<Stage> list) {
  StageSet s;
  for (Stage st : list) s.add(st);
  return s;
}

}  // namespace

CostReport cost_report(const FlowMetrics& m, const StageWeights& w,
                       bool rpeer) {
  StageSet all;
  for (Stage s : kAllStages) all.add(s);
  StageSet fast_egress = stages_of({Stage::kContainerStack, Stage::kLink});
  if (!rpeer) fast_egress.add(Stage::kVethPair);
  const StageSet fast_ingress =
      stages_of({Stage::kLink, Stage::kContainerStack});

  CostReport r;
  r.egress = direction_cost(
      class_cost(m.classes[idx(PathClass::kEgressFast)], w.egress, fast_egress),
      class_cost(m.classes[idx(PathClass::kEgressFallback)], w.egress, all));
  r.ingress = direction_cost(
      class_cost(m.classes[idx(PathClass::kIngressFast)], w.ingress,
                 fast_ingress),
      class_cost(m.classes[idx(PathClass::kIngressFallback)], w.ingress, all));
  return r;
}

std::uint64_t payload_digest(ByteSpan bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Simulator

Simulator::Simulator(const Scenario& scenario) : scenario_(scenario) {
  cluster_ = build_topology(scenario_);
  for (const ScenarioEvent& e : scenario_.events) schedule_script_event(e);
  flows_.resize(scenario_.flows.size());
  for (std::size_t i = 0; i < scenario_.flows.size(); ++i) {
    FlowState& f = flows_[i];
    f.spec = scenario_.flows[i];
    f.ip[0] = cluster_->container(f.spec.src)->ip;
    f.ip[1] = cluster_->container(f.spec.dst)->ip;
    f.remaining = f.spec.count;
    for (int d = 0; d < 2; ++d) {
      f.rng[d].seed(scenario_.seed * 0x9e3779b97f4a7c15ull + 2 * i + d + 1);
    }
    schedule_flow(i);
  }
}

void Simulator::schedule(std::uint64_t tick, std::function<void()> fn) {
  queue_.emplace(std::make_pair(tick, seq_++), Task{std::move(fn)});
}

void Simulator::schedule_callback(std::uint64_t tick,
                                  std::function<void()> fn) {
  schedule(tick, std::move(fn));
}

std::optional<std::uint64_t> Simulator::next_tick() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.begin()->first.first;
}

void Simulator::run_tick() {
  if (queue_.empty()) return;
  now_ = queue_.begin()->first.first;
  while (!queue_.empty() && queue_.begin()->first.first == now_) {
    auto node = queue_.extract(queue_.begin());
    ++event_index_;
    node.mapped().fn();
  }
}

std::vector<ObservedEvent> Simulator::step() {
  std::vector<ObservedEvent> out;
  sink_ = &out;
  try {
    run_tick();
  } catch (...) {
    sink_ = nullptr;
    throw;
  }
  sink_ = nullptr;
  return out;
}

MetricsReport Simulator::run() {
  while (!queue_.empty()) run_tick();
  return report();
}

void Simulator::note(const std::string& what) {
  if (sink_) sink_->push_back({event_index_, now_, what});
}

std::size_t Simulator::flow_index(const std::string& name) const {
  for (std::size_t i = 0; i < flows_.size(); ++i) {
    if (flows_[i].spec.name == name) return i;
  }
  throw std::out_of_range("unknown flow '" + name + "'");
}

// Flows

void Simulator::schedule_flow(std::size_t flow) {
  if (flows_[flow].remaining == 0) return;
  schedule(flows_[flow].spec.start, [this, flow] { scheduled_send(flow); });
}

void Simulator::scheduled_send(std::size_t flow) {
  FlowState& f = flows_[flow];
  if (f.remaining == 0) return;
  --f.remaining;
  const bool rr = f.spec.pattern == FlowPattern::kRequestResponse;
  send_packet(flow, 0, rr);
  if (!rr && f.remaining > 0) {
    schedule(now_ + f.spec.interval, [this, flow] { scheduled_send(flow); });
  }
}

void Simulator::schedule_send(std::uint64_t tick, const std::string& flow,
                              std::uint64_t packets) {
  const std::size_t i = flow_index(flow);
  schedule(tick, [this, i, packets] {
    for (std::uint64_t n = 0; n < packets; ++n) send_packet(i, 0, false);
  });
}

void Simulator::send_packet(std::size_t flow, int dir, bool chained) {
  FlowState& f = flows_[flow];
  const ContainerSpec* src = cluster_->container(f.ip[dir]);
  if (!src) return;  // sender no longer exists
  const std::size_t host = cluster_->host_index(src->host);
  const Host& h = *cluster_->hosts()[host];

  ContainerFrameSpec spec;
  spec.dst_mac = h.spec.gateway_mac;
  spec.src_mac = src->mac;
  spec.src_ip = f.ip[dir];
  spec.dst_ip = f.ip[1 - dir];
  spec.tos = f.spec.tos;
  auto [id_it, unused] = container_ip_ids_.try_emplace(spec.src_ip, 1);
  spec.ip_id = id_it->second++;
  spec.transport.protocol = f.spec.protocol;
  if (f.spec.protocol == kIpProtoIcmp) {
    spec.transport.src_port = f.spec.src_port;
    spec.transport.icmp_type = dir == 0 ? 8 : 0;
    spec.transport.tcp_seq = static_cast<std::uint32_t>(f.next_seq[dir]);
  } else {
    spec.transport.src_port = dir == 0 ? f.spec.src_port : f.spec.dst_port;
    spec.transport.dst_port = dir == 0 ? f.spec.dst_port : f.spec.src_port;
    spec.transport.tcp_seq = f.tcp_seq[dir];
    spec.transport.tcp_ack = f.tcp_seq[1 - dir];
  }
  const std::uint64_t seq = f.next_seq[dir]++;
  Bytes payload(f.spec.payload);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (i < 8) {
      payload[i] = static_cast<std::uint8_t>(seq >> (56 - 8 * i));
    } else if (i == 8) {
      payload[i] = static_cast<std::uint8_t>(dir);
    } else {
      payload[i] = static_cast<std::uint8_t>(f.rng[dir]());
    }
  }
  spec.payload = std::move(payload);
  f.tcp_seq[dir] += f.spec.payload;

  PacketRecord rec;
  rec.id = records_.size();
  rec.flow = flow;
  rec.dir = dir;
  rec.seq = seq;
  rec.sent_tick = now_;
  rec.chained = chained;
  records_.push_back(rec);
  bump(rec.id, [](FlowMetrics& m) { ++m.sent; });
  note("send " + f.spec.name + (dir ? " rev #" : " fwd #") +
       std::to_string(seq));
  egress(host, build_container_frame(spec), rec.id);
}

void Simulator::on_delivered(const PacketRecord& rec) {
  FlowState& f = flows_[rec.flow];
  const std::size_t flow = rec.flow;
  switch (f.spec.pattern) {
    case FlowPattern::kRequestResponse:
      if (rec.dir == 0) {
        const bool chained = rec.chained;
        schedule(now_, [this, flow, chained] { send_packet(flow, 1, chained); });
      } else if (rec.chained && f.remaining > 0) {
        schedule(now_ + f.spec.interval, [this, flow] { scheduled_send(flow); });
      }
      break;
    case FlowPattern::kAck:
      if (rec.dir == 0 && ++f.acked >= f.spec.ack_every) {
        f.acked = 0;
        schedule(now_, [this, flow] { send_packet(flow, 1, false); });
      }
      break;
    case FlowPattern::kOneway:
      break;
  }
}

// Accounting

void Simulator::account(std::uint64_t pkt, Direction dir, PathClass cls,
                        StageSet stages, bool priced) {
  PacketRecord& rec = records_[pkt];
  (dir == Direction::kEgress ? rec.egress_class : rec.ingress_class) = cls;
  bump(pkt, [&](FlowMetrics& m) {
    ClassStages& c = m.classes[idx(cls)];
    if (priced) ++c.packets;
    auto& per_dir =
        dir == Direction::kEgress ? m.egress_stages : m.ingress_stages;
    for (Stage s : kAllStages) {
      if (!stages.has(s)) continue;
      if (priced) ++c.stages[idx(s)];
      ++per_dir[idx(s)];
    }
  });
}

bool Simulator::init_allowed(const Host& h) const {
  return cluster_->mode() != Mode::kFallbackOnly && !h.hold_on;
}

void Simulator::note_init(std::uint64_t pkt, bool initialized) {
  if (initialized) bump(pkt, [](FlowMetrics& m) { ++m.cache_inits; });
}

void Simulator::drop(std::uint64_t pkt, const std::string& reason) {
  PacketRecord& rec = records_[pkt];
  rec.outcome = PacketOutcome::kDropped;
  rec.drop_reason = reason;
  rec.done_tick = now_;
  rec.done_event = event_index_;
  bump(pkt, [&](FlowMetrics& m) {
    ++m.dropped;
    ++m.drop_reasons[reason];
  });
  note("drop " + flows_[rec.flow].spec.name + " #" + std::to_string(rec.seq) +
       " " + reason);
}

// Packet path

void Simulator::egress(std::size_t host, ParsedFrame frame, std::uint64_t pkt) {
  Host& h = *cluster_->hosts()[host];
  const bool rpeer = scenario_.rpeer;
  StageSet st;
  st.add(Stage::kContainerStack);
  bump(pkt, [](FlowMetrics& m) { ++m.pipeline_entries; });
  if (cluster_->mode() == Mode::kFallbackOnly) {
    st.add(Stage::kVethPair);
    bump(pkt, [](FlowMetrics& m) { ++m.fallback_traversals; });
    fallback_egress(host, std::move(frame), pkt, st);
    return;
  }
  if (!rpeer) st.add(Stage::kVethPair);

  ProgContext ctx{h.caches, h.hold_on, 0, rpeer, h.fast_ip_id};
  std::optional<ParsedFrame> input;
  if (observer_) input = frame;
  Verdict v = cluster_->mode() == Mode::kRewriteTunnel
                  ? rw_egress_prog(std::move(frame), ctx, *h.rw)
                  : egress_prog(std::move(frame), ctx);
  if (auto* r = std::get_if<Redirect>(&v)) {
    h.next_fast_ip_id();
    bump(pkt, [](FlowMetrics& m) { ++m.fastpath_hits; });
    if (observer_) {
      observer_({host, Direction::kEgress, *input, r->frame, now_, r->ifidx});
    }
    st.add(Stage::kLink);
    account(pkt, Direction::kEgress, PathClass::kEgressFast, st);
    emit(host, std::move(r->frame), pkt);
    return;
  }
  if (auto* p = std::get_if<PassToFallback>(&v)) {
    bump(pkt, [&](FlowMetrics& m) {
      ++m.fallback_traversals;
      if (p->miss_marked) ++m.miss_marks_set;
    });
    if (rpeer) st.add(Stage::kVethPair);
    fallback_egress(host, std::move(p->frame), pkt, st);
    return;
  }
  account(pkt, Direction::kEgress, PathClass::kEgressFast, st, false);
  drop(pkt, "unexpected_verdict");
}

void Simulator::fallback_egress(std::size_t host, ParsedFrame frame,
                                std::uint64_t pkt, StageSet st) {
  Host& h = *cluster_->hosts()[host];
  bool local = false;
  if (frame.outer_ip()) {
    const Route* route =
        h.fallback.find_route(frame.ip_header(IpLayer::kOuter).dst);
    local = route && std::holds_alternative<LocalRoute>(*route);
  }
  EgressOutcome out = Drop{DropReason::kMalformed};
  try {
    out = h.fallback.egress(std::move(frame), now_, &st);
  } catch (const FrameError&) {
  }
  if (auto* w = std::get_if<WireFrame>(&out)) {
    st.add(Stage::kLink);
    account(pkt, Direction::kEgress, PathClass::kEgressFallback, st);
    emit(host, std::move(w->frame), pkt);
  } else if (auto* d = std::get_if<VethDelivery>(&out)) {
    account(pkt, Direction::kEgress, PathClass::kLocal, st);
    StageSet in;
    in.add(Stage::kContainerStack);
    account(pkt, Direction::kIngress, PathClass::kLocal, in);
    deliver(host, d->veth_ifidx, std::move(d->frame), pkt, false);
  } else {
    account(pkt, Direction::kEgress,
            local ? PathClass::kLocal : PathClass::kEgressFallback, st, false);
    drop(pkt, drop_reason_name(std::get<Drop>(out).reason));
  }
}

void Simulator::emit(std::size_t host, ParsedFrame frame, std::uint64_t pkt) {
  Host& h = *cluster_->hosts()[host];
  if (init_allowed(h)) {
    InitResult r = h.rw ? rw_egress_init_prog(std::move(frame), h.spec.ifidx,
                                              h.caches, *h.rw)
                        : egress_init_prog(std::move(frame), h.spec.ifidx,
                                           h.caches);
    note_init(pkt, r.initialized);
    frame = std::move(r.frame);
  }
  scrub_marks(frame);
  const std::uint64_t size = frame.size();
  bump(pkt, [&](FlowMetrics& m) { m.wire_bytes += size; });
  Host* to = cluster_->host_by_mac(frame.ethernet(IpLayer::kOuter).dst);
  if (!to) {
    drop(pkt, "underlay_unreachable");
    return;
  }
  const std::size_t dst = cluster_->host_index(to->spec.name);
  schedule(now_ + 1, [this, dst, f = std::move(frame), pkt]() mutable {
    arrive(dst, std::move(f), pkt);
  });
}

void Simulator::arrive(std::size_t host, ParsedFrame frame,
                       std::uint64_t pkt) {
  Host& h = *cluster_->hosts()[host];
  StageSet st;
  st.add(Stage::kLink);
  bump(pkt, [](FlowMetrics& m) { ++m.pipeline_entries; });
  if (cluster_->mode() == Mode::kFallbackOnly) {
    bump(pkt, [](FlowMetrics& m) { ++m.fallback_traversals; });
    fallback_ingress(host, std::move(frame), pkt, st);
    return;
  }

  ProgContext ctx{h.caches, h.hold_on, h.spec.ifidx, scenario_.rpeer, 0};
  std::optional<ParsedFrame> input;
  if (observer_) input = frame;
  auto fast = [&](RedirectPeer& r) {
    bump(pkt, [](FlowMetrics& m) { ++m.fastpath_hits; });
    if (observer_) {
      observer_({host, Direction::kIngress, *input, r.frame, now_, r.veth_ifidx});
    }
    st.add(Stage::kContainerStack);
    account(pkt, Direction::kIngress, PathClass::kIngressFast, st);
    deliver(host, r.veth_ifidx, std::move(r.frame), pkt, true);
  };
  auto pass = [&](bool marked) {
    bump(pkt, [&](FlowMetrics& m) {
      ++m.fallback_traversals;
      if (marked) ++m.miss_marks_set;
    });
  };

  if (h.rw) {
    RwIngressVerdict v = rw_ingress_prog(std::move(frame), ctx, *h.rw);
    if (auto* r = std::get_if<RedirectPeer>(&v)) {
      fast(*r);
    } else if (auto* p = std::get_if<PassToFallback>(&v)) {
      pass(p->miss_marked);
      fallback_ingress(host, std::move(p->frame), pkt, st);
    } else {
      auto& restored = std::get<PassRestored>(v);
      pass(restored.miss_marked);
      st.add(Stage::kHostStack);
      IngressOutcome out = Drop{DropReason::kMalformed};
      try {
        out = h.fallback.ingress_inner(std::move(restored.frame), now_, &st);
      } catch (const FrameError&) {
      }
      if (auto* d = std::get_if<VethDelivery>(&out)) {
        st.add(Stage::kContainerStack);
        account(pkt, Direction::kIngress, PathClass::kIngressFallback, st);
        deliver(host, d->veth_ifidx, std::move(d->frame), pkt, false);
      } else {
        account(pkt, Direction::kIngress, PathClass::kIngressFallback, st, false);
        drop(pkt, std::holds_alternative<Drop>(out)
                      ? drop_reason_name(std::get<Drop>(out).reason)
                      : "host_local");
      }
    }
    return;
  }

  Verdict v = ingress_prog(std::move(frame), ctx);
  if (auto* r = std::get_if<RedirectPeer>(&v)) {
    fast(*r);
  } else if (auto* p = std::get_if<PassToFallback>(&v)) {
    pass(p->miss_marked);
    fallback_ingress(host, std::move(p->frame), pkt, st);
  } else {
    account(pkt, Direction::kIngress, PathClass::kIngressFast, st, false);
    drop(pkt, "unexpected_verdict");
  }
}

void Simulator::fallback_ingress(std::size_t host, ParsedFrame frame,
                                 std::uint64_t pkt, StageSet st) {
  Host& h = *cluster_->hosts()[host];
  const bool tunnel = frame.is_tunnel();
  IngressOutcome out = Drop{DropReason::kMalformed};
  try {
    out = h.fallback.ingress(std::move(frame), now_, &st);
  } catch (const FrameError&) {
  }
  if (auto* d = std::get_if<VethDelivery>(&out)) {
    st.add(Stage::kContainerStack);
    account(pkt, Direction::kIngress, PathClass::kIngressFallback, st);
    deliver(host, d->veth_ifidx, std::move(d->frame), pkt, tunnel);
  } else if (std::holds_alternative<HostLocal>(out)) {
    account(pkt, Direction::kIngress, PathClass::kIngressFallback, st, false);
    drop(pkt, "host_local");
  } else {
    account(pkt, Direction::kIngress, PathClass::kIngressFallback, st, false);
    drop(pkt, drop_reason_name(std::get<Drop>(out).reason));
  }
}

void Simulator::deliver(std::size_t host, std::uint32_t veth,
                        ParsedFrame frame, std::uint64_t pkt,
                        bool from_tunnel) {
  Host& h = *cluster_->hosts()[host];
  if (init_allowed(h)) {
    InitResult r =
        h.rw ? rw_ingress_init_prog(std::move(frame), h.caches, *h.rw,
                                    from_tunnel)
             : ingress_init_prog(std::move(frame), h.caches);
    note_init(pkt, r.initialized);
    frame = std::move(r.frame);
  }
  scrub_marks(frame);
  if (h.rw) clear_key_carried(frame);
  const auto ip = h.container_on(veth);
  if (!ip) {
    drop(pkt, "no_container");
    return;
  }
  if (!frame.outer_ip() || frame.ip_header(IpLayer::kOuter).dst != *ip) {
    drop(pkt, "misdelivered");
    return;
  }
  PacketRecord& rec = records_[pkt];
  rec.outcome = PacketOutcome::kDelivered;
  rec.done_tick = now_;
  rec.done_event = event_index_;
  bump(pkt, [](FlowMetrics& m) { ++m.delivered; });
  FlowState& f = flows_[rec.flow];
  f.payloads[rec.dir].push_back(payload_digest(frame.l4_payload(IpLayer::kOuter)));
  note("deliver " + f.spec.name + (rec.dir ? " rev #" : " fwd #") +
       std::to_string(rec.seq));
  on_delivered(rec);
}

// Network changes and script events

std::size_t Simulator::schedule_change(std::uint64_t tick,
                                       NetworkChange change,
                                       std::uint64_t gap, int line) {
  return schedule_change({tick, tick + gap, tick + 2 * gap, tick + 3 * gap},
                         std::move(change), line);
}

std::size_t Simulator::schedule_change(
    const std::array<std::uint64_t, 4>& ticks, NetworkChange change,
    int line) {
  for (std::size_t k = 1; k < ticks.size(); ++k) {
    if (ticks[k] < ticks[k - 1]) {
      throw std::invalid_argument("change step ticks must not decrease");
    }
  }
  const std::size_t index = changes_.size();
  changes_.push_back({std::move(change), nullptr});
  for (std::uint64_t t : ticks) {
    schedule(t, [this, index, line] { run_change_step(index, line); });
  }
  return index;
}

void Simulator::run_change_step(std::size_t index, int line) {
  PendingChange& pc = changes_[index];
  int step = 0;
  try {
    if (!pc.exec) {
      pc.exec = std::make_unique<ChangeExecution>(*cluster_, pc.change);
    }
    step = pc.exec->run_step();
  } catch (const ChangeError& e) {
    throw ScenarioError(line, e.what());
  } catch (const TopologyError& e) {
    throw ScenarioError(line, e.what());
  } catch (const ConfigError& e) {
    throw ScenarioError(line, e.what());
  }
  stamps_.push_back({index, step, now_, event_index_, aggregate_.delivered,
                     aggregate_.cache_inits, aggregate_.fastpath_hits});
  note(std::string("change ") + std::to_string(index) + " " +
       change_kind_name(pc.change.kind) + " step " + std::to_string(step));
}

std::vector<std::size_t> Simulator::host_scope(const std::string& name,
                                               int line) {
  std::vector<std::size_t> out;
  if (name == "*") {
    for (std::size_t i = 0; i < cluster_->hosts().size(); ++i) {
      out.push_back(i);
    }
    return out;
  }
  if (!cluster_->host(name)) {
    throw ScenarioError(line, "unknown host '" + name + "'");
  }
  out.push_back(cluster_->host_index(name));
  return out;
}

void Simulator::schedule_script_event(const ScenarioEvent& e) {
  using Kind = ScenarioEvent::Kind;
  switch (e.kind) {
    case Kind::kSend: {
      const std::string flow = e.flow;
      const std::uint64_t n = e.packets;
      schedule(e.tick, [this, flow, n] {
        const std::size_t i = flow_index(flow);
        for (std::uint64_t k = 0; k < n; ++k) send_packet(i, 0, false);
      });
      break;
    }
    case Kind::kAddFilter:
    case Kind::kRemoveFilter:
    case Kind::kUnderlayChange:
      schedule_change(e.tick, e.change, e.gap, e.line);
      break;
    case Kind::kMigrate: {
      NetworkChange c = e.change;
      const ContainerSpec* spec = cluster_->container(e.container);
      if (!spec) {
        throw ScenarioError(e.line, "unknown container '" + e.container + "'");
      }
      c.container = spec->ip;
      schedule_change(e.tick, std::move(c), e.gap, e.line);
      break;
    }
    case Kind::kDeleteContainer:
      schedule(e.tick, [this, e] {
        const ContainerSpec* c = cluster_->container(e.container);
        if (!c || !delete_container(*cluster_, c->ip)) {
          throw ScenarioError(e.line,
                              "container '" + e.container + "' does not exist");
        }
        note("delete_container " + e.container);
      });
      break;
    case Kind::kFlushCacheKey:
      schedule(e.tick, [this, e] { flush_cache_key(e); });
      break;
    case Kind::kSetHoldOn:
      schedule(e.tick, [this, e] {
        for (std::size_t i : host_scope(e.host, e.line)) {
          set_hold_on(*cluster_->hosts()[i], e.flag);
        }
        note("set_hold_on " + e.host + (e.flag ? " 1" : " 0"));
      });
      break;
    case Kind::kChurn: {
      const ScenarioEvent ev = e;
      schedule(e.tick, [this, ev] {
        churn_step(host_scope(ev.host, ev.line), ev.churn_entries,
                   ev.churn_rounds, ev.churn_per_tick, 0);
      });
      break;
    }
  }
}

void Simulator::flush_cache_key(const ScenarioEvent& e) {
  auto container_or_ip = [&](const std::string& key) {
    if (const ContainerSpec* c = cluster_->container(key)) return c->ip;
    try {
      return Ipv4Addr::parse(key);
    } catch (const std::exception&) {
      throw ScenarioError(e.line, "unknown container '" + key + "'");
    }
  };
  auto host_or_ip = [&](const std::string& key) {
    if (const Host* h = cluster_->host(key)) return h->spec.ip;
    try {
      return Ipv4Addr::parse(key);
    } catch (const std::exception&) {
      throw ScenarioError(e.line, "unknown host '" + key + "'");
    }
  };
  std::size_t erased = 0;
  for (std::size_t i : host_scope(e.host, e.line)) {
    Host& h = *cluster_->hosts()[i];
    switch (e.map) {
      case CacheMap::kEgressIp:
        erased += h.caches.egressip.erase(container_or_ip(e.key));
        break;
      case CacheMap::kEgress:
        erased += h.caches.egress.erase(host_or_ip(e.key));
        break;
      case CacheMap::kIngress:
        erased += h.caches.ingress.erase(container_or_ip(e.key));
        reconcile_ingress(h);
        break;
      case CacheMap::kFilter: {
        const FlowState& f = flows_[flow_index(e.flow)];
        const bool icmp = f.spec.protocol == kIpProtoIcmp;
        FiveTuple t{f.ip[0], f.ip[1],
                    static_cast<std::uint16_t>(icmp ? 0 : f.spec.src_port),
                    static_cast<std::uint16_t>(icmp ? 0 : f.spec.dst_port),
                    f.spec.protocol};
        erased += h.caches.filter.erase(e.reverse_key ? t.reversed() : t);
        break;
      }
    }
  }
  note("flush_cache_key " + e.host + " " + e.key + " erased " +
       std::to_string(erased));
}

void Simulator::reconcile_ingress(Host& h) {
  for (const auto& [veth, ip] : h.veths) {
    h.caches.ingress.put(ip, IngressInfo{veth, {}, {}}, PutMode::kInsertIfAbsent);
  }
}

namespace {

Ipv4Addr synthetic_ip(std::uint64_t k) {
  return Ipv4Addr(static_cast<std::uint32_t>(0xf0000000u + (k & 0xffffff)));
}

}  // namespace

void Simulator::churn_step(std::vector<std::size_t> hosts,
                           std::uint64_t entries, std::uint64_t rounds,
                           std::uint64_t per_tick, std::uint64_t done) {
  const std::uint64_t total = rounds * 2 * entries;
  const std::uint64_t end = std::min(total, done + per_tick);
  for (std::size_t hi : hosts) {
    Host& h = *cluster_->hosts()[hi];
    for (std::uint64_t op = done; op < end; ++op) {
      const std::uint64_t w = op % (2 * entries);
      const Ipv4Addr ip = synthetic_ip(w % entries);
      const FiveTuple t{ip, ip, 0, 0, kIpProtoUdp};
      if (w < entries) {
        h.caches.egressip.put(ip, ip);
        h.caches.egress.put(ip, EgressInfo{});
        h.caches.ingress.put(ip, IngressInfo{});
        h.caches.filter.put(t, FilterAction{});
      } else {
        h.caches.egressip.erase(ip);
        h.caches.egress.erase(ip);
        h.caches.ingress.erase(ip);
        h.caches.filter.erase(t);
      }
    }
    reconcile_ingress(h);
  }
  note("churn ops " + std::to_string(done) + ".." + std::to_string(end));
  if (end < total) {
    schedule(now_ + 1, [this, hosts, entries, rounds, per_tick, end] {
      churn_step(hosts, entries, rounds, per_tick, end);
    });
  }
}

// Reports

MetricsReport Simulator::report() const {
  MetricsReport r;
  r.mode = cluster_->mode();
  r.rpeer = scenario_.rpeer;
  r.seed = scenario_.seed;
  r.final_tick = now_;
  r.events = event_index_;
  r.aggregate = aggregate_;
  r.changes = stamps_;
  const StageWeights w = StageWeights::defaults();
  r.cost = cost_report(aggregate_, w, scenario_.rpeer);
  for (const FlowState& f : flows_) {
    r.flows.emplace_back(f.spec.name, f.metrics);
    r.flow_costs.emplace_back(f.spec.name,
                              cost_report(f.metrics, w, scenario_.rpeer));
  }
  return r;
}

MetricsReport run_scenario(const Scenario& scenario, std::uint64_t seed) {
  Scenario s = scenario;
  s.seed = seed;
  Simulator sim(s);
  return sim.run();
}

namespace {

using ojson = nlohmann::ordered_json;

ojson stages_json(const std::array<std::uint64_t, kStageCount>& a) {
  ojson j = ojson::object();
  for (Stage s : kAllStages) j[stage_name(s)] = a[idx(s)];
  return j;
}

ojson cost_json(const CostReport& c) {
  auto dir = [](const DirectionCost& d) {
    ojson j = ojson::object();
    j["fastpath"] = d.fastpath.to_string();
    j["fallback"] = d.fallback.to_string();
    j["reduction_percent"] = d.reduction_percent.to_string();
    return j;
  };
  ojson j = ojson::object();
  j["egress"] = dir(c.egress);
  j["ingress"] = dir(c.ingress);
  return j;
}

ojson metrics_json(const FlowMetrics& m, const CostReport& cost) {
  ojson j = ojson::object();
  j["sent"] = m.sent;
  j["delivered"] = m.delivered;
  j["dropped"] = m.dropped;
  j["in_flight"] = m.in_flight();
  j["fastpath_hits"] = m.fastpath_hits;
  j["fallback_traversals"] = m.fallback_traversals;
  j["pipeline_entries"] = m.pipeline_entries;
  j["miss_marks_set"] = m.miss_marks_set;
  j["cache_inits"] = m.cache_inits;
  j["wire_bytes"] = m.wire_bytes;
  ojson drops = ojson::object();
  for (const auto& [k, v] : m.drop_reasons) drops[k] = v;
  j["drop_reasons"] = drops;
  j["stages"] = {{"egress", stages_json(m.egress_stages)},
                 {"ingress", stages_json(m.ingress_stages)}};
  ojson classes = ojson::object();
  for (std::size_t c = 0; c < kPathClassCount; ++c) {
    classes[path_class_name(static_cast<PathClass>(c))] = m.classes[c].packets;
  }
  j["path_classes"] = classes;
  j["cost"] = cost_json(cost);
  return j;
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' ');
}

std::string num(std::uint64_t v, std::size_t w) {
  const std::string s = std::to_string(v);
  return s.size() >= w ? " " + s : std::string(w - s.size(), ' ') + s;
}

void metrics_row(std::ostringstream& out, const std::string& name,
                 const FlowMetrics& m) {
  out << pad(name, 12) << num(m.sent, 9) << num(m.delivered, 10)
      << num(m.dropped, 8) << num(m.fastpath_hits, 9)
      << num(m.fallback_traversals, 10) << num(m.miss_marks_set, 7)
      << num(m.cache_inits, 7) << num(m.wire_bytes, 12) << "\n";
}

}  // namespace

std::string format_machine_report(const MetricsReport& r) {
  ojson j = ojson::object();
  j["mode"] = mode_name(r.mode);
  j["rpeer"] = r.rpeer;
  j["seed"] = r.seed;
  j["final_tick"] = r.final_tick;
  j["events"] = r.events;
  j["aggregate"] = metrics_json(r.aggregate, r.cost);
  ojson flows = ojson::array();
  for (std::size_t i = 0; i < r.flows.size(); ++i) {
    ojson f = metrics_json(r.flows[i].second, r.flow_costs[i].second);
    ojson named = ojson::object();
    named["name"] = r.flows[i].first;
    named.update(f);
    flows.push_back(named);
  }
  j["flows"] = flows;
  ojson changes = ojson::array();
  for (const ChangeStamp& c : r.changes) {
    changes.push_back({{"change", c.change},
                       {"step", c.step},
                       {"tick", c.tick},
                       {"event_index", c.event_index},
                       {"delivered", c.delivered},
                       {"cache_inits", c.cache_inits},
                       {"fastpath_hits", c.fastpath_hits}});
  }
  j["changes"] = changes;
  return j.dump(2) + "\n";
}

std::string format_text_report(const MetricsReport& r) {
  std::ostringstream out;
  out << "mode " << mode_name(r.mode) << "  rpeer " << (r.rpeer ? "on" : "off")
      << "  seed " << r.seed << "  final_tick " << r.final_tick << "  events "
      << r.events << "\n\n";
  out << pad("flow", 12) << "     sent delivered dropped fastpath  fallback"
      << "   miss  inits  wire_bytes\n";
  for (const auto& [name, m] : r.flows) metrics_row(out, name, m);
  metrics_row(out, "total", r.aggregate);

  out << "\n" << pad("stages", 12);
  for (Stage s : kAllStages) out << pad(stage_name(s), 16);
  out << "\n";
  for (int d = 0; d < 2; ++d) {
    out << pad(d == 0 ? "egress" : "ingress", 12);
    const auto& a = d == 0 ? r.aggregate.egress_stages : r.aggregate.ingress_stages;
    for (Stage s : kAllStages) out << pad(std::to_string(a[idx(s)]), 16);
    out << "\n";
  }

  out << "\n" << pad("cost", 12) << pad("fastpath", 12) << pad("fallback", 12)
      << "reduction%\n";
  for (int d = 0; d < 2; ++d) {
    const DirectionCost& c = d == 0 ? r.cost.egress : r.cost.ingress;
    out << pad(d == 0 ? "egress" : "ingress", 12)
        << pad(c.fastpath.to_string(), 12) << pad(c.fallback.to_string(), 12)
        << c.reduction_percent.to_string() << "\n";
  }

  if (!r.aggregate.drop_reasons.empty()) {
    out << "\ndrops\n";
    for (const auto& [k, v] : r.aggregate.drop_reasons) {
      out << "  " << pad(k, 22) << v << "\n";
    }
  }
  if (!r.changes.empty()) {
    out << "\nchanges\n";
    for (const ChangeStamp& c : r.changes) {
      out << "  change " << c.change << " step " << c.step << " tick "
          << c.tick << " event " << c.event_index << " delivered "
          << c.delivered << "\n";
    }
  }
  return out.str();
}

}  // namespace oncache
