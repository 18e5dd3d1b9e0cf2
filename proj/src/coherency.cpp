#include "oncache/coherency.hpp"

namespace oncache {

NetworkChange NetworkChange::add_filter(FilterRule rule) {
  NetworkChange c;
  c.kind = Kind::kAddFilter;
  c.rule = std::move(rule);
  return c;
}

NetworkChange NetworkChange::remove_filter(std::uint32_t id) {
  NetworkChange c;
  c.kind = Kind::kRemoveFilter;
  c.rule_id = id;
  return c;
}

NetworkChange NetworkChange::migrate(Ipv4Addr container, std::string to_host) {
  NetworkChange c;
  c.kind = Kind::kMigrate;
  c.container = container;
  c.to_host = std::move(to_host);
  return c;
}

NetworkChange NetworkChange::underlay_change(std::string host, MacAddr mac) {
  NetworkChange c;
  c.kind = Kind::kUnderlayChange;
  c.host = std::move(host);
  c.new_mac = mac;
  return c;
}

const char* change_kind_name(NetworkChange::Kind k) {
  switch (k) {
    case NetworkChange::Kind::kAddFilter: return "add_filter";
    case NetworkChange::Kind::kRemoveFilter: return "remove_filter";
    case NetworkChange::Kind::kMigrate: return "migrate";
    case NetworkChange::Kind::kUnderlayChange: return "underlay_change";
  }
  return "?";
}

void set_hold_on(Host& host, bool flag) { host.hold_on = flag; }

std::size_t AffectedKeys::total() const {
  std::size_t n = 0;
  for (const PerHost& h : hosts) {
    n += h.egressip.size() + h.egress.size() + h.ingress.size() +
         h.filter.size() + h.rw_egress.size();
  }
  return n;
}

namespace {

void filter_keys(const Host& h, const FilterRule& rule,
                 AffectedKeys::PerHost& out) {
  for (const auto& [t, action] : h.caches.filter.entries()) {
    if (rule.matches_tuple(t) || rule.matches_tuple(t.reversed())) {
      out.filter.push_back(t);
    }
  }
}

}  // namespace

AffectedKeys derive_affected_keys(Cluster& cluster,
                                  const NetworkChange& change) {
  AffectedKeys keys;
  auto& hosts = cluster.hosts();
  keys.hosts.resize(hosts.size());
  using Kind = NetworkChange::Kind;
  switch (change.kind) {
    case Kind::kAddFilter:
    case Kind::kRemoveFilter: {
      const FilterRule* rule = change.kind == Kind::kAddFilter
                                   ? &change.rule
                                   : cluster.rules().find(change.rule_id);
      if (!rule) break;
      for (std::size_t i = 0; i < hosts.size(); ++i) {
        filter_keys(*hosts[i], *rule, keys.hosts[i]);
      }
      break;
    }
    case Kind::kMigrate: {
      const ContainerSpec* c = cluster.container(change.container);
      const std::string from = c ? c->host : std::string();
      for (std::size_t i = 0; i < hosts.size(); ++i) {
        Host& h = *hosts[i];
        auto& out = keys.hosts[i];
        if (h.caches.egressip.contains(change.container)) {
          out.egressip.push_back(change.container);
        }
        const bool endpoint =
            h.spec.name == from || h.spec.name == change.to_host;
        if (endpoint && h.caches.ingress.contains(change.container)) {
          out.ingress.push_back(change.container);
        }
        if (h.rw) {
          if (h.rw->egress().contains(change.container)) {
            out.rw_egress.push_back(change.container);
          }
          out.rw_release_container = change.container;
        }
      }
      break;
    }
    case Kind::kUnderlayChange: {
      const Host* target = cluster.host(change.host);
      if (!target) break;
      const Ipv4Addr ip = target->spec.ip;
      for (std::size_t i = 0; i < hosts.size(); ++i) {
        Host& h = *hosts[i];
        auto& out = keys.hosts[i];
        if (&h == target) {
          for (const auto& [k, v] : h.caches.egress.entries()) {
            out.egress.push_back(k);
          }
          out.clear_all_egress = true;
          if (h.rw) {
            for (const auto& [k, v] : h.rw->egress().entries()) {
              out.rw_egress.push_back(k);
            }
          }
          continue;
        }
        if (h.caches.egress.contains(ip)) out.egress.push_back(ip);
        if (h.rw) {
          for (const auto& [k, v] : h.rw->egress().entries()) {
            if (v.dst_ip == ip) out.rw_egress.push_back(k);
          }
        }
      }
      break;
    }
  }
  return keys;
}

ChangeExecution::ChangeExecution(Cluster& cluster, NetworkChange change)
    : cluster_(cluster), change_(std::move(change)) {
  using Kind = NetworkChange::Kind;
  switch (change_.kind) {
    case Kind::kAddFilter:
      if (cluster_.rules().find(change_.rule.id)) {
        throw ChangeError("rule id " + std::to_string(change_.rule.id) +
                          " already installed");
      }
      break;
    case Kind::kRemoveFilter:
      if (!cluster_.rules().find(change_.rule_id)) {
        throw ChangeError("unknown rule id " + std::to_string(change_.rule_id));
      }
      break;
    case Kind::kMigrate:
      if (!cluster_.container(change_.container)) {
        throw ChangeError("unknown container " + change_.container.to_string());
      }
      if (!cluster_.host(change_.to_host)) {
        throw ChangeError("unknown host '" + change_.to_host + "'");
      }
      break;
    case Kind::kUnderlayChange:
      if (!cluster_.host(change_.host)) {
        throw ChangeError("unknown host '" + change_.host + "'");
      }
      break;
  }
  for (const std::string& name : change_.hold_hosts) {
    if (!cluster_.host(name)) {
      throw ChangeError("unknown hold-on host '" + name + "'");
    }
  }
}

std::vector<Host*> ChangeExecution::hold_scope() {
  std::vector<Host*> out;
  if (change_.hold_hosts.empty()) {
    for (auto& h : cluster_.hosts()) out.push_back(h.get());
  } else {
    for (const std::string& name : change_.hold_hosts) {
      out.push_back(cluster_.host(name));
    }
  }
  return out;
}

void ChangeExecution::remove_affected() {
  const AffectedKeys keys = derive_affected_keys(cluster_, change_);
  auto& hosts = cluster_.hosts();
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    Host& h = *hosts[i];
    const auto& k = keys.hosts[i];
    for (Ipv4Addr ip : k.egressip) removed_ += h.caches.egressip.erase(ip);
    if (k.clear_all_egress) {
      removed_ += h.caches.egress.size();
      h.caches.egress.clear();
    } else {
      for (Ipv4Addr ip : k.egress) removed_ += h.caches.egress.erase(ip);
    }
    for (Ipv4Addr ip : k.ingress) removed_ += h.caches.ingress.erase(ip);
    for (const FiveTuple& t : k.filter) removed_ += h.caches.filter.erase(t);
    if (h.rw) {
      for (Ipv4Addr ip : k.rw_egress) removed_ += h.rw->egress().erase(ip);
      if (k.rw_release_container) {
        removed_ += h.rw->release_container(*k.rw_release_container);
      }
    }
  }
}

void ChangeExecution::mutate() {
  using Kind = NetworkChange::Kind;
  switch (change_.kind) {
    case Kind::kAddFilter:
      cluster_.add_rule(change_.rule);
      break;
    case Kind::kRemoveFilter:
      removed_rule_ = cluster_.remove_rule(change_.rule_id);
      break;
    case Kind::kMigrate:
      cluster_.move_container(change_.container, change_.to_host,
                              change_.veth_host, change_.veth_container);
      break;
    case Kind::kUnderlayChange:
      cluster_.set_host_mac(change_.host, change_.new_mac);
      break;
  }
}

int ChangeExecution::run_step() {
  if (done()) throw ChangeError("change already completed");
  const int step = ++steps_done_;
  switch (step) {
    case 1:
      if (change_.use_hold_on) {
        for (Host* h : hold_scope()) set_hold_on(*h, true);
      }
      break;
    case 2:
      remove_affected();
      break;
    case 3:
      mutate();
      break;
    case 4:
      if (change_.use_hold_on) {
        for (Host* h : hold_scope()) set_hold_on(*h, false);
      }
      break;
  }
  return step;
}

void ChangeExecution::run_all() {
  while (!done()) run_step();
}

void apply_change(Cluster& cluster, const NetworkChange& change) {
  ChangeExecution(cluster, change).run_all();
}

bool delete_container(Cluster& cluster, Ipv4Addr ip) {
  if (!cluster.container(ip)) return false;
  cluster.remove_container(ip);
  return true;
}

}  // namespace oncache
