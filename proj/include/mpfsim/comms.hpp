#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpfsim/core.hpp"
#include "mpfsim/models.hpp"
#include "mpfsim/rng.hpp"

namespace mpfsim {

struct Beacon {
  VehicleId sender;
  double position{0.0};
  double speed{0.0};
  double sent_at{0.0};
};

struct ChannelConfig {
  double per{0.0};             // frame error rate in [0, 1]
  double range{300.0};         // m
  double beacon_period{0.1};   // s

  void validate(const std::string& prefix = "channel") const {
    if (!(per >= 0.0 && per <= 1.0)) throw ValidationError(prefix + ".per", "must be in [0, 1]");
    if (!(range > 0)) throw ValidationError(prefix + ".range_m", "must be > 0");
    if (!(beacon_period > 0)) throw ValidationError(prefix + ".beacon_hz", "must be > 0");
  }
};

// Last beacon heard from each sender, with its reception time. Entries are
// kept sorted by sender id.
class NeighbourCache {
 public:
  struct Entry {
    Beacon beacon;
    double received_at{0.0};
  };

  NeighbourCache() = default;
  explicit NeighbourCache(VehicleId owner) : owner_(owner) {}

  VehicleId owner() const { return owner_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Entry* find(VehicleId sender) const {
    auto it = lower(sender);
    return it != entries_.end() && it->beacon.sender == sender ? &*it : nullptr;
  }

  void receive(const Beacon& b, double now) {
    if (b.sender == owner_) return;
    auto it = lower(b.sender);
    if (it != entries_.end() && it->beacon.sender == b.sender) *it = Entry{b, now};
    else entries_.insert(it, Entry{b, now});
  }

  void prune(double now, double staleness_window) {
    std::erase_if(entries_, [&](const Entry& e) {
      return now - e.received_at > staleness_window + 1e-9;
    });
  }

 private:
  std::vector<Entry>::iterator lower(VehicleId sender) {
    return std::lower_bound(entries_.begin(), entries_.end(), sender,
                            [](const Entry& e, VehicleId id) { return e.beacon.sender < id; });
  }
  std::vector<Entry>::const_iterator lower(VehicleId sender) const {
    return std::lower_bound(entries_.begin(), entries_.end(), sender,
                            [](const Entry& e, VehicleId id) { return e.beacon.sender < id; });
  }

  VehicleId owner_{};
  std::vector<Entry> entries_;
};

inline NeighbourCache prune_stale(NeighbourCache cache, double now, double staleness_window) {
  cache.prune(now, staleness_window);
  return cache;
}

// ---------------------------------------------------------------------------
// Broadcast
// ---------------------------------------------------------------------------

struct RadioNode {
  VehicleId id;
  double x{0.0};
  double v{0.0};
};

struct Delivery {
  VehicleId receiver;
  Beacon beacon;
};

struct BroadcastResult {
  std::vector<Delivery> deliveries;
  std::uint64_t sent{0};       // in-range (sender, receiver) transmissions
  std::uint64_t delivered{0};
};

// Whether the beacon with index `beacon_index` from `sender` survives the
// channel at `receiver`. Lowering `per` only ever adds deliveries for a
// fixed seed.
inline bool frame_survives(std::uint64_t seed, VehicleId sender, VehicleId receiver,
                           std::int64_t beacon_index, double per) {
  const double u = rng::uniform(seed, rng::Stream::Channel,
                                {sender.value, receiver.value, static_cast<std::uint64_t>(beacon_index)});
  return u >= per;
}

// One beacon round. Every node is both sender and receiver. `ring_length`
// > 0 measures distance around a ring of that circumference.
inline BroadcastResult broadcast_step(std::span<const RadioNode> nodes, const ChannelConfig& cfg,
                                      std::uint64_t seed, std::int64_t beacon_index, double now,
                                      double ring_length = 0.0) {
  BroadcastResult out;
  const std::size_t n = nodes.size();
  auto consider = [&](const RadioNode& s, const RadioNode& r) {
    ++out.sent;
    if (frame_survives(seed, s.id, r.id, beacon_index, cfg.per)) {
      ++out.delivered;
      out.deliveries.push_back(Delivery{r.id, Beacon{s.id, s.x, s.v, now}});
    }
  };

  if (ring_length > 0.0) {
    for (std::size_t ri = 0; ri < n; ++ri) {
      for (std::size_t si = 0; si < n; ++si) {
        if (si == ri) continue;
        double d = std::fmod(std::abs(nodes[si].x - nodes[ri].x), ring_length);
        d = std::min(d, ring_length - d);
        if (d <= cfg.range) consider(nodes[si], nodes[ri]);
      }
    }
    return out;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return nodes[a].x != nodes[b].x ? nodes[a].x < nodes[b].x : nodes[a].id < nodes[b].id;
  });
  std::size_t lo = 0;
  for (std::size_t oi = 0; oi < n; ++oi) {
    const RadioNode& r = nodes[order[oi]];
    while (nodes[order[lo]].x < r.x - cfg.range) ++lo;
    for (std::size_t oj = lo; oj < n; ++oj) {
      const RadioNode& s = nodes[order[oj]];
      if (s.x > r.x + cfg.range) break;
      if (oj == oi) continue;
      if (std::abs(s.x - r.x) <= cfg.range) consider(s, r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ordering and view construction
// ---------------------------------------------------------------------------

// Ground-truth vehicle order, most downstream first. Used only to rank
// cached senders; the controller never sees these positions.
class OrderingSnapshot {
 public:
  struct Slot {
    VehicleId id;
    double length;
    VehicleClass cls{VehicleClass::CAV};
  };

  OrderingSnapshot() = default;
  OrderingSnapshot(std::vector<Slot> front_to_back, double ring_length = 0.0)
      : slots_(std::move(front_to_back)), ring_length_(ring_length) {
    prefix_.resize(slots_.size() + 1, 0.0);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      prefix_[i + 1] = prefix_[i] + slots_[i].length;
      const std::size_t id = slots_[i].id.value;
      if (index_.size() <= id) index_.resize(id + 1, kAbsent);
      index_[id] = i;
    }
  }

  std::size_t size() const { return slots_.size(); }
  bool ring() const { return ring_length_ > 0.0; }
  double ring_length() const { return ring_length_; }
  const Slot& at(std::size_t i) const { return slots_.at(i); }

  std::optional<std::size_t> index_of(VehicleId id) const {
    if (id.value >= index_.size() || index_[id.value] == kAbsent) return std::nullopt;
    return index_[id.value];
  }

  // Positions ahead of `ego_idx` that `other_idx` sits; 0 when not ahead.
  std::size_t rank_of(std::size_t other_idx, std::size_t ego_idx) const {
    if (!ring()) return other_idx < ego_idx ? ego_idx - other_idx : 0;
    const std::size_t n = slots_.size();
    return (ego_idx + n - other_idx) % n;
  }

  // Whether any of the first `rank - 1` vehicles ahead of ego is an HDV.
  bool hdv_within(std::size_t ego_idx, std::size_t rank) const {
    const std::size_t n = slots_.size();
    for (std::size_t r = 1; r < rank && r < n; ++r) {
      const std::size_t j = ring() ? (ego_idx + n - r) % n : ego_idx - r;
      if (slots_[j].cls == VehicleClass::HDV) return true;
      if (!ring() && j == 0) break;
    }
    return false;
  }

  // Summed length of the `rank` vehicles directly ahead of ego.
  double body_length(std::size_t other_idx, std::size_t ego_idx) const {
    if (other_idx < ego_idx) return prefix_[ego_idx] - prefix_[other_idx];
    return (prefix_.back() - prefix_[other_idx]) + prefix_[ego_idx];
  }

 private:
  std::vector<Slot> slots_;
  std::vector<double> prefix_;
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index_;  // by vehicle id
  double ring_length_{0.0};
};

// Builds the controller's neighbour set from cached beacons. In ring mode
// positions are unwrapped odometers, so a sender ahead across the seam is
// shifted by one circumference.
inline NeighbourView build_view(VehicleId ego_id, const VehicleState& ego, const NeighbourCache& cache,
                                const OrderingSnapshot& order, const ControllerConfig& cfg,
                                double now) {
  NeighbourView view;
  const auto ego_idx = order.index_of(ego_id);
  if (!ego_idx || cache.empty()) return view;
  const double ego_front = ego.x + ego.length;

  for (const auto& entry : cache.entries()) {
    const VehicleId sender = entry.beacon.sender;
    const double age = now - entry.received_at;
    if (age > cfg.staleness_window + 1e-9) continue;
    const auto s_idx = order.index_of(sender);
    if (!s_idx) continue;
    const std::size_t rank = order.rank_of(*s_idx, *ego_idx);
    if (rank == 0) continue;
    double x = entry.beacon.position;
    if (order.ring() && *s_idx > *ego_idx) x += order.ring_length();
    if (!(x > ego_front)) continue;
    view.push_back(NeighbourEntry{static_cast<int>(rank), x, entry.beacon.speed,
                                  order.body_length(*s_idx, *ego_idx), InfoSource::V2V, age});
  }
  std::sort(view.begin(), view.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });

  if (cfg.topology == Topology::PF) {
    if (!view.empty() && view.front().rank == 1) view.resize(1); else view.clear();
    return view;
  }
  if (view.size() > static_cast<std::size_t>(cfg.max_neighbours))
    view.resize(static_cast<std::size_t>(cfg.max_neighbours));
  return view;
}

}  // namespace mpfsim
