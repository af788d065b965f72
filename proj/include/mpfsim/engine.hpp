#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpfsim/comms.hpp"
#include "mpfsim/core.hpp"
#include "mpfsim/models.hpp"
#include "mpfsim/rng.hpp"

namespace mpfsim {

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

struct InitialVehicle {
  double x{0.0};
  double v{0.0};
  VehicleClass cls{VehicleClass::CAV};
};

// Overrides a vehicle's control with a fixed acceleration over
// [start, start + duration).
struct Perturbation {
  VehicleId vehicle;
  double start{0.0};
  double duration{0.0};
  double accel{0.0};
};

struct ScenarioConfig {
  Corridor corridor{};
  double duration{900.0};
  double warmup{300.0};
  double dt{0.1};
  double demand_vph{3000.0};
  double mpr{1.0};
  ChannelConfig channel{};
  ControllerConfig controller{};
  IdmParams idm{};
  VehicleParams vehicle{};  // CAV limits and desired speed; length and b_max are shared
  std::uint64_t seed{1};
  // Placed at t = 0. IDs are assigned front (largest x) first, starting at 0.
  std::vector<InitialVehicle> initial_vehicles{};
  std::vector<Perturbation> perturbations{};

  std::int64_t total_steps() const { return *steps_in(duration, dt); }
  std::int64_t warmup_steps() const { return *steps_in(warmup, dt); }
  std::int64_t beacon_steps() const { return *steps_in(channel.beacon_period, dt); }

  void validate() const {
    if (!(dt > 0)) throw ValidationError("dt_s", "must be > 0");
    if (!(duration > 0) || !steps_in(duration, dt))
      throw ValidationError("duration_s", "must be a positive multiple of dt_s");
    if (!(warmup >= 0) || !steps_in(warmup, dt))
      throw ValidationError("warmup_s", "must be a non-negative multiple of dt_s");
    if (!(warmup < duration)) throw ValidationError("warmup_s", "must be < duration_s");
    if (!(demand_vph >= 0) || !std::isfinite(demand_vph))
      throw ValidationError("demand_vph", "must be >= 0");
    if (!(mpr >= 0.0 && mpr <= 1.0)) throw ValidationError("mpr", "must be in [0, 1]");
    channel.validate();
    if (!steps_in(channel.beacon_period, dt) || *steps_in(channel.beacon_period, dt) < 1)
      throw ValidationError("channel.beacon_hz", "beacon period must be a multiple of dt_s");
    controller.validate();
    idm.validate();
    vehicle.validate();
    if (corridor.ring() && demand_vph > 0)
      throw ValidationError("demand_vph", "must be 0 in ring mode");
    for (std::size_t i = 0; i < initial_vehicles.size(); ++i) {
      const auto& iv = initial_vehicles[i];
      const std::string key = "initial_vehicles[" + std::to_string(i) + "]";
      if (!(iv.x >= 0 && iv.x <= corridor.length())) throw ValidationError(key + ".x_m", "outside corridor");
      if (!(iv.v >= 0)) throw ValidationError(key + ".v_mps", "must be >= 0");
    }
    for (std::size_t i = 0; i < perturbations.size(); ++i) {
      const auto& p = perturbations[i];
      const std::string key = "perturbations[" + std::to_string(i) + "]";
      if (p.vehicle.value >= initial_vehicles.size())
        throw ValidationError(key + ".vehicle", "must name an initial vehicle");
      if (!(p.duration >= 0)) throw ValidationError(key + ".duration_s", "must be >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

// State at time t and the acceleration applied over [t, t + dt).
struct TrajectoryRecord {
  double t{0.0};
  std::uint32_t id{0};
  VehicleClass cls{VehicleClass::HDV};
  double x{0.0};
  double v{0.0};
  double u{0.0};
  std::uint32_t rank{0};  // 0 = most downstream vehicle at this step
};

// Rows ordered by (t, rank). Positions are normalized onto [0, L).
struct TrajectoryLog {
  double dt{0.1};
  double vehicle_length{4.0};
  double ring_length{0.0};  // > 0 in ring mode
  std::vector<TrajectoryRecord> rows;

  // Rows with t >= t0.
  std::span<const TrajectoryRecord> since(double t0) const {
    auto it = std::lower_bound(rows.begin(), rows.end(), t0 - 1e-9,
                               [](const TrajectoryRecord& r, double t) { return r.t < t; });
    return {it, rows.end()};
  }
};

struct Event {
  double t{0.0};
  std::string type;
  VehicleId follower;
  VehicleId leader;
};

struct ChannelCounters {
  std::uint64_t sent{0};
  std::uint64_t delivered{0};
};

struct RunResult {
  TrajectoryLog log;
  std::vector<Event> events;
  ChannelCounters channel;  // measured window only
  std::uint64_t spawned{0};
  std::uint64_t queued_at_end{0};
};

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

class World {
 public:
  struct Vehicle {
    VehicleId id;
    VehicleClass cls;
    VehicleState state;
    NeighbourCache cache;
  };

  explicit World(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    clock_.dt = cfg_.dt;
    beacon_steps_ = cfg_.beacon_steps();
    warmup_steps_ = cfg_.warmup_steps();
    log_.dt = cfg_.dt;
    log_.vehicle_length = cfg_.vehicle.length;
    log_.ring_length = cfg_.corridor.ring() ? cfg_.corridor.length() : 0.0;

    std::vector<InitialVehicle> init = cfg_.initial_vehicles;
    std::stable_sort(init.begin(), init.end(), [](const auto& a, const auto& b) { return a.x > b.x; });
    for (const auto& iv : init) add_vehicle(iv.cls, iv.x, iv.v);
    arrival_rate_ = cfg_.demand_vph / 3600.0;
    if (arrival_rate_ > 0) draw_next_arrival();
  }

  const ScenarioConfig& config() const { return cfg_; }
  const SimClock& clock() const { return clock_; }
  double time() const { return clock_.time(); }
  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  const TrajectoryLog& log() const { return log_; }
  const std::vector<Event>& events() const { return events_; }
  const ChannelCounters& channel_counters() const { return counters_; }
  std::uint64_t queued() const { return queue_.size(); }
  std::uint64_t spawned() const { return spawned_; }
  bool done() const { return clock_.step >= cfg_.total_steps(); }

  OrderingSnapshot ordering() const {
    std::vector<OrderingSnapshot::Slot> slots;
    slots.reserve(vehicles_.size());
    for (const auto& veh : vehicles_) slots.push_back({veh.id, veh.state.length, veh.cls});
    return OrderingSnapshot(std::move(slots), ring_length());
  }

  // Index of the physical predecessor of vehicles_[i], if any.
  std::optional<std::size_t> predecessor(std::size_t i) const {
    if (i > 0) return i - 1;
    if (cfg_.corridor.ring() && vehicles_.size() > 1) return vehicles_.size() - 1;
    return std::nullopt;
  }

  // Position of vehicles_[j] expressed in the frame of its follower i
  // (shifted by one lap when j is ahead across the ring seam).
  double position_ahead(std::size_t j, std::size_t i) const {
    const double x = vehicles_[j].state.x;
    return (cfg_.corridor.ring() && j > i) ? x + cfg_.corridor.length() : x;
  }

  // Saturated control for every vehicle, evaluated against the current
  // state only. `iteration_order` permutes the evaluation order; the result
  // is indexed by vehicle slot regardless.
  std::vector<double> control_phase(std::span<const std::size_t> iteration_order) const {
    const OrderingSnapshot order = ordering();
    std::vector<double> u(vehicles_.size(), 0.0);
    for (std::size_t i : iteration_order) u[i] = control_for(i, order);
    return u;
  }

  std::vector<double> control_phase() const {
    std::vector<std::size_t> idx(vehicles_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return control_phase(idx);
  }

  void step() {
    const std::int64_t k = clock_.step;
    const double t = clock_.time();
    const bool measured = k >= warmup_steps_;

    // (1) beacons
    if (k % beacon_steps_ == 0) beacon_round(k / beacon_steps_, t, measured);
    for (auto& veh : vehicles_)
      if (veh.cls == VehicleClass::CAV) veh.cache.prune(t, cfg_.controller.staleness_window);

    // (2)-(3) control from the frozen snapshot, saturated
    const std::vector<double> u = control_phase();
    for (std::size_t i = 0; i < vehicles_.size(); ++i) vehicles_[i].state.u = u[i];

    // log the pre-integration state with the applied control
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const auto& veh = vehicles_[i];
      log_.rows.push_back(TrajectoryRecord{t, veh.id.value, veh.cls, cfg_.corridor.normalize(veh.state.x),
                                           veh.state.v, veh.state.u, static_cast<std::uint32_t>(i)});
    }

    // (4) semi-implicit Euler
    for (auto& veh : vehicles_) {
      veh.state.v = std::max(0.0, veh.state.v + veh.state.u * cfg_.dt);
      veh.state.x += veh.state.v * cfg_.dt;
    }
    clock_ = advance_clock(clock_);
    resolve_overlaps(clock_.time());

    // (5) despawn
    if (!cfg_.corridor.ring()) {
      const double L = cfg_.corridor.length();
      std::erase_if(vehicles_, [L](const Vehicle& veh) { return veh.state.x > L; });
    }

    // (6) spawn
    if (arrival_rate_ > 0) spawn(clock_.time());
  }

  RunResult finish() && {
    RunResult r;
    r.log = std::move(log_);
    r.events = std::move(events_);
    r.channel = counters_;
    r.spawned = spawned_;
    r.queued_at_end = queue_.size();
    return r;
  }

 private:
  double ring_length() const { return cfg_.corridor.ring() ? cfg_.corridor.length() : 0.0; }

  void add_vehicle(VehicleClass cls, double x, double v) {
    const VehicleId id{next_id_++};
    vehicles_.push_back(Vehicle{id, cls, VehicleState{x, v, 0.0, cfg_.vehicle.length}, NeighbourCache(id)});
  }

  double speed_cap(const Vehicle& veh) const {
    const double v_f = veh.cls == VehicleClass::CAV ? cfg_.vehicle.v_f : cfg_.idm.v_f;
    const auto limit = cfg_.corridor.speed_limit(cfg_.corridor.edge_of(cfg_.corridor.normalize(veh.state.x)));
    return limit ? std::min(v_f, *limit) : v_f;
  }

  std::optional<double> perturbation_for(const Vehicle& veh) const {
    const double t = clock_.time();
    for (const auto& p : cfg_.perturbations) {
      if (p.vehicle == veh.id && t >= p.start - 1e-9 && t < p.start + p.duration - 1e-9) return p.accel;
    }
    return std::nullopt;
  }

  double control_for(std::size_t i, const OrderingSnapshot& order) const {
    const Vehicle& veh = vehicles_[i];
    const VehicleState& ego = veh.state;
    const double v_cap = speed_cap(veh);
    const auto pred = predecessor(i);
    double gap = std::numeric_limits<double>::infinity();
    double v_lead = 0.0;
    if (pred) {
      gap = gap_between(position_ahead(*pred, i), vehicles_[*pred].state.length, ego.x);
      v_lead = vehicles_[*pred].state.v;
    }

    double u = 0.0;
    const double a_max = veh.cls == VehicleClass::CAV ? cfg_.vehicle.a_max : cfg_.idm.a;
    if (const auto forced = perturbation_for(veh)) {
      u = *forced;
    } else if (veh.cls == VehicleClass::HDV) {
      IdmParams p = cfg_.idm;
      p.v_f = v_cap;
      if (!pred) u = free_drive_accel(ego.v, v_cap, p.a);
      else if (gap <= 0) u = -cfg_.vehicle.b_max;
      else u = idm_accel(ego.v, gap, ego.v - v_lead, p);
    } else {
      u = cav_control(veh, i, pred, gap, v_lead, order);
      u = std::min(u, free_drive_accel(ego.v, v_cap, a_max));
    }
    return std::clamp(u, -cfg_.vehicle.b_max, a_max);
  }

  double cav_control(const Vehicle& veh, std::size_t i, std::optional<std::size_t> pred, double gap,
                     double v_lead, const OrderingSnapshot& order) const {
    const ControllerConfig& cc = cfg_.controller;
    const VehicleState& ego = veh.state;
    NeighbourView view = build_view(veh.id, ego, veh.cache, order, cc, clock_.time());
    const bool sensed = pred && gap <= cc.sensor_range;
    if (!view.empty() && sensed && cc.mix_sensor_rank1 && view.front().rank != 1) {
      view.insert(view.begin(), NeighbourEntry{1, position_ahead(*pred, i), v_lead,
                                               vehicles_[*pred].state.length, InfoSource::Sensor, 0.0});
      if (view.size() > static_cast<std::size_t>(cc.max_neighbours))
        view.resize(static_cast<std::size_t>(cc.max_neighbours));
    }
    if (!view.empty()) {
      const double u = mpf_accel(ego, view, cc);
      // An HDV inside the view holds its own, larger gap; the spacing terms
      // beyond it must not pull ego closer than its CTH gap to the vehicle it
      // physically follows.
      const std::size_t reach = cc.topology == Topology::PF ? 1 : static_cast<std::size_t>(view.back().rank);
      if (sensed && order.hdv_within(i, reach)) return std::min(u, fallback_accel(ego, gap, v_lead - ego.v, cc));
      return u;
    }
    if (sensed) return fallback_accel(ego, gap, v_lead - ego.v, cc);
    return free_drive_accel(ego.v, speed_cap(veh), cfg_.vehicle.a_max);
  }

  void beacon_round(std::int64_t beacon_index, double t, bool measured) {
    std::vector<RadioNode> nodes;
    std::vector<std::size_t> slot;
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const auto& veh = vehicles_[i];
      if (veh.cls != VehicleClass::CAV) continue;
      nodes.push_back(RadioNode{veh.id, veh.state.x, veh.state.v});
      slot.push_back(i);
    }
    if (nodes.size() < 2) return;
    const BroadcastResult res = broadcast_step(nodes, cfg_.channel, cfg_.seed, beacon_index, t, ring_length());
    // deliveries name receivers by id; vehicles_ is not sorted by id
    std::vector<std::size_t> by_id(next_id_, static_cast<std::size_t>(-1));
    for (std::size_t s : slot) by_id[vehicles_[s].id.value] = s;
    for (const auto& d : res.deliveries) vehicles_[by_id[d.receiver.value]].cache.receive(d.beacon, t);
    if (measured) {
      counters_.sent += res.sent;
      counters_.delivered += res.delivered;
    }
  }

  // Pins any follower that ended the step overlapping its leader.
  void resolve_overlaps(double t) {
    const std::size_t n = vehicles_.size();
    if (n < 2) return;
    auto fix = [&](std::size_t lead, std::size_t fol) {
      const double x_lead = position_ahead(lead, fol);
      const double len = vehicles_[lead].state.length;
      if (gap_between(x_lead, len, vehicles_[fol].state.x) < 0) {
        vehicles_[fol].state.x = x_lead - len;
        vehicles_[fol].state.v = vehicles_[lead].state.v;
        events_.push_back(Event{t, "collision", vehicles_[fol].id, vehicles_[lead].id});
      }
    };
    for (std::size_t i = 1; i < n; ++i) fix(i - 1, i);
    if (cfg_.corridor.ring()) fix(n - 1, 0);
  }

  void draw_next_arrival() {
    const double u = rng::uniform(cfg_.seed, rng::Stream::Demand, {arrival_index_});
    next_arrival_time_ += rng::exponential(arrival_rate_, u);
  }

  bool entry_clear(VehicleClass cls, double v0) const {
    if (vehicles_.empty()) return true;
    const auto& last = vehicles_.back().state;
    const double gap = gap_between(last.x, last.length, 0.0);
    if (gap < cfg_.idm.s0) return false;
    const double needed = cls == VehicleClass::CAV
                              ? desired_distance(1, v0, cfg_.controller)
                              : cfg_.idm.s0 + cfg_.idm.T * v0;
    return gap >= needed;
  }

  void spawn(double t) {
    while (next_arrival_time_ <= t + 1e-9) {
      const double u = rng::uniform(cfg_.seed, rng::Stream::Class, {arrival_index_});
      queue_.push_back(u < cfg_.mpr ? VehicleClass::CAV : VehicleClass::HDV);
      ++arrival_index_;
      draw_next_arrival();
    }
    if (queue_.empty()) return;
    const VehicleClass cls = queue_.front();
    double v0 = cls == VehicleClass::CAV ? cfg_.vehicle.v_f : cfg_.idm.v_f;
    if (const auto lim = cfg_.corridor.speed_limit(0)) v0 = std::min(v0, *lim);
    if (!vehicles_.empty()) v0 = std::min(v0, vehicles_.back().state.v);
    if (!entry_clear(cls, v0)) return;
    queue_.pop_front();
    add_vehicle(cls, 0.0, v0);
    ++spawned_;
  }

  ScenarioConfig cfg_;
  SimClock clock_{};
  std::int64_t beacon_steps_{1};
  std::int64_t warmup_steps_{0};
  std::vector<Vehicle> vehicles_;  // most downstream first
  std::uint32_t next_id_{0};
  TrajectoryLog log_;
  std::vector<Event> events_;
  ChannelCounters counters_;
  double arrival_rate_{0.0};
  double next_arrival_time_{0.0};
  std::uint64_t arrival_index_{0};
  std::deque<VehicleClass> queue_;
  std::uint64_t spawned_{0};
};

inline RunResult run(const ScenarioConfig& cfg) {
  World world(cfg);
  while (!world.done()) world.step();
  return std::move(world).finish();
}

}  // namespace mpfsim
