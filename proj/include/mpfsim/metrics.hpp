#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpfsim/core.hpp"
#include "mpfsim/engine.hpp"

namespace mpfsim {

struct TtcConfig {
  double threshold_cav{0.75};  // s
  double threshold_hdv{1.5};   // s
  double debounce{1.0};        // s; conflict intervals closer than this merge

  void validate(const std::string& prefix = "metrics") const {
    if (!(threshold_cav > 0)) throw ValidationError(prefix + ".ttc_cav_s", "must be > 0");
    if (!(threshold_hdv > 0)) throw ValidationError(prefix + ".ttc_hdv_s", "must be > 0");
    if (!(debounce >= 0)) throw ValidationError(prefix + ".debounce_s", "must be >= 0");
  }

  double threshold(VehicleClass follower) const {
    return follower == VehicleClass::CAV ? threshold_cav : threshold_hdv;
  }
};

// Time to collision of a follower behind a leader, defined only while the
// follower is faster. An overlapping or touching pair that is closing
// yields 0.
inline std::optional<double> ttc_from_gap(double gap, double follower_v, double leader_v) {
  if (!(follower_v > leader_v)) return std::nullopt;
  if (gap <= 0) return 0.0;
  return gap / (follower_v - leader_v);
}

inline std::optional<double> ttc(double leader_x, double leader_v, double leader_length,
                                 double follower_x, double follower_v) {
  return ttc_from_gap(gap_between(leader_x, leader_length, follower_x), follower_v, leader_v);
}

struct ConflictCounts {
  std::uint64_t cav{0};
  std::uint64_t hdv{0};
  std::uint64_t total() const { return cav + hdv; }
};

namespace detail {

// Calls fn(leader, follower, gap) for every adjacent pair of one step.
// `rows` holds a single time step ordered by rank.
template <typename Fn>
void for_each_pair(std::span<const TrajectoryRecord> rows, double vehicle_length, double ring_length,
                   Fn&& fn) {
  const std::size_t n = rows.size();
  if (n < 2) return;
  for (std::size_t i = 1; i < n; ++i) {
    double d = rows[i - 1].x - rows[i].x;
    if (ring_length > 0 && d < 0) d += ring_length;
    fn(rows[i - 1], rows[i], d - vehicle_length);
  }
  if (ring_length > 0) {
    double d = rows[0].x - rows[n - 1].x;
    if (d < 0) d += ring_length;
    fn(rows[n - 1], rows[0], d - vehicle_length);
  }
}

template <typename Fn>
void for_each_step(std::span<const TrajectoryRecord> rows, Fn&& fn) {
  std::size_t begin = 0;
  while (begin < rows.size()) {
    std::size_t end = begin + 1;
    while (end < rows.size() && rows[end].t == rows[begin].t) ++end;
    fn(rows.subspan(begin, end - begin));
    begin = end;
  }
}

}  // namespace detail

// Counts conflict events: per (follower, leader) pair, maximal runs of
// steps with TTC below the follower's threshold, merging runs separated by
// fewer than `debounce` seconds of non-conflict.
inline ConflictCounts count_conflicts(std::span<const TrajectoryRecord> rows, double dt, double vehicle_length,
                                      double ring_length, const TtcConfig& cfg) {
  ConflictCounts out;
  const auto debounce_steps = static_cast<std::int64_t>(std::llround(cfg.debounce / dt));
  std::unordered_map<std::uint64_t, std::int64_t> last_conflict;  // pair -> step

  detail::for_each_step(rows, [&](std::span<const TrajectoryRecord> step_rows) {
    const auto step = static_cast<std::int64_t>(std::llround(step_rows.front().t / dt));
    detail::for_each_pair(step_rows, vehicle_length, ring_length,
                          [&](const TrajectoryRecord& lead, const TrajectoryRecord& fol, double gap) {
      const auto value = ttc_from_gap(gap, fol.v, lead.v);
      if (!value || !(*value < cfg.threshold(fol.cls))) return;
      const std::uint64_t key = (static_cast<std::uint64_t>(fol.id) << 32) | lead.id;
      auto [it, fresh] = last_conflict.try_emplace(key, step);
      const std::int64_t clean_steps = step - it->second - 1;
      if (fresh || (clean_steps > 0 && clean_steps >= debounce_steps)) {
        if (fol.cls == VehicleClass::CAV) ++out.cav; else ++out.hdv;
      }
      it->second = step;
    });
  });
  return out;
}

inline ConflictCounts count_conflicts(const TrajectoryLog& log, const TtcConfig& cfg) {
  return count_conflicts(log.rows, log.dt, log.vehicle_length, log.ring_length, cfg);
}

struct TravelTime {
  double seconds{0.0};
  std::vector<std::optional<double>> edge_mean_speed;  // nullopt when excluded
  std::vector<std::size_t> excluded_edges;             // no samples or zero mean speed
};

// Sum over edges of edge length divided by the time-mean speed of all
// vehicle samples on that edge.
inline TravelTime travel_time(std::span<const TrajectoryRecord> rows, const Corridor& corridor) {
  const std::size_t m = corridor.edge_count();
  std::vector<double> sum(m, 0.0);
  std::vector<std::uint64_t> count(m, 0);
  for (const auto& r : rows) {
    const std::size_t e = corridor.edge_of(r.x);
    sum[e] += r.v;
    ++count[e];
  }
  TravelTime out;
  out.edge_mean_speed.resize(m);
  for (std::size_t e = 0; e < m; ++e) {
    const double mean = count[e] ? sum[e] / static_cast<double>(count[e]) : 0.0;
    if (count[e] == 0 || !(mean > 0)) {
      out.excluded_edges.push_back(e);
      continue;
    }
    out.edge_mean_speed[e] = mean;
    out.seconds += corridor.edge_length(e) / mean;
  }
  return out;
}

struct MetricsReport {
  std::uint64_t conflicts_total{0};
  std::uint64_t conflicts_cav{0};
  std::uint64_t conflicts_hdv{0};
  std::uint64_t collisions{0};
  double travel_time_s{0.0};
  std::vector<std::optional<double>> edge_mean_speed;
  std::vector<std::size_t> excluded_edges;
  std::uint64_t beacons_sent{0};
  std::uint64_t beacons_delivered{0};
  std::optional<double> delivery_rate;  // nullopt when nothing was sent
  std::uint64_t vehicles_spawned{0};
  std::uint64_t entry_queue{0};
};

// Metrics over the measured window (t >= warmup).
inline MetricsReport compute_report(const RunResult& run, const ScenarioConfig& scenario, const TtcConfig& ttc_cfg) {
  MetricsReport rep;
  const auto window = run.log.since(scenario.warmup);
  const ConflictCounts c =
      count_conflicts(window, run.log.dt, run.log.vehicle_length, run.log.ring_length, ttc_cfg);
  rep.conflicts_cav = c.cav;
  rep.conflicts_hdv = c.hdv;
  rep.conflicts_total = c.total();
  for (const auto& e : run.events)
    if (e.type == "collision" && e.t >= scenario.warmup - 1e-9) ++rep.collisions;
  TravelTime tt = travel_time(window, scenario.corridor);
  rep.travel_time_s = tt.seconds;
  rep.edge_mean_speed = std::move(tt.edge_mean_speed);
  rep.excluded_edges = std::move(tt.excluded_edges);
  rep.beacons_sent = run.channel.sent;
  rep.beacons_delivered = run.channel.delivered;
  if (run.channel.sent > 0)
    rep.delivery_rate = static_cast<double>(run.channel.delivered) / static_cast<double>(run.channel.sent);
  rep.vehicles_spawned = run.spawned;
  rep.entry_queue = run.queued_at_end;
  return rep;
}

}  // namespace mpfsim
