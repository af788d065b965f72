#pragma once

// Random instance generators and brute-force reference implementations
// shared by the unit tests and the acceptance binary. The references are
// written from the formulas, not from the library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "mpfsim/engine.hpp"
#include "mpfsim/metrics.hpp"
#include "mpfsim/models.hpp"

namespace testsupport {

using namespace mpfsim;

struct ControlInstance {
  VehicleState ego;
  NeighbourView view;
  ControllerConfig cfg;
};

// An MPF instance with 1..max_neighbours entries at distinct ranks.
inline ControlInstance random_control_instance(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  ControlInstance in;
  in.cfg.alpha = 0.1 + 4.0 * U(gen);
  in.cfg.beta = 5.0 * U(gen);
  in.cfg.headway = 1.5 * U(gen);
  in.cfg.standstill = 0.5 + 4.0 * U(gen);
  in.cfg.topology = Topology::MPF;
  in.cfg.max_neighbours = 1 + static_cast<int>(gen() % 8);
  in.ego = VehicleState{1000.0 * U(gen), 35.0 * U(gen), 0.0, 4.0};

  const int count = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(in.cfg.max_neighbours));
  std::set<int> ranks;
  while (static_cast<int>(ranks.size()) < count) ranks.insert(1 + static_cast<int>(gen() % 12));
  for (int rank : ranks) {
    NeighbourEntry e;
    e.rank = rank;
    e.body_length = rank * (3.0 + 3.0 * U(gen));
    e.x = in.ego.x + e.body_length + rank * (2.0 + 40.0 * U(gen));
    e.v = 35.0 * U(gen);
    e.source = U(gen) < 0.2 ? InfoSource::Sensor : InfoSource::V2V;
    e.age = in.cfg.staleness_window * U(gen);
    in.view.push_back(e);
  }
  return in;
}

// Term-by-term evaluation of
//   u = sum_j alpha * [(x_j - x_i - bodies) - k_j (h v_i + d)] + beta * (v_j - v_i)
// in long double over the entries the topology admits.
inline double reference_mpf(const ControlInstance& in) {
  long double u = 0.0L;
  std::size_t used = 0;
  for (const auto& e : in.view) {
    if (in.cfg.topology == Topology::PF && e.rank != 1) continue;
    if (in.cfg.topology == Topology::MPF && used == static_cast<std::size_t>(in.cfg.max_neighbours)) break;
    const long double spacing = static_cast<long double>(e.x) - in.ego.x - e.body_length;
    const long double desired =
        static_cast<long double>(e.rank) * (static_cast<long double>(in.cfg.headway) * in.ego.v + in.cfg.standstill);
    u += static_cast<long double>(in.cfg.alpha) * (spacing - desired) +
         static_cast<long double>(in.cfg.beta) * (static_cast<long double>(e.v) - in.ego.v);
    ++used;
  }
  return static_cast<double>(u);
}

// A short random open-road scenario with demand and a few pre-placed vehicles.
inline ScenarioConfig random_scenario(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  ScenarioConfig s;
  s.corridor = Corridor({400.0, 400.0});
  s.duration = 10.0 + std::floor(20.0 * U(gen));
  s.warmup = 0.0;
  s.demand_vph = 1000.0 + 4000.0 * U(gen);
  s.mpr = std::floor(U(gen) * 6.0) / 5.0;
  s.channel.per = U(gen) < 0.5 ? 0.0 : 0.7;
  s.controller.topology = U(gen) < 0.5 ? Topology::PF : Topology::MPF;
  s.controller.beta = 1.0 + 3.0 * U(gen);
  s.controller.headway = 0.2 + 0.8 * U(gen);
  s.seed = gen();
  double x = 780.0;
  const int n = static_cast<int>(gen() % 8);
  for (int i = 0; i < n; ++i) {
    s.initial_vehicles.push_back({x, 30.0 * U(gen), U(gen) < 0.5 ? VehicleClass::CAV : VehicleClass::HDV});
    x -= 4.0 + 1.0 + 60.0 * U(gen);
    if (x < 0) break;
  }
  return s;
}

inline bool close_relative(double a, double b, double rel) {
  const double scale = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) <= rel * scale;
}

// A small log with `n` vehicles over `steps` steps, ordered by (t, rank).
// Speeds fluctuate so that closing and opening phases alternate.
inline TrajectoryLog random_small_log(std::mt19937_64& gen, int max_vehicles = 5, int max_steps = 200) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  TrajectoryLog log;
  log.dt = 0.1;
  log.vehicle_length = 4.0;
  const int n = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(max_vehicles));
  const int steps = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(max_steps));
  std::vector<double> x(static_cast<std::size_t>(n)), v(static_cast<std::size_t>(n));
  std::vector<VehicleClass> cls(static_cast<std::size_t>(n));
  double pos = 500.0;
  for (int i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = pos;
    v[static_cast<std::size_t>(i)] = 10.0 + 15.0 * U(gen);
    cls[static_cast<std::size_t>(i)] = U(gen) < 0.5 ? VehicleClass::CAV : VehicleClass::HDV;
    pos -= 4.0 + 1.0 + 20.0 * U(gen);
  }
  for (int k = 0; k < steps; ++k) {
    for (int i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      log.rows.push_back(TrajectoryRecord{k * log.dt, static_cast<std::uint32_t>(i), cls[s], x[s], v[s], 0.0,
                                          static_cast<std::uint32_t>(i)});
    }
    for (int i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      v[s] = std::max(0.0, v[s] + (U(gen) - 0.5) * 4.0);
      x[s] += v[s] * log.dt;
      // no overtaking, as in the engine: pin behind the leader
      if (i > 0 && x[s] > x[s - 1] - log.vehicle_length) {
        x[s] = x[s - 1] - log.vehicle_length;
        v[s] = v[s - 1];
      }
    }
  }
  return log;
}

// Per-step scan: record which steps each adjacent pair is in conflict, then
// turn each pair's step set into intervals and merge intervals whose gap of
// non-conflict steps is shorter than the debounce.
inline ConflictCounts reference_conflicts(const TrajectoryLog& log, const TtcConfig& cfg) {
  std::map<double, std::vector<TrajectoryRecord>> by_time;
  for (const auto& r : log.rows) by_time[r.t].push_back(r);
  struct PairKey {
    std::uint32_t follower, leader;
    bool operator<(const PairKey& o) const { return std::tie(follower, leader) < std::tie(o.follower, o.leader); }
  };
  std::map<PairKey, std::vector<long>> steps;
  std::map<PairKey, VehicleClass> follower_class;
  for (auto& [t, rows] : by_time) {
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.x > b.x; });
    const long k = std::lround(t / log.dt);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& lead = rows[i - 1];
      const auto& fol = rows[i];
      if (!(fol.v > lead.v)) continue;
      const double gap = lead.x - fol.x - log.vehicle_length;
      const double ttc = gap <= 0 ? 0.0 : gap / (fol.v - lead.v);
      const double threshold = fol.cls == VehicleClass::CAV ? cfg.threshold_cav : cfg.threshold_hdv;
      if (ttc < threshold) {
        steps[{fol.id, lead.id}].push_back(k);
        follower_class[{fol.id, lead.id}] = fol.cls;
      }
    }
  }
  const long debounce = std::lround(cfg.debounce / log.dt);
  ConflictCounts out;
  for (auto& [key, ks] : steps) {
    // intervals of consecutive steps
    std::vector<std::pair<long, long>> intervals;
    for (long k : ks) {
      if (!intervals.empty() && intervals.back().second + 1 == k) intervals.back().second = k;
      else intervals.push_back({k, k});
    }
    std::size_t events = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      const bool merges = i > 0 && (intervals[i].first - intervals[i - 1].second - 1) < debounce;
      if (!merges) ++events;
    }
    if (follower_class[key] == VehicleClass::CAV) out.cav += events; else out.hdv += events;
  }
  return out;
}

}  // namespace testsupport
