#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpfsim/core.hpp"

namespace mpfsim {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct IdmParams {
  double a{1.5};    // max acceleration, m/s^2
  double b{2.0};    // desired deceleration, m/s^2
  double v_f{30.0}; // free-flow speed, m/s
  double s0{2.0};   // standstill gap, m
  double T{1.5};    // time headway, s
  static constexpr int delta = 4;

  void validate(const std::string& prefix = "idm") const {
    if (!(a > 0)) throw ValidationError(prefix + ".a_mps2", "must be > 0");
    if (!(b > 0)) throw ValidationError(prefix + ".b_mps2", "must be > 0");
    if (!(v_f > 0)) throw ValidationError(prefix + ".v_f_mps", "must be > 0");
    if (!(s0 > 0)) throw ValidationError(prefix + ".s0_m", "must be > 0");
    if (!(T > 0)) throw ValidationError(prefix + ".headway_s", "must be > 0");
  }
};

enum class Topology : std::uint8_t { PF, MPF };

inline const char* to_string(Topology t) { return t == Topology::PF ? "PF" : "MPF"; }

inline Topology topology_from_string(const std::string& s) {
  if (s == "PF") return Topology::PF;
  if (s == "MPF") return Topology::MPF;
  throw std::invalid_argument("unknown topology '" + s + "' (expected PF or MPF)");
}

struct ControllerConfig {
  double alpha{1.0};           // position-error gain, 1/s^2
  double beta{3.0};            // speed-error gain, 1/s
  double headway{0.8};         // s
  double standstill{2.0};      // m
  Topology topology{Topology::MPF};
  int max_neighbours{8};
  double staleness_window{0.5};  // s
  double sensor_range{150.0};    // m
  // Include the sensed immediate predecessor as rank 1 when V2V data covers
  // only vehicles further ahead.
  bool mix_sensor_rank1{true};

  void validate(const std::string& prefix = "controller") const {
    if (!(alpha > 0)) throw ValidationError(prefix + ".alpha", "must be > 0");
    if (!(beta >= 0)) throw ValidationError(prefix + ".beta", "must be >= 0");
    if (!(headway >= 0)) throw ValidationError(prefix + ".headway_s", "must be >= 0");
    if (!(standstill > 0)) throw ValidationError(prefix + ".standstill_m", "must be > 0");
    if (max_neighbours < 1) throw ValidationError(prefix + ".max_neighbours", "must be >= 1");
    if (!(staleness_window >= 0)) throw ValidationError(prefix + ".staleness_s", "must be >= 0");
    if (!(sensor_range > 0)) throw ValidationError(prefix + ".sensor_range_m", "must be > 0");
  }

  int effective_neighbours() const { return topology == Topology::PF ? 1 : max_neighbours; }
};

// ---------------------------------------------------------------------------
// Neighbour view
// ---------------------------------------------------------------------------

enum class InfoSource : std::uint8_t { V2V, Sensor };

// One leading vehicle j as seen by ego i. `rank` counts positions ahead
// (1 = immediate predecessor). `body_length` is the summed length of the
// `rank` vehicles from j back to i's predecessor, so that
// x - ego.x - body_length is the net bumper-to-bumper spacing to j.
struct NeighbourEntry {
  int rank{1};
  double x{0.0};
  double v{0.0};
  double body_length{0.0};
  InfoSource source{InfoSource::V2V};
  double age{0.0};

  double spacing_to(double ego_x) const { return x - ego_x - body_length; }
};

// Sorted by rank; ranks unique. Membership means a_ij = 1.
using NeighbourView = std::vector<NeighbourEntry>;

class DegenerateGapError : public std::domain_error {
 public:
  explicit DegenerateGapError(double gap)
      : std::domain_error("non-positive gap " + std::to_string(gap)), gap(gap) {}
  double gap;
};

class NoInformationError : public std::logic_error {
 public:
  NoInformationError() : std::logic_error("no usable neighbour information") {}
};

class NoSensorTargetError : public std::logic_error {
 public:
  NoSensorTargetError() : std::logic_error("no sensor target within range") {}
};

// ---------------------------------------------------------------------------
// Human driver: IDM
// ---------------------------------------------------------------------------

// dv is the closing speed v_ego - v_leader. The result is unsaturated.
inline double idm_accel(double v, double gap, double dv, const IdmParams& p) {
  if (!(gap > 0)) throw DegenerateGapError(gap);
  const double s_star = p.s0 + std::max(0.0, v * p.T + v * dv / (2.0 * std::sqrt(p.a * p.b)));
  const double ratio = v / p.v_f;
  const double r2 = ratio * ratio;
  const double interaction = s_star / gap;
  return p.a * (1.0 - r2 * r2 - interaction * interaction);
}

// The IDM free-road term; also used by CAVs with nothing to follow.
inline double free_drive_accel(double v, double v_f, double a_max) {
  const double ratio = v / v_f;
  const double r2 = ratio * ratio;
  return a_max * (1.0 - r2 * r2);
}

// ---------------------------------------------------------------------------
// CAV: constant-time-headway linear controller
// ---------------------------------------------------------------------------

// Desired bumper-to-bumper distance to the rank-k predecessor.
inline double desired_distance(int rank, double v_ego, const ControllerConfig& cfg) {
  return static_cast<double>(rank) * (cfg.headway * v_ego + cfg.standstill);
}

// Contribution of one neighbour to the control law.
inline double neighbour_term(const VehicleState& ego, const NeighbourEntry& n,
                             const ControllerConfig& cfg) {
  const double spacing_error = n.spacing_to(ego.x) - desired_distance(n.rank, ego.v, cfg);
  return cfg.alpha * spacing_error + cfg.beta * (n.v - ego.v);
}

// Sum of neighbour terms over the nearest `effective_neighbours()` entries.
// PF uses the rank-1 entry only. Unsaturated.
inline double mpf_accel(const VehicleState& ego, const NeighbourView& view,
                        const ControllerConfig& cfg) {
  if (view.empty()) throw NoInformationError();
  for (const auto& n : view) {
    if (n.source == InfoSource::V2V && n.age > cfg.staleness_window + 1e-9)
      throw std::invalid_argument("neighbour entry older than staleness window");
  }
  if (cfg.topology == Topology::PF) {
    auto it = std::find_if(view.begin(), view.end(), [](const auto& n) { return n.rank == 1; });
    if (it == view.end()) throw NoInformationError();
    return neighbour_term(ego, *it, cfg);
  }
  const auto limit = static_cast<std::size_t>(cfg.max_neighbours);
  double u = 0.0;
  for (std::size_t i = 0; i < view.size() && i < limit; ++i) u += neighbour_term(ego, view[i], cfg);
  return u;
}

// ACC mode on the sensed predecessor with the same gains. `range_rate` is
// v_leader - v_ego.
inline double fallback_accel(const VehicleState& ego, double sensor_gap, double range_rate,
                             const ControllerConfig& cfg) {
  if (!(sensor_gap <= cfg.sensor_range)) throw NoSensorTargetError();
  const double spacing_error = sensor_gap - desired_distance(1, ego.v, cfg);
  return cfg.alpha * spacing_error + cfg.beta * range_rate;
}

}  // namespace mpfsim
