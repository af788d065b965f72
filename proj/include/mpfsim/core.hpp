#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpfsim {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Raised for any configuration problem. `key()` is the dotted path of the
// offending setting, e.g. "channel.per".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)), reason_(what) {}

  const std::string& key() const noexcept { return key_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string key_;
  std::string reason_;
};

class OutOfCorridorError : public std::out_of_range {
 public:
  explicit OutOfCorridorError(double x)
      : std::out_of_range("position " + std::to_string(x) + " outside corridor"), position(x) {}
  double position;
};

// ---------------------------------------------------------------------------
// Identifiers and vehicle state
// ---------------------------------------------------------------------------

struct VehicleId {
  std::uint32_t value{0};

  friend constexpr bool operator==(VehicleId, VehicleId) = default;
  friend constexpr auto operator<=>(VehicleId, VehicleId) = default;
};

enum class VehicleClass : std::uint8_t { HDV, CAV };

inline const char* to_string(VehicleClass c) { return c == VehicleClass::CAV ? "CAV" : "HDV"; }

inline VehicleClass vehicle_class_from_string(const std::string& s) {
  if (s == "CAV") return VehicleClass::CAV;
  if (s == "HDV") return VehicleClass::HDV;
  throw std::invalid_argument("unknown vehicle class '" + s + "'");
}

// x is the rear bumper, increasing in the travel direction.
struct VehicleState {
  double x{0.0};       // m
  double v{0.0};       // m/s
  double u{0.0};       // m/s^2, commanded after saturation
  double length{4.0};  // m
};

struct VehicleParams {
  double a_max{2.5};   // m/s^2
  double b_max{6.0};   // m/s^2, magnitude
  double v_f{30.0};    // m/s
  double length{4.0};  // m

  void validate(const std::string& prefix = "vehicle") const {
    if (!(a_max > 0)) throw ValidationError(prefix + ".a_max_mps2", "must be > 0");
    if (!(b_max > 0)) throw ValidationError(prefix + ".b_max_mps2", "must be > 0");
    if (!(v_f > 0)) throw ValidationError(prefix + ".v_f_mps", "must be > 0");
    if (!(length > 0)) throw ValidationError(prefix + ".length_m", "must be > 0");
  }
};

// Bumper-to-bumper gap between a follower at `x_follower` and the leader
// ahead of it.
constexpr double gap_between(double x_leader, double leader_length, double x_follower) {
  return x_leader - x_follower - leader_length;
}

// ---------------------------------------------------------------------------
// Clock
// ---------------------------------------------------------------------------

// Time is always derived from the step index, never accumulated.
struct SimClock {
  std::int64_t step{0};
  double dt{0.1};

  constexpr double time() const { return static_cast<double>(step) * dt; }
};

constexpr SimClock advance_clock(SimClock clock) {
  ++clock.step;
  return clock;
}

// Number of whole steps in `seconds`, or nullopt when `seconds` is not an
// integer multiple of dt (to 1e-9 relative).
inline std::optional<std::int64_t> steps_in(double seconds, double dt) {
  if (!(dt > 0) || !std::isfinite(seconds)) return std::nullopt;
  const double ratio = seconds / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, std::abs(ratio))) return std::nullopt;
  return static_cast<std::int64_t>(rounded);
}

// ---------------------------------------------------------------------------
// Corridor
// ---------------------------------------------------------------------------

// A single-lane road [0, L] cut into contiguous edges. Edges may carry a
// speed limit. In ring mode the exit at L is glued back to the entry at 0.
class Corridor {
 public:
  Corridor() : Corridor(std::vector<double>(7, 1000.0)) {}

  explicit Corridor(std::vector<double> edge_lengths,
                    std::vector<std::optional<double>> speed_limits = {}, bool ring = false)
      : lengths_(std::move(edge_lengths)), limits_(std::move(speed_limits)), ring_(ring) {
    if (lengths_.empty()) throw ValidationError("corridor.edges_m", "at least one edge required");
    if (limits_.empty()) limits_.assign(lengths_.size(), std::nullopt);
    if (limits_.size() != lengths_.size())
      throw ValidationError("corridor.speed_limits_mps", "must have one entry per edge");
    cuts_.reserve(lengths_.size() + 1);
    cuts_.push_back(0.0);
    for (std::size_t i = 0; i < lengths_.size(); ++i) {
      if (!(lengths_[i] > 0) || !std::isfinite(lengths_[i]))
        throw ValidationError("corridor.edges_m[" + std::to_string(i) + "]", "edge length must be > 0");
      if (limits_[i] && !(*limits_[i] > 0))
        throw ValidationError("corridor.speed_limits_mps[" + std::to_string(i) + "]", "must be > 0");
      cuts_.push_back(cuts_.back() + lengths_[i]);
    }
  }

  static Corridor uniform(double length, std::size_t edges, bool ring = false) {
    if (edges == 0) throw ValidationError("corridor.edges_m", "at least one edge required");
    return Corridor(std::vector<double>(edges, length / static_cast<double>(edges)), {}, ring);
  }

  double length() const { return cuts_.back(); }
  std::size_t edge_count() const { return lengths_.size(); }
  double edge_length(std::size_t i) const { return lengths_.at(i); }
  double edge_start(std::size_t i) const { return cuts_.at(i); }
  double edge_end(std::size_t i) const { return cuts_.at(i + 1); }
  const std::vector<double>& edge_lengths() const { return lengths_; }
  const std::vector<std::optional<double>>& speed_limits() const { return limits_; }
  std::optional<double> speed_limit(std::size_t i) const { return limits_.at(i); }
  bool ring() const { return ring_; }

  // Half-open [start, end) edges; x == L belongs to the last edge.
  std::size_t edge_of(double x) const {
    if (!(x >= 0.0) || x > length()) throw OutOfCorridorError(x);
    if (x == length()) return lengths_.size() - 1;
    std::size_t lo = 0, hi = lengths_.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (cuts_[mid] <= x) lo = mid; else hi = mid;
    }
    return lo;
  }

  // Maps any coordinate onto [0, L): wraps in ring mode, clamps otherwise.
  double normalize(double x) const {
    const double l = length();
    if (ring_) {
      double r = std::fmod(x, l);
      if (r < 0) r += l;
      return r;
    }
    return std::clamp(x, 0.0, l);
  }

 private:
  std::vector<double> lengths_;
  std::vector<std::optional<double>> limits_;
  std::vector<double> cuts_;
  bool ring_{false};
};

inline std::size_t edge_of(double x, const Corridor& corridor) { return corridor.edge_of(x); }

}  // namespace mpfsim
