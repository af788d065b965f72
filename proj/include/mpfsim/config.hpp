#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpfsim/engine.hpp"
#include "mpfsim/metrics.hpp"

namespace mpfsim {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Everything a single simulation needs: the scenario plus metric settings.
struct ExperimentConfig {
  ScenarioConfig scenario{};
  TtcConfig ttc{};

  void validate() const {
    scenario.validate();
    ttc.validate();
  }
};

namespace detail {

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads keys out of one JSON object, remembering which were consumed so
// leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ValidationError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(join_key(path_, key), std::string("wrong type: ") + e.what());
    }
  }

  const Json* child(const std::string& key) {
    used_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string key_path(const std::string& key) const { return join_key(path_, key); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!used_.count(it.key())) throw ValidationError(join_key(path_, it.key()), "unknown key");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const ExperimentConfig& cfg) {
  const ScenarioConfig& s = cfg.scenario;
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = s.seed;
  j["duration_s"] = s.duration;
  j["warmup_s"] = s.warmup;
  j["dt_s"] = s.dt;
  j["demand_vph"] = s.demand_vph;
  j["mpr"] = s.mpr;

  Json limits = Json::array();
  for (const auto& l : s.corridor.speed_limits()) limits.push_back(l ? Json(*l) : Json(nullptr));
  j["corridor"] = {{"edges_m", s.corridor.edge_lengths()}, {"speed_limits_mps", limits}, {"ring", s.corridor.ring()}};

  j["vehicle"] = {{"length_m", s.vehicle.length},
                  {"a_max_mps2", s.vehicle.a_max},
                  {"b_max_mps2", s.vehicle.b_max},
                  {"v_f_mps", s.vehicle.v_f}};
  j["idm"] = {{"a_mps2", s.idm.a}, {"b_mps2", s.idm.b}, {"v_f_mps", s.idm.v_f}, {"s0_m", s.idm.s0},
              {"headway_s", s.idm.T}};
  const ControllerConfig& c = s.controller;
  j["controller"] = {{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"headway_s", c.headway},
                     {"standstill_m", c.standstill},
                     {"topology", to_string(c.topology)},
                     {"max_neighbours", c.max_neighbours},
                     {"staleness_s", c.staleness_window},
                     {"sensor_range_m", c.sensor_range},
                     {"mix_sensor_rank1", c.mix_sensor_rank1}};
  j["channel"] = {{"per", s.channel.per}, {"range_m", s.channel.range}, {"beacon_hz", 1.0 / s.channel.beacon_period}};
  j["metrics"] = {{"ttc_cav_s", cfg.ttc.threshold_cav}, {"ttc_hdv_s", cfg.ttc.threshold_hdv},
                  {"debounce_s", cfg.ttc.debounce}};

  Json init = Json::array();
  for (const auto& iv : s.initial_vehicles)
    init.push_back({{"x_m", iv.x}, {"v_mps", iv.v}, {"class", to_string(iv.cls)}});
  j["initial_vehicles"] = init;
  Json pert = Json::array();
  for (const auto& p : s.perturbations)
    pert.push_back({{"vehicle", p.vehicle.value}, {"start_s", p.start}, {"duration_s", p.duration},
                    {"accel_mps2", p.accel}});
  j["perturbations"] = pert;
  return j;
}

// Parses onto the defaults. Missing keys keep their default; unknown keys
// and out-of-range values throw ValidationError naming the key path.
inline ExperimentConfig experiment_from_json(const Json& j) {
  ExperimentConfig cfg;
  ScenarioConfig& s = cfg.scenario;
  detail::ObjectReader root(j, "");

  int version = kSchemaVersion;
  root.read("schema_version", version);
  if (version != kSchemaVersion)
    throw ValidationError("schema_version", "unsupported version " + std::to_string(version));
  root.read("seed", s.seed);
  root.read("duration_s", s.duration);
  root.read("warmup_s", s.warmup);
  root.read("dt_s", s.dt);
  root.read("demand_vph", s.demand_vph);
  root.read("mpr", s.mpr);

  if (const Json* cj = root.child("corridor")) {
    detail::ObjectReader r(*cj, "corridor");
    std::vector<double> edges = s.corridor.edge_lengths();
    std::vector<std::optional<double>> limits;
    bool ring = s.corridor.ring();
    r.read("edges_m", edges);
    if (const Json* lj = r.child("speed_limits_mps")) {
      if (!lj->is_array()) throw ValidationError("corridor.speed_limits_mps", "expected an array");
      for (std::size_t i = 0; i < lj->size(); ++i) {
        const Json& v = (*lj)[i];
        if (v.is_null()) limits.emplace_back(std::nullopt);
        else if (v.is_number()) limits.emplace_back(v.get<double>());
        else throw ValidationError("corridor.speed_limits_mps[" + std::to_string(i) + "]", "expected number or null");
      }
    }
    r.read("ring", ring);
    r.finish();
    s.corridor = Corridor(std::move(edges), std::move(limits), ring);
  }

  if (const Json* vj = root.child("vehicle")) {
    detail::ObjectReader r(*vj, "vehicle");
    r.read("length_m", s.vehicle.length);
    r.read("a_max_mps2", s.vehicle.a_max);
    r.read("b_max_mps2", s.vehicle.b_max);
    r.read("v_f_mps", s.vehicle.v_f);
    r.finish();
  }
  if (const Json* ij = root.child("idm")) {
    detail::ObjectReader r(*ij, "idm");
    r.read("a_mps2", s.idm.a);
    r.read("b_mps2", s.idm.b);
    r.read("v_f_mps", s.idm.v_f);
    r.read("s0_m", s.idm.s0);
    r.read("headway_s", s.idm.T);
    r.finish();
  }
  if (const Json* cj = root.child("controller")) {
    detail::ObjectReader r(*cj, "controller");
    ControllerConfig& c = s.controller;
    r.read("alpha", c.alpha);
    r.read("beta", c.beta);
    r.read("headway_s", c.headway);
    r.read("standstill_m", c.standstill);
    std::string topo = to_string(c.topology);
    r.read("topology", topo);
    try {
      c.topology = topology_from_string(topo);
    } catch (const std::invalid_argument& e) {
      throw ValidationError("controller.topology", e.what());
    }
    r.read("max_neighbours", c.max_neighbours);
    r.read("staleness_s", c.staleness_window);
    r.read("sensor_range_m", c.sensor_range);
    r.read("mix_sensor_rank1", c.mix_sensor_rank1);
    r.finish();
  }
  if (const Json* chj = root.child("channel")) {
    detail::ObjectReader r(*chj, "channel");
    double hz = 1.0 / s.channel.beacon_period;
    r.read("per", s.channel.per);
    r.read("range_m", s.channel.range);
    r.read("beacon_hz", hz);
    if (!(hz > 0)) throw ValidationError("channel.beacon_hz", "must be > 0");
    s.channel.beacon_period = 1.0 / hz;
    r.finish();
  }
  if (const Json* mj = root.child("metrics")) {
    detail::ObjectReader r(*mj, "metrics");
    r.read("ttc_cav_s", cfg.ttc.threshold_cav);
    r.read("ttc_hdv_s", cfg.ttc.threshold_hdv);
    r.read("debounce_s", cfg.ttc.debounce);
    r.finish();
  }
  if (const Json* ij = root.child("initial_vehicles")) {
    if (!ij->is_array()) throw ValidationError("initial_vehicles", "expected an array");
    for (std::size_t i = 0; i < ij->size(); ++i) {
      const std::string path = "initial_vehicles[" + std::to_string(i) + "]";
      detail::ObjectReader r((*ij)[i], path);
      InitialVehicle iv;
      std::string cls = to_string(iv.cls);
      r.read("x_m", iv.x);
      r.read("v_mps", iv.v);
      r.read("class", cls);
      try {
        iv.cls = vehicle_class_from_string(cls);
      } catch (const std::invalid_argument& e) {
        throw ValidationError(path + ".class", e.what());
      }
      r.finish();
      s.initial_vehicles.push_back(iv);
    }
  }
  if (const Json* pj = root.child("perturbations")) {
    if (!pj->is_array()) throw ValidationError("perturbations", "expected an array");
    for (std::size_t i = 0; i < pj->size(); ++i) {
      detail::ObjectReader r((*pj)[i], "perturbations[" + std::to_string(i) + "]");
      Perturbation p;
      r.read("vehicle", p.vehicle.value);
      r.read("start_s", p.start);
      r.read("duration_s", p.duration);
      r.read("accel_mps2", p.accel);
      r.finish();
      s.perturbations.push_back(p);
    }
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline Json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("<document>", std::string("malformed JSON: ") + e.what());
  }
}

// Sets a dotted-path member, creating intermediate objects.
inline void set_path(Json& doc, const std::string& key, Json value) {
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError(key, "empty path component");
    if (node->is_null()) *node = Json::object();
    if (!node->is_object()) throw ValidationError(key, "path does not name an object member");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// Applies KEY=VALUE where KEY is a dotted path. VALUE is parsed as JSON
// when possible (numbers, booleans, null, arrays), otherwise taken as a
// string.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError(assignment, "override must look like KEY=VALUE");
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  set_path(doc, assignment.substr(0, eq), std::move(value));
}

inline Json get_path(const Json& doc, const std::string& key) {
  const Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ValidationError(key, "unknown key");
    node = &(*node)[part];
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

}  // namespace mpfsim
