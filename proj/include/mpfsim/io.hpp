#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mpfsim/config.hpp"
#include "mpfsim/engine.hpp"
#include "mpfsim/metrics.hpp"

namespace mpfsim::io {

// Shortest text that round-trips the double; locale independent, so output
// bytes depend only on the value.
inline std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, end);
}

inline std::string format_number(std::uint64_t value) { return std::to_string(value); }

inline std::optional<double> parse_number(std::string_view text) {
  double out = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [end, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || end != last) return std::nullopt;
  return out;
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

// Minimal RFC 4180 reader: quoted fields, doubled quotes, LF or CRLF.
inline std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log) {
  out << "t,id,class,x,v,u,rank\n";
  std::string line;
  for (const auto& r : log.rows) {
    line.clear();
    line += format_number(r.t);
    line += ',';
    line += std::to_string(r.id);
    line += ',';
    line += to_string(r.cls);
    line += ',';
    line += format_number(r.x);
    line += ',';
    line += format_number(r.v);
    line += ',';
    line += format_number(r.u);
    line += ',';
    line += std::to_string(r.rank);
    line += '\n';
    out << line;
  }
}

inline void write_events_csv(std::ostream& out, const std::vector<Event>& events) {
  out << "t,type,id_follower,id_leader\n";
  for (const auto& e : events)
    write_csv_row(out, {format_number(e.t), e.type, std::to_string(e.follower.value),
                        std::to_string(e.leader.value)});
}

inline Json metrics_json(const MetricsReport& rep, const ExperimentConfig& cfg) {
  Json j;
  j["conflicts_total"] = rep.conflicts_total;
  j["conflicts_cav"] = rep.conflicts_cav;
  j["conflicts_hdv"] = rep.conflicts_hdv;
  j["collisions"] = rep.collisions;
  j["travel_time_s"] = rep.travel_time_s;
  Json speeds = Json::array();
  for (const auto& s : rep.edge_mean_speed) speeds.push_back(s ? Json(*s) : Json(nullptr));
  j["edge_mean_speed"] = speeds;
  j["excluded_edges"] = rep.excluded_edges;
  j["delivery_rate"] = rep.delivery_rate ? Json(*rep.delivery_rate) : Json(nullptr);
  j["beacons_sent"] = rep.beacons_sent;
  j["beacons_delivered"] = rep.beacons_delivered;
  j["vehicles_spawned"] = rep.vehicles_spawned;
  j["entry_queue"] = rep.entry_queue;
  j["topology"] = to_string(cfg.scenario.controller.topology);
  j["mpr"] = cfg.scenario.mpr;
  j["per"] = cfg.scenario.channel.per;
  j["seed"] = cfg.scenario.seed;
  return j;
}

}  // namespace mpfsim::io
