#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mpfsim/config.hpp"
#include "mpfsim/io.hpp"
#include "mpfsim/metrics.hpp"
#include "mpfsim/rng.hpp"

namespace mpfsim {

enum class SeedScope {
  Replication,  // seed depends on the replication only: every cell sees the same demand draws
  Cell,         // seed also depends on the cell's axis assignment
};

struct SweepAxis {
  std::string key;  // dotted config path, e.g. "channel.per"
  std::vector<Json> values;
};

struct Baseline {
  std::string key;
  std::string value;  // compared against the formatted axis value
};

struct SweepSpec {
  Json base = Json::object();
  std::vector<SweepAxis> axes;
  int replications{5};
  std::uint64_t seed{0};
  bool dedup_zero_mpr{true};
  SeedScope seed_scope{SeedScope::Replication};
  std::optional<Baseline> baseline;
  std::vector<std::string> group_by;  // empty: all axes

  std::vector<std::string> axis_keys() const {
    std::vector<std::string> keys;
    for (const auto& a : axes) keys.push_back(a.key);
    return keys;
  }
  std::vector<std::string> effective_group_by() const { return group_by.empty() ? axis_keys() : group_by; }
};

// Text form of an axis value as it appears in CSV columns.
inline std::string axis_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) return io::format_number(v.get<double>());
  return v.dump();
}

inline SweepSpec sweep_spec_from_json(const Json& j, std::optional<std::uint64_t> seed_override = std::nullopt) {
  SweepSpec spec;
  detail::ObjectReader root(j, "");
  int version = kSchemaVersion;
  root.read("schema_version", version);
  if (version != kSchemaVersion)
    throw ValidationError("schema_version", "unsupported version " + std::to_string(version));

  std::optional<std::uint64_t> seed;
  if (const Json* sj = root.child("seed")) {
    if (!sj->is_number_integer() || (!sj->is_number_unsigned() && sj->get<std::int64_t>() < 0))
      throw ValidationError("seed", "expected a non-negative integer");
    seed = sj->get<std::uint64_t>();
  }
  if (seed_override) seed = seed_override;
  if (!seed) throw ValidationError("seed", "a sweep needs an explicit master seed");
  spec.seed = *seed;

  root.read("replications", spec.replications);
  if (spec.replications < 1) throw ValidationError("replications", "must be >= 1");
  root.read("dedup_zero_mpr", spec.dedup_zero_mpr);

  std::string scope = "replication";
  root.read("seed_scope", scope);
  if (scope == "replication") spec.seed_scope = SeedScope::Replication;
  else if (scope == "cell") spec.seed_scope = SeedScope::Cell;
  else throw ValidationError("seed_scope", "expected \"replication\" or \"cell\"");

  if (const Json* bj = root.child("base")) spec.base = *bj;
  if (!spec.base.is_object()) throw ValidationError("base", "expected an object");
  // Rejects bad base documents before anything runs.
  const Json effective = to_json(experiment_from_json(spec.base));

  const Json* aj = root.child("axes");
  if (!aj || !aj->is_array() || aj->empty()) throw ValidationError("axes", "expected a non-empty array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < aj->size(); ++i) {
    const std::string path = "axes[" + std::to_string(i) + "]";
    detail::ObjectReader r((*aj)[i], path);
    SweepAxis axis;
    r.read("key", axis.key);
    const Json* vj = r.child("values");
    r.finish();
    if (axis.key.empty()) throw ValidationError(path + ".key", "missing");
    if (axis.key == "seed" || axis.key == "schema_version")
      throw ValidationError(axis.key, "cannot be swept; seeds derive from the master seed");
    get_path(effective, axis.key);  // throws naming the unknown key
    if (!seen.insert(axis.key).second) throw ValidationError(path + ".key", "duplicate axis " + axis.key);
    if (!vj || !vj->is_array() || vj->empty()) throw ValidationError(path + ".values", "expected a non-empty array");
    axis.values.assign(vj->begin(), vj->end());
    spec.axes.push_back(std::move(axis));
  }

  if (const Json* gj = root.child("group_by")) {
    if (!gj->is_array()) throw ValidationError("group_by", "expected an array");
    for (const auto& g : *gj) {
      const std::string key = g.get<std::string>();
      if (!seen.count(key)) throw ValidationError("group_by", "not an axis: " + key);
      spec.group_by.push_back(key);
    }
  }
  if (const Json* bj = root.child("baseline")) {
    detail::ObjectReader r(*bj, "baseline");
    Baseline b;
    Json value;
    r.read("key", b.key);
    r.read("value", value);
    r.finish();
    b.value = axis_text(value);
    spec.baseline = std::move(b);
  }
  root.finish();
  return spec;
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

struct SweepCell {
  std::size_t index{0};
  std::vector<Json> assignment;  // one value per axis
  Json document;                 // base with the assignment applied, seed not yet set
};

namespace detail {

inline std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (unsigned char c : s) h = rng::splitmix64(h ^ c);
  return h;
}

inline bool carries_no_cav(const ExperimentConfig& cfg) {
  if (cfg.scenario.mpr != 0.0) return false;
  return std::none_of(cfg.scenario.initial_vehicles.begin(), cfg.scenario.initial_vehicles.end(),
                      [](const InitialVehicle& v) { return v.cls == VehicleClass::CAV; });
}

}  // namespace detail

// Lexicographic Cartesian product, first axis slowest. With dedup on, a
// cell whose effective configuration repeats an earlier one is dropped;
// cells without CAVs compare equal regardless of controller settings.
inline std::vector<SweepCell> expand(const SweepSpec& spec) {
  if (spec.axes.empty()) throw ValidationError("axes", "expected a non-empty array");
  if (spec.replications < 1) throw ValidationError("replications", "must be >= 1");
  const Json base_controller = to_json(experiment_from_json(spec.base))["controller"];

  std::vector<SweepCell> cells;
  std::set<std::string> canonical_seen;
  std::vector<std::size_t> digit(spec.axes.size(), 0);
  while (true) {
    SweepCell cell;
    cell.document = spec.base;
    for (std::size_t a = 0; a < spec.axes.size(); ++a) {
      cell.assignment.push_back(spec.axes[a].values[digit[a]]);
      set_path(cell.document, spec.axes[a].key, cell.assignment.back());
    }
    ExperimentConfig cfg;
    try {
      cfg = experiment_from_json(cell.document);
    } catch (const ValidationError& e) {
      throw ValidationError(e.key(), e.reason() + " (in sweep cell " + Json(cell.assignment).dump() + ")");
    }
    bool keep = true;
    if (spec.dedup_zero_mpr) {
      Json canonical = to_json(cfg);
      canonical.erase("seed");
      if (detail::carries_no_cav(cfg)) canonical["controller"] = base_controller;
      keep = canonical_seen.insert(canonical.dump()).second;
    }
    if (keep) {
      cell.index = cells.size();
      cells.push_back(std::move(cell));
    }

    std::size_t a = spec.axes.size();
    while (a > 0) {
      --a;
      if (++digit[a] < spec.axes[a].values.size()) break;
      digit[a] = 0;
      if (a == 0) return cells;
    }
  }
}

inline std::uint64_t derive_seed(const SweepSpec& spec, const SweepCell& cell, int replication) {
  const auto rep = static_cast<std::uint64_t>(replication);
  if (spec.seed_scope == SeedScope::Replication) return rng::hash(spec.seed, rng::Stream::Sweep, {rep});
  return rng::hash(spec.seed, rng::Stream::Sweep, {detail::text_hash(Json(cell.assignment).dump()), rep});
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {
      "conflicts_total", "conflicts_cav",     "conflicts_hdv",    "collisions",  "travel_time_s",
      "delivery_rate",   "beacons_sent",      "beacons_delivered", "vehicles_spawned", "entry_queue"};
  return cols;
}

inline std::vector<std::optional<double>> metric_values(const MetricsReport& m) {
  auto d = [](std::uint64_t v) { return std::optional<double>(static_cast<double>(v)); };
  return {d(m.conflicts_total), d(m.conflicts_cav),     d(m.conflicts_hdv),    d(m.collisions),
          m.travel_time_s,      m.delivery_rate,        d(m.beacons_sent),     d(m.beacons_delivered),
          d(m.vehicles_spawned), d(m.entry_queue)};
}

struct SweepRow {
  std::vector<std::string> axis_values;
  std::vector<std::optional<double>> metrics;  // aligned with metric_columns(); empty on failure
  std::uint64_t seed{0};
  std::string status{"ok"};
  std::optional<double> runtime_s;

  bool ok() const { return status == "ok"; }
};

struct SweepTable {
  std::vector<std::string> axis_keys;
  std::vector<SweepRow> rows;
};

struct SweepOptions {
  unsigned workers{1};
  bool timing{false};  // wall-clock runtimes make the table non-reproducible
};

inline SweepRow run_cell(const SweepSpec& spec, const SweepCell& cell, int replication, bool timing) {
  SweepRow row;
  for (const auto& v : cell.assignment) row.axis_values.push_back(axis_text(v));
  row.seed = derive_seed(spec, cell, replication);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Json doc = cell.document;
    doc["seed"] = row.seed;
    const ExperimentConfig cfg = experiment_from_json(doc);
    const RunResult result = run(cfg.scenario);
    row.metrics = metric_values(compute_report(result, cfg.scenario, cfg.ttc));
  } catch (const std::exception& e) {
    row.metrics.clear();
    row.status = std::string("failed: ") + e.what();
  }
  if (timing) row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

// Rows are ordered by (cell, replication) whatever the worker count.
inline SweepTable run_sweep(const SweepSpec& spec, const std::vector<SweepCell>& cells, SweepOptions opt = {}) {
  SweepTable table;
  table.axis_keys = spec.axis_keys();
  const std::size_t reps = static_cast<std::size_t>(spec.replications);
  const std::size_t jobs = cells.size() * reps;
  table.rows.resize(jobs);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++)
      table.rows[job] = run_cell(spec, cells[job / reps], static_cast<int>(job % reps), opt.timing);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(std::max<std::size_t>(jobs, 1))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  return table;
}

inline SweepTable run_sweep(const SweepSpec& spec, SweepOptions opt = {}) { return run_sweep(spec, expand(spec), opt); }

inline void write_results_csv(std::ostream& out, const SweepTable& table) {
  std::vector<std::string> header = table.axis_keys;
  for (const auto& c : metric_columns()) header.push_back(c);
  header.insert(header.end(), {"seed", "status", "runtime_s"});
  io::write_csv_row(out, header);
  for (const auto& row : table.rows) {
    std::vector<std::string> f = row.axis_values;
    for (std::size_t i = 0; i < metric_columns().size(); ++i) {
      const bool has = i < row.metrics.size() && row.metrics[i];
      f.push_back(has ? io::format_number(*row.metrics[i]) : "");
    }
    f.push_back(std::to_string(row.seed));
    f.push_back(row.status);
    f.push_back(row.runtime_s ? io::format_number(*row.runtime_s) : "");
    io::write_csv_row(out, f);
  }
}

// Inverse of write_results_csv: axis columns are the ones before the first
// metric column.
inline SweepTable read_results_csv(std::istream& in) {
  const auto raw = io::read_csv(in);
  if (raw.empty()) throw ValidationError("<results>", "empty table");
  const auto& header = raw.front();
  const auto& metrics = metric_columns();
  const auto first_metric = std::find(header.begin(), header.end(), metrics.front());
  if (first_metric == header.end()) throw ValidationError("<results>", "missing column " + metrics.front());
  const std::size_t n_axes = static_cast<std::size_t>(first_metric - header.begin());
  const std::size_t expected = n_axes + metrics.size() + 3;
  if (header.size() != expected) throw ValidationError("<results>", "unexpected column count");
  for (std::size_t i = 0; i < metrics.size(); ++i)
    if (header[n_axes + i] != metrics[i]) throw ValidationError("<results>", "expected column " + metrics[i]);

  SweepTable table;
  table.axis_keys.assign(header.begin(), first_metric);
  for (std::size_t r = 1; r < raw.size(); ++r) {
    const auto& f = raw[r];
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != expected) throw ValidationError("<results>", "row " + std::to_string(r) + " has wrong width");
    SweepRow row;
    row.axis_values.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(n_axes));
    row.status = f[expected - 2];
    if (row.ok()) {
      for (std::size_t i = 0; i < metrics.size(); ++i) {
        const std::string& cell = f[n_axes + i];
        if (cell.empty()) {
          row.metrics.emplace_back(std::nullopt);
          continue;
        }
        const auto v = io::parse_number(cell);
        if (!v) throw ValidationError("<results>", "row " + std::to_string(r) + " column " + metrics[i] + " not numeric");
        row.metrics.emplace_back(*v);
      }
    }
    row.seed = std::stoull(f[expected - 3]);
    if (!f[expected - 1].empty()) row.runtime_s = io::parse_number(f[expected - 1]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Stats {
  std::size_t n{0};
  double mean{0.0};
  double sd{0.0};  // sample (n - 1); 0 for a single value
  double min{0.0};
  double max{0.0};
};

inline Stats describe(const std::vector<double>& xs) {
  Stats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  return s;
}

// (value - baseline) / baseline in percent; undefined for a zero baseline.
inline std::optional<double> relative_change_pct(double value, double baseline) {
  if (baseline == 0.0) return std::nullopt;
  return 100.0 * (value - baseline) / baseline;
}

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> m = {"travel_time_s", "conflicts_total", "conflicts_cav", "conflicts_hdv",
                                             "collisions"};
  return m;
}

struct SummaryRow {
  std::vector<std::string> group_values;
  std::size_t failed{0};
  std::vector<Stats> stats;  // aligned with summary_metrics()
  std::optional<double> travel_time_change_pct;
  std::optional<double> conflicts_change_pct;
};

struct SummaryTable {
  std::vector<std::string> group_keys;
  std::optional<Baseline> baseline;
  std::vector<SummaryRow> rows;
};

namespace detail {

inline std::size_t column_of(const std::vector<std::string>& keys, const std::string& key, const std::string& what) {
  const auto it = std::find(keys.begin(), keys.end(), key);
  if (it == keys.end()) throw ValidationError(what, "unknown column " + key);
  return static_cast<std::size_t>(it - keys.begin());
}

inline std::size_t metric_index(const std::string& name) {
  return column_of(metric_columns(), name, "metric");
}

}  // namespace detail

// Groups rows by `group_by` (in first-appearance order) and summarises the
// successful ones. With a baseline, each group is compared against the group
// that has the same values except `baseline.key == baseline.value`.
inline SummaryTable aggregate(const SweepTable& table, const std::vector<std::string>& group_by,
                              const std::optional<Baseline>& baseline = std::nullopt) {
  if (table.rows.empty()) throw ValidationError("<results>", "empty table");
  std::vector<std::size_t> cols;
  for (const auto& g : group_by) cols.push_back(detail::column_of(table.axis_keys, g, "group_by"));

  SummaryTable out;
  out.group_keys = group_by;
  out.baseline = baseline;
  std::map<std::vector<std::string>, std::size_t> index;
  std::vector<std::vector<std::vector<double>>> samples;  // group -> metric -> values
  for (const auto& row : table.rows) {
    std::vector<std::string> key;
    for (std::size_t c : cols) key.push_back(row.axis_values[c]);
    auto [it, fresh] = index.try_emplace(key, out.rows.size());
    if (fresh) {
      out.rows.push_back(SummaryRow{key, 0, {}, {}, {}});
      samples.emplace_back(summary_metrics().size());
    }
    SummaryRow& s = out.rows[it->second];
    if (!row.ok()) {
      ++s.failed;
      continue;
    }
    for (std::size_t m = 0; m < summary_metrics().size(); ++m) {
      const auto& v = row.metrics[detail::metric_index(summary_metrics()[m])];
      if (v) samples[it->second][m].push_back(*v);
    }
  }
  for (std::size_t g = 0; g < out.rows.size(); ++g)
    for (const auto& xs : samples[g]) out.rows[g].stats.push_back(describe(xs));

  if (baseline) {
    const auto bcol = std::find(group_by.begin(), group_by.end(), baseline->key);
    if (bcol == group_by.end()) throw ValidationError("baseline.key", "not a grouping column: " + baseline->key);
    const std::size_t b = static_cast<std::size_t>(bcol - group_by.begin());
    const bool present = std::any_of(out.rows.begin(), out.rows.end(),
                                     [&](const SummaryRow& r) { return r.group_values[b] == baseline->value; });
    if (!present) throw ValidationError("baseline.value", "no rows with " + baseline->key + "=" + baseline->value);
    const std::size_t tt = 0;
    const std::size_t conf = 1;
    for (auto& r : out.rows) {
      auto key = r.group_values;
      key[b] = baseline->value;
      const auto it = index.find(key);
      if (it == index.end()) continue;
      const SummaryRow& base = out.rows[it->second];
      if (base.stats[tt].n && r.stats[tt].n)
        r.travel_time_change_pct = relative_change_pct(r.stats[tt].mean, base.stats[tt].mean);
      if (base.stats[conf].n && r.stats[conf].n)
        r.conflicts_change_pct = relative_change_pct(r.stats[conf].mean, base.stats[conf].mean);
    }
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const SummaryTable& s) {
  std::vector<std::string> header = s.group_keys;
  header.insert(header.end(), {"n", "failed"});
  for (const auto& m : summary_metrics())
    for (const char* stat : {"_mean", "_sd", "_min", "_max"}) header.push_back(m + stat);
  header.insert(header.end(), {"travel_time_change_pct", "conflicts_change_pct"});
  io::write_csv_row(out, header);
  auto opt = [](const std::optional<double>& v) { return v ? io::format_number(*v) : std::string(); };
  for (const auto& r : s.rows) {
    std::vector<std::string> f = r.group_values;
    f.push_back(std::to_string(r.stats.empty() ? 0 : r.stats.front().n));
    f.push_back(std::to_string(r.failed));
    for (const auto& st : r.stats) {
      if (st.n == 0) {
        f.insert(f.end(), 4, "");
        continue;
      }
      for (double v : {st.mean, st.sd, st.min, st.max}) f.push_back(io::format_number(v));
    }
    f.push_back(opt(r.travel_time_change_pct));
    f.push_back(opt(r.conflicts_change_pct));
    io::write_csv_row(out, f);
  }
}

// ---------------------------------------------------------------------------
// Baseline comparison (PF vs MPF style)
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::vector<std::string> group_values;  // every axis except the baseline key
  std::string compared;                   // the non-baseline value of the baseline key
  double baseline_travel_time{0.0};
  double travel_time{0.0};
  std::optional<double> travel_time_change_pct;
  double baseline_conflicts{0.0};
  double conflicts{0.0};
  std::optional<double> conflicts_change_pct;
};

struct Comparison {
  std::vector<std::string> group_keys;
  std::string baseline_key;
  std::string baseline_value;
  std::vector<ComparisonRow> rows;
  std::vector<std::string> missing_baselines;  // groups with compared cells but no baseline cell
};

inline Comparison compare_to_baseline(const SweepTable& table, const Baseline& baseline) {
  detail::column_of(table.axis_keys, baseline.key, "baseline.key");
  std::vector<std::string> group_by;
  for (const auto& k : table.axis_keys)
    if (k != baseline.key) group_by.push_back(k);
  std::vector<std::string> all = group_by;
  all.push_back(baseline.key);
  const SummaryTable s = aggregate(table, all);

  Comparison out;
  out.group_keys = group_by;
  out.baseline_key = baseline.key;
  out.baseline_value = baseline.value;
  const std::size_t b = group_by.size();
  std::map<std::vector<std::string>, const SummaryRow*> base;
  for (const auto& r : s.rows)
    if (r.group_values[b] == baseline.value) base[{r.group_values.begin(), r.group_values.begin() + static_cast<std::ptrdiff_t>(b)}] = &r;

  for (const auto& r : s.rows) {
    if (r.group_values[b] == baseline.value) continue;
    const std::vector<std::string> key(r.group_values.begin(), r.group_values.begin() + static_cast<std::ptrdiff_t>(b));
    const auto it = base.find(key);
    if (it == base.end() || it->second->stats[0].n == 0) {
      std::string label;
      for (std::size_t i = 0; i < key.size(); ++i) label += (i ? "," : "") + group_by[i] + "=" + key[i];
      if (std::find(out.missing_baselines.begin(), out.missing_baselines.end(), label) == out.missing_baselines.end())
        out.missing_baselines.push_back(label);
      continue;
    }
    if (r.stats[0].n == 0) continue;
    const SummaryRow& br = *it->second;
    ComparisonRow c;
    c.group_values = key;
    c.compared = r.group_values[b];
    c.baseline_travel_time = br.stats[0].mean;
    c.travel_time = r.stats[0].mean;
    c.travel_time_change_pct = relative_change_pct(c.travel_time, c.baseline_travel_time);
    c.baseline_conflicts = br.stats[1].mean;
    c.conflicts = r.stats[1].mean;
    c.conflicts_change_pct = relative_change_pct(c.conflicts, c.baseline_conflicts);
    out.rows.push_back(std::move(c));
  }
  return out;
}

inline std::vector<std::string> comparison_header(const Comparison& c) {
  std::vector<std::string> h = c.group_keys;
  const std::string& b = c.baseline_value;
  h.insert(h.end(), {c.baseline_key, "travel_time_s_" + b, "travel_time_s", "travel_time_change_pct",
                     "conflicts_" + b, "conflicts", "conflicts_change_pct"});
  return h;
}

inline std::vector<std::vector<std::string>> comparison_cells(const Comparison& c) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_number(*v) : std::string(); };
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : c.rows) {
    std::vector<std::string> f = r.group_values;
    f.push_back(r.compared);
    f.push_back(io::format_number(r.baseline_travel_time));
    f.push_back(io::format_number(r.travel_time));
    f.push_back(opt(r.travel_time_change_pct));
    f.push_back(io::format_number(r.baseline_conflicts));
    f.push_back(io::format_number(r.conflicts));
    f.push_back(opt(r.conflicts_change_pct));
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace mpfsim
