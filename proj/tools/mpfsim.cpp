// mpfsim: run single scenarios, parameter sweeps, and PF/MPF comparison
// reports from the command line.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpfsim/config.hpp"
#include "mpfsim/io.hpp"
#include "mpfsim/metrics.hpp"
#include "mpfsim/sweep.hpp"

namespace fs = std::filesystem;
using namespace mpfsim;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::ofstream open_output(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

Json load_document(const std::string& path, const std::vector<std::string>& overrides) {
  Json doc = path.empty() ? Json::object() : parse_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? io::format_number(*v) : "n/a"; }

int cmd_run(const std::string& config, const std::vector<std::string>& overrides, const std::string& out_dir,
            std::optional<std::uint64_t> seed, bool print_effective) {
  Json doc = load_document(config, overrides);
  if (seed) doc["seed"] = *seed;
  const ExperimentConfig cfg = experiment_from_json(doc);
  if (print_effective) {
    std::cout << to_json(cfg).dump(2) << '\n';
    return 0;
  }
  const RunResult result = run(cfg.scenario);
  const MetricsReport rep = compute_report(result, cfg.scenario, cfg.ttc);

  const fs::path dir(out_dir);
  {
    auto f = open_output(dir, "trajectory.csv");
    io::write_trajectory_csv(f, result.log);
  }
  {
    auto f = open_output(dir, "events.csv");
    io::write_events_csv(f, result.events);
  }
  {
    auto f = open_output(dir, "metrics.json");
    f << io::metrics_json(rep, cfg).dump(2) << '\n';
  }
  std::cout << "travel_time_s=" << io::format_number(rep.travel_time_s) << " conflicts=" << rep.conflicts_total
            << " (cav=" << rep.conflicts_cav << " hdv=" << rep.conflicts_hdv << ") collisions=" << rep.collisions
            << " delivery_rate=" << fmt_opt(rep.delivery_rate) << '\n';
  return 0;
}

int cmd_sweep(const std::string& spec_path, const std::vector<std::string>& overrides, const std::string& out_dir,
              unsigned workers, std::optional<std::uint64_t> seed, bool timing) {
  if (spec_path.empty()) throw ValidationError("--spec", "a sweep spec file is required");
  const Json doc = load_document(spec_path, overrides);
  const SweepSpec spec = sweep_spec_from_json(doc, seed);
  const auto cells = expand(spec);
  std::cout << "cells=" << cells.size() << " replications=" << spec.replications
            << " runs=" << cells.size() * static_cast<std::size_t>(spec.replications) << std::endl;

  const SweepTable table = run_sweep(spec, cells, SweepOptions{workers, timing});
  const SummaryTable summary = aggregate(table, spec.effective_group_by(), spec.baseline);
  const fs::path dir(out_dir);
  {
    auto f = open_output(dir, "results.csv");
    write_results_csv(f, table);
  }
  {
    auto f = open_output(dir, "summary.csv");
    write_summary_csv(f, summary);
  }
  const auto failed = std::count_if(table.rows.begin(), table.rows.end(), [](const SweepRow& r) { return !r.ok(); });
  std::cout << "rows=" << table.rows.size() << " failed=" << failed << '\n';
  return 0;
}

void print_aligned(std::ostream& out, const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t c = 0; c < f.size(); ++c) {
      if (c) out << "  ";
      out << std::string(width[c] - f[c].size(), ' ') << f[c];
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

// Two decimals for the text rendering; the CSV keeps full precision.
std::vector<std::vector<std::string>> rounded(std::vector<std::vector<std::string>> rows, std::size_t from) {
  for (auto& r : rows)
    for (std::size_t c = from; c < r.size(); ++c) {
      if (auto v = io::parse_number(r[c])) {
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(2);
        s << *v;
        r[c] = s.str() == "-0.00" ? "0.00" : s.str();
      }
    }
  return rows;
}

int cmd_report(const std::string& results_path, const std::string& baseline_sel, const std::string& out_dir) {
  std::ifstream in(results_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + results_path);
  const SweepTable table = read_results_csv(in);
  const auto eq = baseline_sel.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("--baseline", "expected KEY=VALUE, e.g. controller.topology=PF");
  const Comparison cmp = compare_to_baseline(table, Baseline{baseline_sel.substr(0, eq), baseline_sel.substr(eq + 1)});
  if (!cmp.missing_baselines.empty()) {
    std::cerr << "missing baseline cells (" << baseline_sel << "):\n";
    for (const auto& m : cmp.missing_baselines) std::cerr << "  " << m << '\n';
    return kExitValidation;
  }
  const auto header = comparison_header(cmp);
  const auto cells = comparison_cells(cmp);
  if (!out_dir.empty()) {
    auto f = open_output(fs::path(out_dir), "report.csv");
    io::write_csv_row(f, header);
    for (const auto& r : cells) io::write_csv_row(f, r);
  }
  print_aligned(std::cout, header, rounded(cells, cmp.group_keys.size() + 1));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-traffic CACC microsimulator"};
  app.require_subcommand(1);

  std::string config, spec, out = "out", results, baseline = "controller.topology=PF";
  std::vector<std::string> overrides;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::uint64_t> seed;
  bool print_effective = false, timing = false;

  auto* run_cmd = app.add_subcommand("run", "Run one scenario and write trajectory, events and metrics");
  run_cmd->add_option("--config", config, "Scenario JSON (defaults when omitted)");
  run_cmd->add_option("--set", overrides, "Override KEY=VALUE (dotted key, repeatable)");
  run_cmd->add_option("--out", out, "Output directory");
  run_cmd->add_option("--seed", seed, "Override the scenario seed");
  run_cmd->add_flag("--print-effective-config", print_effective, "Print the resolved configuration and exit");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run a sweep spec and write results.csv and summary.csv");
  sweep_cmd->add_option("--spec", spec, "Sweep spec JSON")->required();
  sweep_cmd->add_option("--set", overrides, "Override KEY=VALUE in the spec document (repeatable)");
  sweep_cmd->add_option("--out", out, "Output directory");
  sweep_cmd->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--seed", seed, "Master seed (overrides the spec)");
  sweep_cmd->add_flag("--timing", timing, "Fill the runtime_s column (output is then not reproducible)");

  auto* report_cmd = app.add_subcommand("report", "Compare sweep results against a baseline cell");
  report_cmd->add_option("results", results, "results.csv from a sweep")->required();
  report_cmd->add_option("--baseline", baseline, "Baseline selector KEY=VALUE");
  std::string report_out;
  report_cmd->add_option("--out", report_out, "Directory for report.csv");

  auto* defaults_cmd = app.add_subcommand("print-defaults", "Print the default scenario configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*run_cmd) return cmd_run(config, overrides, out, seed, print_effective);
    if (*sweep_cmd) return cmd_sweep(spec, overrides, out, workers, seed, timing);
    if (*report_cmd) return cmd_report(results, baseline, report_out);
    if (*defaults_cmd) {
      std::cout << to_json(ExperimentConfig{}).dump(2) << '\n';
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
