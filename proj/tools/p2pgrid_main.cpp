// Command-line driver: run, validate, sweep and report on scenario files.
// Exit codes: 0 success, 1 runtime error, 2 validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "p2pgrid/p2pgrid.hpp"

namespace fs = std::filesystem;
using namespace p2pgrid;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kValidationError = 2;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << data;
  if (!out) throw Error("write failed for " + path.string());
}

Scenario load_scenario(const fs::path& path, std::optional<std::uint64_t> seed,
                       std::optional<std::size_t> rounds) {
  Scenario sc = parse_scenario(read_file(path));
  if (seed) sc.seed = *seed;
  if (rounds) sc.rounds = *rounds;
  return sc;
}

int run_one(const Scenario& sc, const fs::path& out_dir, bool quiet) {
  const SimTrace trace = run_scenario(sc);
  const TraceFiles files = write_trace(trace);
  fs::create_directories(out_dir);
  write_file(out_dir / "trace.csv", files.csv);
  write_file(out_dir / "summary.json", files.summary_json);
  if (!quiet) std::cout << files.summary_json;
  return kOk;
}

// Walk a dotted path ("channel.loss_probability", "microgrids.0.graph.epsilon")
// into the raw scenario document.
json* resolve_path(json& doc, const std::string& dotted) {
  json* cur = &doc;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (cur->is_array()) {
      try {
        const std::size_t idx = std::stoul(part);
        if (idx >= cur->size()) return nullptr;
        cur = &(*cur)[idx];
      } catch (const std::exception&) {
        return nullptr;
      }
    } else if (cur->is_object()) {
      const auto it = cur->find(part);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else {
      return nullptr;
    }
  }
  return cur;
}

std::string value_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

int do_sweep(const fs::path& scenario_path, const std::string& param,
             const std::vector<double>& values, const fs::path& out_dir,
             std::optional<std::uint64_t> seed, std::optional<std::size_t> rounds,
             bool quiet) {
  json doc;
  try {
    doc = json::parse(read_file(scenario_path));
  } catch (const json::parse_error& e) {
    throw SyntaxError(std::string("invalid JSON: ") + e.what());
  }
  if (!resolve_path(doc, param))
    throw UnknownParameter("parameter path '" + param + "' not found in scenario");

  std::string collated =
      "value,final_freq_hz_min,final_freq_hz_max,min_voltage_pu,max_voltage_pu,"
      "total_generation_cost,frequency_violation,voltage_violation,"
      "secondary_consensus_rounds_total\n";
  for (double v : values) {
    json run_doc = doc;
    json* leaf = resolve_path(run_doc, param);
    if (leaf->is_number_integer())
      *leaf = static_cast<std::int64_t>(std::llround(v));
    else
      *leaf = v;
    Scenario sc = parse_scenario(run_doc.dump());
    if (seed) sc.seed = *seed;
    if (rounds) sc.rounds = *rounds;
    const fs::path sub = out_dir / value_label(v);
    run_one(sc, sub, true);
    const SummaryReport rep = parse_summary(read_file(sub / "summary.json"));
    double f_min = 0.0, f_max = 0.0;
    bool first = true;
    for (const auto& [id, f] : rep.final_frequency_hz) {
      if (first) {
        f_min = f_max = f;
        first = false;
      } else {
        f_min = std::min(f_min, f);
        f_max = std::max(f_max, f);
      }
    }
    std::size_t consensus_total = 0;
    for (std::size_t r : rep.secondary_consensus_rounds) consensus_total += r;
    collated += value_label(v);
    collated += ',' + format_fixed(f_min) + ',' + format_fixed(f_max);
    collated += ',' + format_fixed(rep.min_voltage_pu);
    collated += ',' + format_fixed(rep.max_voltage_pu);
    collated += ',' + format_fixed(rep.total_generation_cost);
    collated += rep.frequency_violation ? ",1" : ",0";
    collated += rep.voltage_violation ? ",1" : ",0";
    collated += ',' + std::to_string(consensus_total) + '\n';
  }
  fs::create_directories(out_dir);
  write_file(out_dir / "sweep.csv", collated);
  if (!quiet) std::cout << collated;
  return kOk;
}

// Recompute the trace-derivable part of a summary from an emitted CSV.
int do_report(const fs::path& trace_path, bool quiet) {
  std::ifstream in(trace_path);
  if (!in) throw Error("cannot read " + trace_path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "round,freq_hz,node_id,voltage_pu,der_id,p_mw,residual,"
              "msgs_delivered,msgs_lost")
    throw ValidationFailed(trace_path.string() + ": not a trace.csv (bad header)");
  std::size_t rows = 0, last_round = 0, delivered = 0, lost = 0;
  double v_min = 0.0, v_max = 0.0, f_min = 0.0, f_max = 0.0, residual = 0.0;
  bool any = false;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9)
      throw ValidationFailed(trace_path.string() + ": malformed row " +
                             std::to_string(rows + 2));
    const std::size_t round = std::stoul(fields[0]);
    const double freq = std::stod(fields[1]);
    const double volt = std::stod(fields[3]);
    residual = std::stod(fields[6]);
    delivered += std::stoul(fields[7]);
    lost += std::stoul(fields[8]);
    if (!any) {
      v_min = v_max = volt;
      f_min = f_max = freq;
      any = true;
    } else {
      v_min = std::min(v_min, volt);
      v_max = std::max(v_max, volt);
    }
    if (round >= last_round) {
      last_round = round;
      f_min = std::min(f_min, freq);
      f_max = std::max(f_max, freq);
    }
    ++rows;
  }
  json rep;
  rep["rows"] = rows;
  rep["last_round"] = any ? json(last_round) : json();
  rep["min_voltage_pu"] = any ? json(v_min) : json();
  rep["max_voltage_pu"] = any ? json(v_max) : json();
  rep["final_residual"] = any ? json(residual) : json();
  rep["messages_delivered"] = delivered;
  rep["messages_lost"] = lost;
  if (!quiet) std::cout << rep.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer microgrid control simulator"};
  app.require_subcommand(1);

  bool quiet = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  app.add_flag("--quiet", quiet, "suppress stdout output");
  app.add_option("--seed", seed, "override the scenario seed");
  app.add_option("--rounds", rounds, "override the scenario round count");

  std::string scenario_path, out_dir = "out", param, trace_path;
  std::vector<double> values;

  auto* run = app.add_subcommand("run", "run a scenario and write trace + summary");
  run->add_option("scenario", scenario_path, "scenario file")->required();
  run->add_option("-o,--out", out_dir, "output directory");

  auto* validate = app.add_subcommand("validate", "parse and validate a scenario");
  validate->add_option("scenario", scenario_path, "scenario file")->required();

  auto* sweep = app.add_subcommand("sweep", "run a scenario over parameter values");
  sweep->add_option("scenario", scenario_path, "scenario file")->required();
  sweep->add_option("--param", param, "dotted parameter path")->required();
  sweep->add_option("--values", values, "values to sweep")->required();
  sweep->add_option("-o,--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "summarize an emitted trace.csv");
  report->add_option("trace", trace_path, "trace.csv file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return run_one(load_scenario(scenario_path, seed, rounds), out_dir, quiet);
    if (validate->parsed()) {
      load_scenario(scenario_path, seed, rounds);
      if (!quiet) std::cout << "ok\n";
      return kOk;
    }
    if (sweep->parsed())
      return do_sweep(scenario_path, param, values, out_dir, seed, rounds, quiet);
    if (report->parsed()) return do_report(trace_path, quiet);
  } catch (const ValidationFailed& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}
