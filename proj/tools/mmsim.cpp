// mmsim: validate configs, run sweeps, sweep the LSSP threshold, re-export
// traces, list presets.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mmsim/report.hpp"

#ifndef MMSIM_PRESET_DIR
#define MMSIM_PRESET_DIR "presets"
#endif

namespace fs = std::filesystem;
using namespace mmsim;

namespace {

constexpr int kExitViolations = 1;
constexpr int kExitError = 2;
constexpr int kExitInvariant = 3;

struct RunFlags {
  std::string config;
  std::int64_t seed = -1;
  int steps = 0;
  int scale_down = 1;
  std::string out;
  std::vector<std::string> mixtures;
  std::vector<std::string> architectures;
};

// Resolves a config argument: a path, or the name of a shipped preset.
std::string resolve_config(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  for (const auto& name : {arg, arg + ".json"}) {
    const fs::path p = fs::path(MMSIM_PRESET_DIR) / name;
    if (fs::exists(p)) return p.string();
  }
  std::string under = arg;
  for (auto& ch : under)
    if (ch == '-') ch = '_';
  const fs::path p = fs::path(MMSIM_PRESET_DIR) / (under + ".json");
  if (fs::exists(p)) return p.string();
  return arg;
}

ExperimentConfig load_checked(const std::string& arg) {
  auto c = load_config(resolve_config(arg));
  const auto v = validate_config(c);
  if (!v.empty()) {
    std::ostringstream os;
    for (const auto& s : v) os << "\n  " << s;
    throw ConfigError("invalid config '" + arg + "':" + os.str());
  }
  return c;
}

ExperimentConfig apply_flags(ExperimentConfig c, const RunFlags& f) {
  if (f.seed >= 0) c.seed = static_cast<std::uint64_t>(f.seed);
  if (f.steps > 0) c.steps = f.steps;
  if (!f.mixtures.empty()) {
    c.mixture_sweep.clear();
    for (const auto& m : f.mixtures) c.mixture_sweep.push_back(parse_mixture_text(m));
  }
  if (!f.architectures.empty()) {
    c.architectures.clear();
    for (const auto& a : f.architectures) c.architectures.push_back(parse_architecture(a));
  }
  if (f.scale_down != 1) {
    bool dropped = false;
    c = scale_down_config(c, f.scale_down, &dropped);
    if (dropped) std::cerr << "note: disaggregated block does not scale by " << f.scale_down << "; skipped\n";
    const auto v = validate_config(c);
    if (!v.empty()) throw ArgumentError("scaled-down config is invalid: " + v.front());
  }
  if (!f.out.empty()) c.output_dir = f.out;
  return c;
}

std::string point_stem(const PointSpec& p, const PointReport& r) {
  std::string mix = r.mixture;
  for (auto& ch : mix)
    if (ch == ':') ch = '-';
  std::ostringstream os;
  os << to_string(p.architecture) << "_" << mix << "_L" << r.seq_len << "_x" << r.encoder_scale << "_s" << p.step;
  return os.str();
}

int cmd_validate(const std::string& arg) {
  const auto c = load_config(resolve_config(arg));
  const auto v = validate_config(c);
  for (const auto& s : v) std::cout << s << "\n";
  if (!v.empty()) return kExitViolations;
  std::cout << c.name << ": ok\n";
  return 0;
}

int cmd_run(const RunFlags& f) {
  const auto c = apply_flags(load_checked(f.config), f);
  const fs::path out = c.output_dir;
  const auto points = sweep_points(c);
  std::vector<PointReport> reports;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    auto run = run_point(c, p);
    auto& r = run.report;
    const auto stem = point_stem(p, r);
    if (p.step == 0) {
      r.trace = "traces/" + stem + ".json";
      write_file_atomic(out / r.trace, trace_json(run.ir, run.sim.timeline));
    }
    write_file_atomic(out / "points" / (stem + ".json"), report_to_json(r).dump() + "\n");
    std::cerr << "[" << i + 1 << "/" << points.size() << "] " << stem << "  " << std::fixed << std::setprecision(1)
              << r.throughput << " tok/s" << (r.oom ? "  OOM" : "") << "\n";
    reports.push_back(std::move(r));
  }
  write_file_atomic(out / "records.jsonl", reports_jsonl(reports));
  const auto rows = summarize(reports);
  write_file_atomic(out / "summary.tsv", summary_tsv(rows));
  std::cout << c.name << ": " << points.size() << " points, " << c.topology.total_ranks() << " GPUs -> " << out.string()
            << "\n"
            << headline(rows);
  return 0;
}

int cmd_sweep_eta(const std::string& arg, std::vector<Tokens> etas, const std::string& mixture, int steps) {
  const auto c = load_checked(arg);
  if (etas.empty())
    for (int k = 0; k <= 16; ++k) etas.push_back(c.seq_len * k / 16);
  std::optional<Mixture> mix;
  if (!mixture.empty()) mix = parse_mixture_text(mixture);
  else if (!c.mixture_sweep.empty()) mix = c.mixture_sweep.back();
  std::vector<EtaPoint> acc;
  for (int s = 0; s < steps; ++s) {
    const auto pts = sweep_eta(c, etas, mix, s);
    if (acc.empty()) acc = pts;
    else
      for (std::size_t i = 0; i < pts.size(); ++i) {
        acc[i].makespan_s += pts[i].makespan_s;
        acc[i].alltoall_bytes += pts[i].alltoall_bytes;
        acc[i].sp_samples += pts[i].sp_samples;
      }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < acc.size(); ++i)
    if (acc[i].makespan_s < acc[best].makespan_s) best = i;
  std::cout << "eta\tencoder_makespan_s\talltoall_gb\tsp_samples\n" << std::fixed;
  for (std::size_t i = 0; i < acc.size(); ++i)
    std::cout << acc[i].eta << "\t" << std::setprecision(4) << acc[i].makespan_s / steps << "\t" << std::setprecision(3)
              << static_cast<double>(acc[i].alltoall_bytes) / steps / 1e9 << "\t" << acc[i].sp_samples / steps
              << (i == best ? "\t<- best" : "") << "\n";
  const bool interior = best > 0 && best + 1 < acc.size();
  std::cout << "best eta " << acc[best].eta << (interior ? " (interior)" : " (endpoint)") << "\n";
  return 0;
}

int cmd_trace(const RunFlags& f, const std::string& arch, const std::string& mixture, std::int64_t step,
              const std::string& path) {
  const auto c = apply_flags(load_checked(f.config), f);
  PointSpec p;
  p.architecture = parse_architecture(arch);
  if (!mixture.empty()) p.mixture = parse_mixture_text(mixture);
  else if (!c.mixture_sweep.empty()) p.mixture = c.mixture_sweep.front();
  p.step = step;
  const auto run = run_point(c, p);
  const std::string target = path.empty() ? point_stem(p, run.report) + ".json" : path;
  export_trace(run.ir, run.sim.timeline, target);
  std::cout << target << ": " << run.sim.timeline.size() << " events, makespan " << run.report.makespan_s << " s\n";
  return 0;
}

int cmd_presets() {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(MMSIM_PRESET_DIR))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto c = load_config(p.string());
    std::string enc;
    for (const auto& e : c.encoders()) enc += (enc.empty() ? "" : "+") + e;
    std::cout << std::left << std::setw(12) << c.name << " " << std::setw(10) << (enc.empty() ? "-" : enc) << " "
              << std::setw(10) << c.llm << " gbs " << std::setw(4) << c.global_batch_size << " seq " << std::setw(6)
              << c.seq_len << " " << c.topology.total_ranks() << " GPUs  " << p.filename().string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal training pipeline simulator"};
  app.require_subcommand(1);

  std::string validate_arg;
  auto* validate = app.add_subcommand("validate", "Parse and validate a config; exit 0 iff clean");
  validate->add_option("config", validate_arg, "Config path or preset name")->required();

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "Run the configured sweep and write reports and traces");
  run->add_option("config", run_flags.config, "Config path or preset name")->required();
  run->add_option("--seed", run_flags.seed, "Workload seed override");
  run->add_option("--steps", run_flags.steps, "Steps per sweep point");
  run->add_option("--scale-down", run_flags.scale_down, "Divide DP degrees, nodes and global batch by this factor");
  run->add_option("--out", run_flags.out, "Output directory");
  run->add_option("--mixtures", run_flags.mixtures, "Image:text mixtures, e.g. 1:9,9:1")->delimiter(',');
  run->add_option("--architectures", run_flags.architectures, "Subset of architectures")->delimiter(',');

  std::string eta_config, eta_mixture;
  std::vector<Tokens> etas;
  int eta_steps = 1;
  auto* eta = app.add_subcommand("sweep-eta", "LSSP threshold tradeoff table");
  eta->add_option("config", eta_config, "Config path or preset name")->required();
  eta->add_option("--eta", etas, "Threshold values (default: 17-point grid up to seq_len)")->delimiter(',');
  eta->add_option("--mixture", eta_mixture, "Mixture (default: last of the sweep)");
  eta->add_option("--steps", eta_steps, "Steps to average")->check(CLI::PositiveNumber);

  RunFlags trace_flags;
  std::string trace_arch = "multiplexed", trace_mixture, trace_out;
  std::int64_t trace_step = 0;
  auto* trace = app.add_subcommand("trace", "Simulate one point and export its trace");
  trace->add_option("config", trace_flags.config, "Config path or preset name")->required();
  trace->add_option("--architecture", trace_arch, "Architecture");
  trace->add_option("--mixture", trace_mixture, "Mixture (default: first of the sweep)");
  trace->add_option("--step", trace_step, "Step index");
  trace->add_option("--seed", trace_flags.seed, "Workload seed override");
  trace->add_option("--scale-down", trace_flags.scale_down, "Proxy scale-down factor");
  trace->add_option("-o,--output", trace_out, "Trace file path");

  auto* presets = app.add_subcommand("presets", "List shipped presets");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*validate) return cmd_validate(validate_arg);
    if (*run) return cmd_run(run_flags);
    if (*eta) return cmd_sweep_eta(eta_config, etas, eta_mixture, eta_steps);
    if (*trace) return cmd_trace(trace_flags, trace_arch, trace_mixture, trace_step, trace_out);
    if (*presets) return cmd_presets();
  } catch (const InternalError& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
