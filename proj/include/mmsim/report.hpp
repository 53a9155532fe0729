#pragma once

// Report records (one JSON object per line), the summary table, and the
// headline comparison printed after a sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mmsim/experiment.hpp"

namespace mmsim {

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::json report_to_json(const PointReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["experiment"] = r.experiment;
  j["architecture"] = std::string(to_string(r.architecture));
  j["mixture"] = r.mixture;
  j["seq_len"] = r.seq_len;
  j["encoder_scale"] = r.encoder_scale;
  j["step"] = r.step;
  j["seed"] = r.seed;
  j["ranks"] = r.ranks;
  j["makespan_s"] = r.makespan_s;
  j["throughput"] = r.throughput;
  j["tokens"] = r.tokens;
  j["bubble_ratio"] = r.bubble_ratio;
  j["role_bubble_ratio"] = r.role_bubble_ratio;
  j["llm_stall"] = r.llm_stall;
  j["peak_memory_gb"] = r.peak_memory_gb;
  j["first_stage_memory_gb"] = r.first_stage_memory_gb;
  j["oom"] = r.oom;
  j["oom_ranks"] = r.oom_ranks;
  j["encoder_recompute"] = r.encoder_recompute;
  j["mfu_proxy"] = r.mfu_proxy;
  j["comm_bytes"] = r.comm_bytes;
  j["overflow_events"] = r.overflow_events;
  j["reorder_pre_imbalance"] = r.reorder_pre_imbalance;
  j["reorder_post_imbalance"] = r.reorder_post_imbalance;
  j["trace"] = r.trace;
  return j;
}

inline PointReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("report record: missing schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != kReportSchemaVersion)
    throw ConfigError("report record: unsupported schema_version " + std::to_string(v));
  PointReport r;
  try {
    r.experiment = j.at("experiment").get<std::string>();
    r.architecture = parse_architecture(j.at("architecture").get<std::string>());
    r.mixture = j.at("mixture").get<std::string>();
    r.seq_len = j.at("seq_len").get<Tokens>();
    r.encoder_scale = j.at("encoder_scale").get<double>();
    r.step = j.at("step").get<std::int64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ranks = j.at("ranks").get<int>();
    r.makespan_s = j.at("makespan_s").get<double>();
    r.throughput = j.at("throughput").get<double>();
    r.tokens = j.at("tokens").get<Tokens>();
    r.bubble_ratio = j.at("bubble_ratio").get<double>();
    r.role_bubble_ratio = j.at("role_bubble_ratio").get<std::map<std::string, double>>();
    r.llm_stall = j.at("llm_stall").get<double>();
    r.peak_memory_gb = j.at("peak_memory_gb").get<double>();
    r.first_stage_memory_gb = j.at("first_stage_memory_gb").get<double>();
    r.oom = j.at("oom").get<bool>();
    r.oom_ranks = j.at("oom_ranks").get<int>();
    r.encoder_recompute = j.at("encoder_recompute").get<bool>();
    r.mfu_proxy = j.at("mfu_proxy").get<double>();
    r.comm_bytes = j.at("comm_bytes").get<std::map<std::string, Bytes>>();
    r.overflow_events = j.at("overflow_events").get<int>();
    r.reorder_pre_imbalance = j.at("reorder_pre_imbalance").get<double>();
    r.reorder_post_imbalance = j.at("reorder_post_imbalance").get<double>();
    r.trace = j.at("trace").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report record: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("report record: ") + e.what());
  }
  return r;
}

inline std::string reports_jsonl(const std::vector<PointReport>& rs) {
  std::string out;
  for (const auto& r : rs) {
    out += report_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PointReport> parse_reports_jsonl(const std::string& text, const std::string& source = "<records>") {
  std::vector<PointReport> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<PointReport> read_reports(const std::string& path) {
  return parse_reports_jsonl(read_file(path), path);
}

// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

// Per-point means over steps.
struct SummaryRow {
  std::string architecture;
  std::string mixture;
  Tokens seq_len = 0;
  double encoder_scale = 1;
  int steps = 0;
  double makespan_s = 0;
  double throughput = 0;
  double bubble_ratio = 0;
  double encoder_bubble = 0;
  double llm_stall = 0;
  double peak_memory_gb = 0;
  bool oom = false;
  bool recompute = false;
};

inline std::vector<SummaryRow> summarize(const std::vector<PointReport>& rs) {
  std::vector<SummaryRow> rows;
  std::map<std::tuple<std::string, std::string, Tokens, double>, std::size_t> at;
  for (const auto& r : rs) {
    const std::string arch(to_string(r.architecture));
    const auto key = std::make_tuple(arch, r.mixture, r.seq_len, r.encoder_scale);
    auto it = at.find(key);
    if (it == at.end()) {
      it = at.emplace(key, rows.size()).first;
      rows.push_back({arch, r.mixture, r.seq_len, r.encoder_scale});
    }
    auto& row = rows[it->second];
    row.steps += 1;
    row.makespan_s += r.makespan_s;
    row.throughput += r.throughput;
    row.bubble_ratio += r.bubble_ratio;
    auto e = r.role_bubble_ratio.find("encoder");
    row.encoder_bubble += e == r.role_bubble_ratio.end() ? 0.0 : e->second;
    row.llm_stall += r.llm_stall;
    row.peak_memory_gb = std::max(row.peak_memory_gb, r.peak_memory_gb);
    row.oom = row.oom || r.oom;
    row.recompute = row.recompute || r.encoder_recompute;
  }
  for (auto& row : rows) {
    const double n = row.steps;
    row.makespan_s /= n;
    row.throughput /= n;
    row.bubble_ratio /= n;
    row.encoder_bubble /= n;
    row.llm_stall /= n;
  }
  return rows;
}

inline std::string summary_tsv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "architecture\tmixture\tseq_len\tencoder_scale\tsteps\tmakespan_s\tthroughput\tbubble_ratio\tencoder_bubble\t"
        "llm_stall\tpeak_memory_gb\toom\tencoder_recompute\n";
  os << std::setprecision(6);
  for (const auto& r : rows)
    os << r.architecture << '\t' << r.mixture << '\t' << r.seq_len << '\t' << r.encoder_scale << '\t' << r.steps << '\t'
       << r.makespan_s << '\t' << r.throughput << '\t' << r.bubble_ratio << '\t' << r.encoder_bubble << '\t'
       << r.llm_stall << '\t' << r.peak_memory_gb << '\t' << (r.oom ? 1 : 0) << '\t' << (r.recompute ? 1 : 0) << '\n';
  return os.str();
}

struct TrendCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Multiplexed throughput over a baseline's, per mixture, in sweep order.
inline std::vector<std::pair<std::string, double>> throughput_gaps(const std::vector<SummaryRow>& rows,
                                                                   const std::string& baseline) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& m : rows) {
    if (m.architecture != "multiplexed") continue;
    for (const auto& b : rows)
      if (b.architecture == baseline && b.mixture == m.mixture && b.seq_len == m.seq_len &&
          b.encoder_scale == m.encoder_scale && b.throughput > 0)
        out.emplace_back(m.mixture, m.throughput / b.throughput);
  }
  return out;
}

inline std::vector<TrendCheck> trend_checks(const std::vector<SummaryRow>& rows) {
  std::vector<TrendCheck> out;
  auto gaps = throughput_gaps(rows, "prepended");
  if (!gaps.empty()) {
    TrendCheck ge{"multiplexed >= prepended at every mixture", true, ""};
    TrendCheck mono{"gap over prepended nondecreasing in image share", true, ""};
    std::ostringstream d;
    d << std::fixed << std::setprecision(3);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      d << (i ? " " : "") << gaps[i].first << "=" << gaps[i].second;
      if (gaps[i].second < 1.0) ge.ok = false;
      if (i > 0 && gaps[i].second < gaps[i - 1].second) mono.ok = false;
    }
    ge.detail = mono.detail = d.str();
    out.push_back(ge);
    out.push_back(mono);
  }
  const SummaryRow* lo = nullptr;
  const SummaryRow* hi = nullptr;
  for (const auto& r : rows) {
    if (r.architecture != "disaggregated") continue;
    if (!lo) lo = &r;
    hi = &r;
  }
  if (lo && hi) {
    std::ostringstream d;
    d << std::fixed << std::setprecision(3) << "encoder bubble " << lo->encoder_bubble << " at " << lo->mixture
      << ", llm stall " << hi->llm_stall << " at " << hi->mixture;
    out.push_back({"disaggregated idles encoders at low image share", lo->encoder_bubble > 0.2, d.str()});
    out.push_back({"disaggregated stalls the LLM at high image share", hi->llm_stall > 0.2, d.str()});
  }
  return out;
}

inline std::string headline(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::fixed;
  for (const char* b : {"prepended", "disaggregated", "optimus"}) {
    const auto gaps = throughput_gaps(rows, b);
    if (gaps.empty()) continue;
    os << "multiplexed vs " << b << ":";
    for (const auto& [mix, g] : gaps) os << "  " << mix << " " << std::setprecision(2) << g << "x";
    os << '\n';
  }
  for (const auto& t : trend_checks(rows))
    os << (t.ok ? "[ok]   " : "[FAIL] ") << t.name << " (" << t.detail << ")\n";
  return os.str();
}

}  // namespace mmsim
