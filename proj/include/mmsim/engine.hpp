#pragma once

// Deterministic discrete-event execution of a ScheduleIR.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/schedule_ir.hpp"

namespace mmsim {

struct TimelineEntry {
  int event = -1;
  int rank = 0;
  Lane lane = Lane::Compute;
  Nanos start = 0;
  Nanos end = 0;
};

struct Timeline {
  std::vector<TimelineEntry> entries;  // indexed by event id
  std::vector<std::vector<std::pair<Nanos, Bytes>>> memory;  // per rank (time, dynamic bytes)
  Nanos makespan = 0;

  std::size_t size() const { return entries.size(); }
};

struct MetricsReport {
  Nanos makespan = 0;
  double throughput = 0;  // tokens per second
  Tokens tokens = 0;
  double bubble_ratio = 0;
  std::vector<double> rank_bubble_ratio;
  std::map<std::string, double> role_bubble_ratio;
  std::vector<double> peak_memory;  // bytes, static + dynamic
  std::vector<bool> oom;
  bool any_oom = false;
  double mfu_proxy = 0;
  double model_flops = 0;
  std::map<std::string, Bytes> comm_bytes;  // by primitive name
};

struct SimOptions {
  std::vector<double> static_bytes;  // per rank, optional
  double capacity_bytes = 0;         // 0 = unlimited
  double peak_flops_per_rank = 0;    // 0 disables the MFU proxy
};

struct SimResult {
  Timeline timeline;
  MetricsReport metrics;
};

namespace detail {

struct Completion {
  Nanos time;
  int priority;
  int mb;
  int id;
  bool operator>(const Completion& o) const {
    return std::tie(time, priority, mb, id) > std::tie(o.time, o.priority, o.mb, o.id);
  }
};

}  // namespace detail

inline SimResult simulate(const ScheduleIR& ir, const SimOptions& opts = {}) {
  const std::size_t n = ir.events.size();
  std::vector<int> pending(n, 0);
  std::vector<std::vector<int>> dep_succ(n);
  for (const auto& [a, b] : ir.deps) {
    dep_succ.at(static_cast<std::size_t>(a)).push_back(b);
    ++pending.at(static_cast<std::size_t>(b));
  }
  // Position of each event inside its lane; lane heads advance on completion.
  std::vector<std::size_t> lane_pos(n, 0);
  std::vector<bool> placed(n, false);
  for (const auto& lanes : ir.programs)
    for (const auto& prog : lanes)
      for (std::size_t i = 0; i < prog.size(); ++i) {
        lane_pos[static_cast<std::size_t>(prog[i])] = i;
        placed[static_cast<std::size_t>(prog[i])] = true;
      }
  for (std::size_t i = 0; i < n; ++i)
    if (!placed[i]) throw InternalError("event " + std::to_string(i) + " is not placed in any lane");

  SimResult result;
  Timeline& tl = result.timeline;
  tl.entries.resize(n);
  std::vector<bool> started(n, false), done(n, false);
  std::vector<std::array<std::size_t, kLanes>> head(ir.programs.size());
  for (auto& h : head) h.fill(0);

  std::priority_queue<detail::Completion, std::vector<detail::Completion>, std::greater<>> queue;

  auto try_start = [&](int id, Nanos now) {
    const auto i = static_cast<std::size_t>(id);
    if (started[i] || pending[i] != 0) return;
    const Event& e = ir.events[i];
    if (head[static_cast<std::size_t>(e.rank)][static_cast<std::size_t>(e.lane)] != lane_pos[i]) return;
    started[i] = true;
    tl.entries[i] = TimelineEntry{id, e.rank, e.lane, now, now + e.duration};
    queue.push({now + e.duration, priority_of(e.type), e.mb, id});
  };

  // Seed: every lane head with no unmet dependencies starts at t = 0.
  std::vector<int> initial;
  for (const auto& lanes : ir.programs)
    for (const auto& prog : lanes)
      if (!prog.empty()) initial.push_back(prog.front());
  std::sort(initial.begin(), initial.end(), [&](int a, int b) {
    const Event& ea = ir.at(a);
    const Event& eb = ir.at(b);
    return std::tie(ea.rank, ea.lane, a) < std::tie(eb.rank, eb.lane, b);
  });
  for (int id : initial) try_start(id, 0);

  std::size_t completed = 0;
  while (!queue.empty()) {
    const auto c = queue.top();
    queue.pop();
    const auto i = static_cast<std::size_t>(c.id);
    const Event& e = ir.events[i];
    done[i] = true;
    ++completed;
    tl.makespan = std::max(tl.makespan, c.time);
    auto& h = head[static_cast<std::size_t>(e.rank)][static_cast<std::size_t>(e.lane)];
    ++h;
    const auto& prog = ir.program(e.rank, e.lane);
    for (int s : dep_succ[i]) --pending[static_cast<std::size_t>(s)];
    if (h < prog.size()) try_start(prog[h], c.time);
    for (int s : dep_succ[i]) try_start(s, c.time);
  }
  if (completed != n) throw InternalError("schedule deadlocked: dependency cycle across lanes");

  // Memory residency: releases at a given instant apply before allocations.
  const auto ranks = static_cast<std::size_t>(ir.num_ranks);
  std::vector<std::vector<std::pair<Nanos, Bytes>>> deltas(ranks);
  for (const auto& e : ir.events) {
    const auto& t = tl.entries[static_cast<std::size_t>(e.id)];
    if (e.mem_alloc) deltas[static_cast<std::size_t>(e.rank)].emplace_back(t.start, e.mem_alloc);
    if (e.mem_free) deltas[static_cast<std::size_t>(e.rank)].emplace_back(t.end, -e.mem_free);
  }
  MetricsReport& m = result.metrics;
  m.makespan = tl.makespan;
  m.peak_memory.assign(ranks, 0.0);
  m.oom.assign(ranks, false);
  tl.memory.resize(ranks);
  for (std::size_t r = 0; r < ranks; ++r) {
    auto& d = deltas[r];
    std::sort(d.begin(), d.end());
    Bytes cur = 0, peak = 0;
    for (const auto& [t, delta] : d) {
      cur += delta;
      peak = std::max(peak, cur);
      tl.memory[r].emplace_back(t, cur);
    }
    const double base = r < opts.static_bytes.size() ? opts.static_bytes[r] : 0.0;
    m.peak_memory[r] = base + static_cast<double>(peak);
    m.oom[r] = opts.capacity_bytes > 0 && m.peak_memory[r] > opts.capacity_bytes;
    m.any_oom = m.any_oom || m.oom[r];
  }

  std::vector<Nanos> busy(ranks, 0);
  for (const auto& e : ir.events) {
    if (e.lane == Lane::Compute) busy[static_cast<std::size_t>(e.rank)] += e.duration;
    m.tokens += e.tokens;
    m.model_flops += e.flops;
    if (e.type == EventType::Comm || e.type == EventType::GradSync)
      m.comm_bytes[std::string(to_string(e.primitive))] += e.bytes;
  }
  m.rank_bubble_ratio.assign(ranks, 0.0);
  std::map<std::string, std::pair<Nanos, std::size_t>> role_idle;
  Nanos idle_total = 0;
  for (std::size_t r = 0; r < ranks; ++r) {
    const Nanos idle = m.makespan - busy[r];
    idle_total += idle;
    m.rank_bubble_ratio[r] = m.makespan > 0 ? static_cast<double>(idle) / static_cast<double>(m.makespan) : 0.0;
    auto& ri = role_idle[r < ir.rank_roles.size() ? ir.rank_roles[r] : std::string("llm")];
    ri.first += idle;
    ri.second += 1;
  }
  if (m.makespan > 0 && ranks > 0) {
    const double span = static_cast<double>(m.makespan);
    m.bubble_ratio = static_cast<double>(idle_total) / (span * static_cast<double>(ranks));
    for (const auto& [role, v] : role_idle)
      m.role_bubble_ratio[role] = static_cast<double>(v.first) / (span * static_cast<double>(v.second));
    m.throughput = static_cast<double>(m.tokens) / nanos_to_seconds(m.makespan);
    if (opts.peak_flops_per_rank > 0)
      m.mfu_proxy = m.model_flops / (opts.peak_flops_per_rank * static_cast<double>(ranks) * nanos_to_seconds(m.makespan));
  }
  return result;
}

// Post-hoc invariant checks over a finished timeline.
inline std::vector<std::string> check_timeline(const ScheduleIR& ir, const Timeline& tl) {
  std::vector<std::string> v;
  if (tl.entries.size() != ir.events.size()) {
    v.push_back("timeline/IR event count mismatch");
    return v;
  }
  for (const auto& [a, b] : ir.deps)
    if (tl.entries[static_cast<std::size_t>(b)].start < tl.entries[static_cast<std::size_t>(a)].end)
      v.push_back("event " + std::to_string(b) + " starts before dependency " + std::to_string(a) + " ends");
  for (int r = 0; r < ir.num_ranks; ++r)
    for (Lane l : {Lane::Compute, Lane::Comm, Lane::Copy}) {
      const auto& prog = ir.program(r, l);
      for (std::size_t i = 1; i < prog.size(); ++i)
        if (tl.entries[static_cast<std::size_t>(prog[i])].start < tl.entries[static_cast<std::size_t>(prog[i - 1])].end)
          v.push_back("overlap on rank " + std::to_string(r) + " lane " + std::string(to_string(l)));
    }
  for (std::size_t r = 0; r < tl.memory.size(); ++r)
    for (const auto& [t, bytes] : tl.memory[r])
      if (bytes < 0) {
        v.push_back("negative memory residency on rank " + std::to_string(r));
        break;
      }
  return v;
}

inline std::string event_label(const Event& e) {
  std::string s(to_string(e.type));
  switch (e.type) {
    case EventType::LlmFwd:
    case EventType::LlmBwd: s += " s" + std::to_string(e.stage) + " mb" + std::to_string(e.mb); break;
    case EventType::EncFwd:
    case EventType::EncBwd: s += " " + e.model + " mb" + std::to_string(e.mb); break;
    default:
      if (!e.tag.empty()) s += " " + e.tag;
      if (e.mb >= 0) s += " mb" + std::to_string(e.mb);
      break;
  }
  return s;
}

namespace detail {

inline void write_micros(std::ostream& os, Nanos ns) {
  os << ns / 1000 << '.';
  const auto frac = ns % 1000;
  os << static_cast<char>('0' + frac / 100) << static_cast<char>('0' + frac / 10 % 10)
     << static_cast<char>('0' + frac % 10);
}

inline void write_json_string(std::ostream& os, const std::string& s) {
  os << '"';
  for (char c : s) {
    if (c == '"' || c == '\\') os << '\\' << c;
    else if (static_cast<unsigned char>(c) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04x", c);
      os << buf;
    } else os << c;
  }
  os << '"';
}

}  // namespace detail

// Trace-event JSON: one begin/end pair per event, pid = rank, tid = lane.
// Output is a pure function of (ir, timeline).
inline std::string trace_json(const ScheduleIR& ir, const Timeline& tl) {
  struct Row {
    Nanos ts;
    int rank;
    int lane;
    int order;  // 0 = end, 1 = begin, 2 = end of a zero-length event
    int id;
  };
  std::vector<Row> rows;
  rows.reserve(2 * tl.entries.size());
  for (const auto& t : tl.entries) {
    rows.push_back({t.start, t.rank, static_cast<int>(t.lane), 1, t.event});
    rows.push_back({t.end, t.rank, static_cast<int>(t.lane), t.start == t.end ? 2 : 0, t.event});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.ts, a.rank, a.lane, a.order, a.id) < std::tie(b.ts, b.rank, b.lane, b.order, b.id);
  });
  std::ostringstream os;
  os << "{\"displayTimeUnit\":\"ms\",\"traceEvents\":[";
  bool first = true;
  for (const auto& r : rows) {
    const Event& e = ir.at(r.id);
    os << (first ? "\n" : ",\n");
    first = false;
    os << "{\"name\":";
    detail::write_json_string(os, event_label(e));
    os << ",\"cat\":\"" << to_string(e.type) << "\",\"ph\":\"" << (r.order == 1 ? 'B' : 'E') << "\",\"ts\":";
    detail::write_micros(os, r.ts);
    os << ",\"pid\":" << r.rank << ",\"tid\":" << r.lane << ",\"args\":{\"id\":" << r.id << "}}";
  }
  os << "\n]}\n";
  return os.str();
}

inline void export_trace(const ScheduleIR& ir, const Timeline& tl, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open trace file '" + path + "' for writing");
  out << trace_json(ir, tl);
  if (!out) throw IoError("failed writing trace file '" + path + "'");
}

}  // namespace mmsim
