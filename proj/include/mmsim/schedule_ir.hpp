#pragma once

// Per-rank event programs with cross-rank dependency edges.
//
// Each rank owns three lanes: compute, comm (outbound link) and copy
// (D2H/H2D). Events on one lane run in program order; a lane never runs two
// events at once. Lanes of the same rank overlap freely.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/model_cost.hpp"

namespace mmsim {

enum class EventType : std::uint8_t { EncFwd, EncBwd, LlmFwd, LlmBwd, Comm, Offload, Reload, GradSync };

inline std::string_view to_string(EventType t) {
  switch (t) {
    case EventType::EncFwd: return "EncFwd";
    case EventType::EncBwd: return "EncBwd";
    case EventType::LlmFwd: return "LlmFwd";
    case EventType::LlmBwd: return "LlmBwd";
    case EventType::Comm: return "Comm";
    case EventType::Offload: return "Offload";
    case EventType::Reload: return "Reload";
    case EventType::GradSync: return "GradSync";
  }
  return "?";
}

// Ready-queue priority, lower runs first: Comm > EncBwd > LlmBwd > LlmFwd > EncFwd.
inline int priority_of(EventType t) {
  switch (t) {
    case EventType::Comm:
    case EventType::GradSync:
    case EventType::Offload:
    case EventType::Reload: return 0;
    case EventType::EncBwd: return 1;
    case EventType::LlmBwd: return 2;
    case EventType::LlmFwd: return 3;
    case EventType::EncFwd: return 4;
  }
  return 5;
}

enum class Lane : std::uint8_t { Compute = 0, Comm = 1, Copy = 2 };
inline constexpr std::size_t kLanes = 3;

inline std::string_view to_string(Lane l) {
  switch (l) {
    case Lane::Compute: return "compute";
    case Lane::Comm: return "comm";
    case Lane::Copy: return "copy";
  }
  return "?";
}

struct Event {
  int id = -1;
  EventType type = EventType::LlmFwd;
  int rank = 0;
  Lane lane = Lane::Compute;
  int replica = 0;
  int stage = -1;
  int mb = -1;
  std::string model;  // encoder name for EncFwd/EncBwd
  Primitive primitive = Primitive::P2P;
  std::vector<int> group;  // ranks taking part in a Comm/GradSync
  Bytes bytes = 0;
  std::string tag;
  Nanos duration = 0;
  Bytes mem_alloc = 0;  // allocated when the event starts
  Bytes mem_free = 0;   // released when the event ends
  Tokens tokens = 0;    // LLM tokens consumed (counted once per microbatch)
  double flops = 0;     // model FLOPs for the MFU proxy
  bool overflow = false;
};

// Identity of an event independent of its id and cost.
struct EventKey {
  EventType type;
  int stage;
  int mb;
  std::string model;
  std::string tag;
  friend bool operator==(const EventKey&, const EventKey&) = default;
  friend auto operator<=>(const EventKey&, const EventKey&) = default;
};

inline EventKey key_of(const Event& e) { return {e.type, e.stage, e.mb, e.model, e.tag}; }

struct ScheduleIR {
  int num_ranks = 0;
  std::vector<Event> events;
  std::vector<std::array<std::vector<int>, kLanes>> programs;
  std::vector<std::pair<int, int>> deps;  // producer -> consumer
  std::vector<std::string> rank_roles;    // "llm" or "encoder"
  bool lumped_backward = false;           // EncFwd durations already include the backward pass

  explicit ScheduleIR(int ranks = 0) { resize(ranks); }

  void resize(int ranks) {
    num_ranks = ranks;
    programs.resize(static_cast<std::size_t>(ranks));
    rank_roles.resize(static_cast<std::size_t>(ranks), "llm");
  }

  // Registers an event without placing it in a lane program.
  int add(Event e) {
    e.id = static_cast<int>(events.size());
    events.push_back(std::move(e));
    return events.back().id;
  }
  // Registers and appends to the end of its lane program.
  int append(Event e) {
    const int id = add(std::move(e));
    program(events[static_cast<std::size_t>(id)].rank, events[static_cast<std::size_t>(id)].lane).push_back(id);
    return id;
  }
  void depend(int producer, int consumer) { deps.emplace_back(producer, consumer); }

  std::vector<int>& program(int rank, Lane lane) {
    return programs.at(static_cast<std::size_t>(rank))[static_cast<std::size_t>(lane)];
  }
  const std::vector<int>& program(int rank, Lane lane) const {
    return programs.at(static_cast<std::size_t>(rank))[static_cast<std::size_t>(lane)];
  }
  const Event& at(int id) const { return events.at(static_cast<std::size_t>(id)); }
  Event& at(int id) { return events.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(EventType type, int replica, int stage, int mb, const std::string& model = {}) const {
    for (const auto& e : events)
      if (e.type == type && e.replica == replica && e.stage == stage && e.mb == mb &&
          (model.empty() || e.model == model))
        return e.id;
    return std::nullopt;
  }
};

// Successor lists including lane program-order edges.
inline std::vector<std::vector<int>> successors(const ScheduleIR& ir) {
  std::vector<std::vector<int>> succ(ir.events.size());
  for (const auto& [a, b] : ir.deps) succ.at(static_cast<std::size_t>(a)).push_back(b);
  for (const auto& lanes : ir.programs)
    for (const auto& prog : lanes)
      for (std::size_t i = 1; i < prog.size(); ++i) succ[static_cast<std::size_t>(prog[i - 1])].push_back(prog[i]);
  return succ;
}

// Kahn topological order; empty optional when the graph has a cycle.
inline std::optional<std::vector<int>> topological_order(const ScheduleIR& ir) {
  const auto succ = successors(ir);
  std::vector<int> indeg(ir.events.size(), 0);
  for (const auto& s : succ)
    for (int v : s) ++indeg[static_cast<std::size_t>(v)];
  std::vector<int> order, stack;
  for (std::size_t i = ir.events.size(); i-- > 0;)
    if (indeg[i] == 0) stack.push_back(static_cast<int>(i));
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    order.push_back(u);
    for (int v : succ[static_cast<std::size_t>(u)])
      if (--indeg[static_cast<std::size_t>(v)] == 0) stack.push_back(v);
  }
  if (order.size() != ir.events.size()) return std::nullopt;
  return order;
}

// Events reachable from `from` (inclusive) along deps and program order.
inline std::vector<bool> reachable_from(const ScheduleIR& ir, int from) {
  const auto succ = successors(ir);
  std::vector<bool> seen(ir.events.size(), false);
  std::vector<int> stack{from};
  seen[static_cast<std::size_t>(from)] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : succ[static_cast<std::size_t>(u)])
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
  }
  return seen;
}

// Orders each rank's comm and copy lanes by the position of the compute
// event that produces (or, failing that, consumes) each transfer.
inline void order_transfer_lanes(ScheduleIR& ir) {
  std::vector<std::int64_t> compute_pos(ir.events.size(), -1);
  for (const auto& lanes : ir.programs) {
    const auto& prog = lanes[static_cast<std::size_t>(Lane::Compute)];
    for (std::size_t i = 0; i < prog.size(); ++i) compute_pos[static_cast<std::size_t>(prog[i])] = static_cast<std::int64_t>(i);
  }
  std::vector<std::int64_t> after(ir.events.size(), -1);
  std::vector<std::int64_t> before(ir.events.size(), -1);
  for (const auto& [a, b] : ir.deps) {
    const Event& pa = ir.at(a);
    const Event& pb = ir.at(b);
    if (pb.lane != Lane::Compute && pa.lane == Lane::Compute && pa.rank == pb.rank)
      after[static_cast<std::size_t>(b)] = std::max(after[static_cast<std::size_t>(b)], compute_pos[static_cast<std::size_t>(a)]);
    if (pa.lane != Lane::Compute && pb.lane == Lane::Compute && pa.rank == pb.rank) {
      auto& slot = before[static_cast<std::size_t>(a)];
      const auto p = compute_pos[static_cast<std::size_t>(b)];
      slot = slot < 0 ? p : std::min(slot, p);
    }
  }
  auto key = [&](int id) -> std::pair<std::int64_t, int> {
    const auto i = static_cast<std::size_t>(id);
    if (after[i] >= 0) return {2 * after[i] + 1, id};
    if (before[i] >= 0) return {2 * before[i] - 1, id};
    return {-2, id};
  };
  for (auto& lanes : ir.programs)
    for (Lane l : {Lane::Comm, Lane::Copy}) {
      auto& prog = lanes[static_cast<std::size_t>(l)];
      std::stable_sort(prog.begin(), prog.end(), [&](int a, int b) { return key(a) < key(b); });
    }
}

// Structural checks on a built schedule: placement, acyclicity, pipeline
// stage chaining, forward-before-backward, encoder/LLM data dependencies.
inline std::vector<std::string> check_ir(const ScheduleIR& ir) {
  std::vector<std::string> v;
  std::vector<int> placed(ir.events.size(), 0);
  for (std::size_t r = 0; r < ir.programs.size(); ++r)
    for (std::size_t l = 0; l < kLanes; ++l)
      for (int id : ir.programs[r][l]) {
        ++placed.at(static_cast<std::size_t>(id));
        const Event& e = ir.at(id);
        if (e.rank != static_cast<int>(r) || static_cast<std::size_t>(e.lane) != l)
          v.push_back("event " + std::to_string(id) + " placed on the wrong rank/lane");
      }
  for (std::size_t i = 0; i < placed.size(); ++i)
    if (placed[i] != 1) v.push_back("event " + std::to_string(i) + " placed " + std::to_string(placed[i]) + " times");
  if (!topological_order(ir)) {
    v.push_back("dependency graph has a cycle");
    return v;
  }

  // (type, replica, stage, mb, model) -> id
  std::map<std::tuple<int, int, int, int, std::string>, int> index;
  for (const auto& e : ir.events)
    if (e.type == EventType::LlmFwd || e.type == EventType::LlmBwd || e.type == EventType::EncFwd ||
        e.type == EventType::EncBwd)
      index[{static_cast<int>(e.type), e.replica, e.stage, e.mb, e.model}] = e.id;
  auto lookup = [&](EventType t, int r, int s, int mb, const std::string& m = {}) -> int {
    auto it = index.find({static_cast<int>(t), r, s, mb, m});
    return it == index.end() ? -1 : it->second;
  };

  // Transitive reachability is what matters: edges may pass through Comm events.
  const auto succ = successors(ir);
  auto reaches = [&](int from, int to) {
    std::vector<char> seen(ir.events.size(), 0);
    std::vector<int> stack{from};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      if (u == to) return true;
      for (int w : succ[static_cast<std::size_t>(u)])
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          stack.push_back(w);
        }
    }
    return false;
  };

  for (const auto& e : ir.events) {
    if (e.type == EventType::LlmFwd) {
      const int b = lookup(EventType::LlmBwd, e.replica, e.stage, e.mb);
      if (b < 0) v.push_back("LlmFwd(" + std::to_string(e.stage) + "," + std::to_string(e.mb) + ") has no backward");
      else if (!reaches(e.id, b)) v.push_back("LlmBwd does not follow LlmFwd for mb " + std::to_string(e.mb));
      if (e.stage > 0) {
        const int prev = lookup(EventType::LlmFwd, e.replica, e.stage - 1, e.mb);
        if (prev < 0 || !reaches(prev, e.id))
          v.push_back("LlmFwd(" + std::to_string(e.stage) + "," + std::to_string(e.mb) + ") not chained to previous stage");
      }
    }
    if (e.type == EventType::LlmBwd) {
      const int next = lookup(EventType::LlmBwd, e.replica, e.stage + 1, e.mb);
      const int next_fwd = lookup(EventType::LlmFwd, e.replica, e.stage + 1, e.mb);
      if (next_fwd >= 0 && (next < 0 || !reaches(next, e.id)))
        v.push_back("LlmBwd(" + std::to_string(e.stage) + "," + std::to_string(e.mb) + ") not chained to next stage");
    }
    if (e.type == EventType::EncFwd) {
      const int consumer = lookup(EventType::LlmFwd, e.replica, 0, e.mb);
      if (consumer >= 0 && !reaches(e.id, consumer))
        v.push_back("EncFwd(" + e.model + "," + std::to_string(e.mb) + ") does not feed LlmFwd(0," + std::to_string(e.mb) + ")");
      const int bwd = lookup(EventType::EncBwd, e.replica, e.stage, e.mb, e.model);
      if (bwd < 0 && !ir.lumped_backward) v.push_back("EncFwd(" + e.model + "," + std::to_string(e.mb) + ") has no matching EncBwd");
    }
    if (e.type == EventType::EncBwd) {
      const int producer = lookup(EventType::LlmBwd, e.replica, 0, e.mb);
      if (producer >= 0 && !reaches(producer, e.id))
        v.push_back("EncBwd(" + e.model + "," + std::to_string(e.mb) + ") does not wait for LlmBwd(0," + std::to_string(e.mb) + ")");
    }
  }
  return v;
}

// Per-rank sequence of compute event identities, for shape comparisons.
inline std::vector<std::vector<EventKey>> compute_shape(const ScheduleIR& ir) {
  std::vector<std::vector<EventKey>> out(static_cast<std::size_t>(ir.num_ranks));
  for (int r = 0; r < ir.num_ranks; ++r)
    for (int id : ir.program(r, Lane::Compute)) out[static_cast<std::size_t>(r)].push_back(key_of(ir.at(id)));
  return out;
}

}  // namespace mmsim
