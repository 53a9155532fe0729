#pragma once

// LLM pipeline programs, encoder anchoring and insertion policies.

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/schedule_ir.hpp"
#include "mmsim/topology.hpp"

namespace mmsim {

template <typename T>
using PerReplicaStage = std::vector<std::vector<std::vector<T>>>;  // [replica][stage][mb]

struct PipelineCosts {
  int pp = 1;
  int dp = 1;
  int microbatches = 1;
  PerReplicaStage<Nanos> fwd, bwd;  // empty = zero cost
  PerReplicaStage<Bytes> act_bytes;
  PerReplicaStage<double> fwd_flops, bwd_flops;
  std::vector<std::vector<Tokens>> tokens;  // [replica][mb]
  Nanos p2p = 0;         // activation/gradient hop between adjacent stages
  Bytes p2p_bytes = 0;
  Nanos grad_sync = 0;   // per-stage gradient all-reduce across replicas
  Bytes grad_bytes = 0;
  bool grad_sync_events = false;
};

inline PipelineCosts uniform_pipeline_costs(int pp, int microbatches, Nanos fwd, Nanos bwd, int dp = 1) {
  PipelineCosts c;
  c.pp = pp;
  c.dp = dp;
  c.microbatches = microbatches;
  c.fwd.assign(static_cast<std::size_t>(dp),
               std::vector<std::vector<Nanos>>(static_cast<std::size_t>(pp),
                                               std::vector<Nanos>(static_cast<std::size_t>(microbatches), fwd)));
  c.bwd = c.fwd;
  for (auto& r : c.bwd)
    for (auto& s : r) std::fill(s.begin(), s.end(), bwd);
  return c;
}

namespace detail {

template <typename T>
T cost_at(const PerReplicaStage<T>& v, int r, int s, int m) {
  if (v.empty()) return T{};
  return v.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(m));
}

struct Step {
  bool backward;
  int mb;
};

// 1F1B: stage s runs (pp - s) forwards, then alternates B/F, then drains.
inline std::vector<Step> order_1f1b(int pp, int s, int m) {
  std::vector<Step> out;
  const int warm = std::min(pp - s, m);
  int f = 0, b = 0;
  for (; f < warm; ++f) out.push_back({false, f});
  while (b < m) {
    out.push_back({true, b++});
    if (f < m) out.push_back({false, f++});
  }
  return out;
}

inline std::vector<Step> order_fwd_then_bwd(int, int, int m) {
  std::vector<Step> out;
  for (int f = 0; f < m; ++f) out.push_back({false, f});
  for (int b = 0; b < m; ++b) out.push_back({true, b});
  return out;
}

template <typename Order>
ScheduleIR build_pipeline(const PipelineCosts& c, Order order) {
  if (c.pp < 1 || c.dp < 1) throw ConfigError("pipeline degrees must be >= 1");
  if (c.microbatches < c.pp)
    throw ConfigError("microbatches (" + std::to_string(c.microbatches) + ") < pipeline stages (" +
                      std::to_string(c.pp) + ")");
  ScheduleIR ir(c.dp * c.pp);
  const bool hops = c.p2p > 0 || c.p2p_bytes > 0;
  for (int r = 0; r < c.dp; ++r) {
    std::vector<std::vector<int>> fwd(static_cast<std::size_t>(c.pp)), bwd(static_cast<std::size_t>(c.pp));
    for (int s = 0; s < c.pp; ++s) {
      fwd[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(c.microbatches));
      bwd[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(c.microbatches));
      const int rank = r * c.pp + s;
      for (const Step& st : order(c.pp, s, c.microbatches)) {
        Event e;
        e.type = st.backward ? EventType::LlmBwd : EventType::LlmFwd;
        e.rank = rank;
        e.replica = r;
        e.stage = s;
        e.mb = st.mb;
        const Bytes act = cost_at(c.act_bytes, r, s, st.mb);
        if (st.backward) {
          e.duration = cost_at(c.bwd, r, s, st.mb);
          e.mem_free = act;
          e.flops = cost_at(c.bwd_flops, r, s, st.mb);
          bwd[static_cast<std::size_t>(s)][static_cast<std::size_t>(st.mb)] = ir.append(e);
        } else {
          e.duration = cost_at(c.fwd, r, s, st.mb);
          e.mem_alloc = act;
          e.flops = cost_at(c.fwd_flops, r, s, st.mb);
          if (s == c.pp - 1 && !c.tokens.empty())
            e.tokens = c.tokens.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(st.mb));
          fwd[static_cast<std::size_t>(s)][static_cast<std::size_t>(st.mb)] = ir.append(e);
        }
      }
    }
    auto link = [&](int from, int to, int src_rank, int dst_rank, int mb, const char* tag) {
      if (!hops) {
        ir.depend(from, to);
        return;
      }
      Event cm;
      cm.type = EventType::Comm;
      cm.rank = src_rank;
      cm.lane = Lane::Comm;
      cm.replica = r;
      cm.stage = ir.at(from).stage;
      cm.mb = mb;
      cm.primitive = Primitive::P2P;
      cm.group = {src_rank, dst_rank};
      cm.bytes = c.p2p_bytes;
      cm.duration = c.p2p;
      cm.tag = tag;
      const int id = ir.append(cm);
      ir.depend(from, id);
      ir.depend(id, to);
    };
    for (int s = 0; s < c.pp; ++s)
      for (int m = 0; m < c.microbatches; ++m) {
        const int f = fwd[static_cast<std::size_t>(s)][static_cast<std::size_t>(m)];
        const int b = bwd[static_cast<std::size_t>(s)][static_cast<std::size_t>(m)];
        ir.depend(f, b);
        if (s + 1 < c.pp) {
          link(f, fwd[static_cast<std::size_t>(s + 1)][static_cast<std::size_t>(m)], r * c.pp + s, r * c.pp + s + 1, m, "act");
          link(bwd[static_cast<std::size_t>(s + 1)][static_cast<std::size_t>(m)], b, r * c.pp + s + 1, r * c.pp + s, m, "grad");
        }
      }
  }
  if (c.grad_sync_events) {
    for (int s = 0; s < c.pp; ++s) {
      std::vector<int> group;
      for (int r = 0; r < c.dp; ++r) group.push_back(r * c.pp + s);
      std::vector<int> lasts;
      for (int r = 0; r < c.dp; ++r) {
        const auto& prog = ir.program(r * c.pp + s, Lane::Compute);
        lasts.push_back(prog.back());
      }
      for (int r = 0; r < c.dp; ++r) {
        Event g;
        g.type = EventType::GradSync;
        g.rank = r * c.pp + s;
        g.lane = Lane::Comm;
        g.replica = r;
        g.stage = s;
        g.primitive = Primitive::AllReduce;
        g.group = group;
        g.bytes = c.grad_bytes;
        g.duration = c.grad_sync;
        g.tag = "grad";
        const int id = ir.append(g);
        for (int last : lasts) ir.depend(last, id);
      }
    }
  }
  order_transfer_lanes(ir);
  return ir;
}

}  // namespace detail

inline ScheduleIR build_1f1b(const PipelineCosts& costs) { return detail::build_pipeline(costs, detail::order_1f1b); }

inline ScheduleIR build_1f1b(int pp, int microbatches) {
  return build_1f1b(uniform_pipeline_costs(pp, microbatches, 0, 0));
}

inline ScheduleIR build_1f1b(const ParallelLayout& layout, int microbatches) {
  return build_1f1b(layout.llm.pp, microbatches);
}

inline ScheduleIR build_fwd_then_bwd(const PipelineCosts& costs) {
  return detail::build_pipeline(costs, detail::order_fwd_then_bwd);
}

inline ScheduleIR build_fwd_then_bwd(int pp, int microbatches) {
  return build_fwd_then_bwd(uniform_pipeline_costs(pp, microbatches, 0, 0));
}

inline ScheduleIR build_fwd_then_bwd(const ParallelLayout& layout, int microbatches) {
  return build_fwd_then_bwd(layout.llm.pp, microbatches);
}

// ---------------------------------------------------------------------------
// Encoders.

struct EncoderWork {
  std::string model;
  std::vector<std::vector<Nanos>> fwd, bwd;  // [replica][encoder mb]
  std::vector<std::vector<Bytes>> act_bytes;
  std::vector<std::vector<double>> fwd_flops, bwd_flops;
};

struct EncoderCosts {
  std::vector<EncoderWork> models;
  Nanos p2p = 0;  // encoder output / gradient hop to and from LLM stage 0
  Bytes p2p_bytes = 0;
  bool offload = false;  // offload activations between fwd and bwd
  Nanos offload_time = 0;

  int encoder_mbs() const {
    return models.empty() || models.front().fwd.empty() ? 0 : static_cast<int>(models.front().fwd.front().size());
  }
};

inline EncoderCosts uniform_encoder_costs(const std::string& model, int dp, int mbs, Nanos fwd, Nanos bwd,
                                          Bytes act = 0) {
  EncoderWork w;
  w.model = model;
  w.fwd.assign(static_cast<std::size_t>(dp), std::vector<Nanos>(static_cast<std::size_t>(mbs), fwd));
  w.bwd.assign(static_cast<std::size_t>(dp), std::vector<Nanos>(static_cast<std::size_t>(mbs), bwd));
  w.act_bytes.assign(static_cast<std::size_t>(dp), std::vector<Bytes>(static_cast<std::size_t>(mbs), act));
  EncoderCosts c;
  c.models.push_back(std::move(w));
  return c;
}

namespace detail {
template <typename T>
T enc_at(const std::vector<std::vector<T>>& v, int r, int m) {
  if (v.empty()) return T{};
  return v.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(m));
}
}  // namespace detail

// Signed 1-based reference to an LLM event on a stage: +k = forward of
// microbatch k-1, -k = backward of microbatch k-1, 0 = program boundary.
inline int llm_ref(const Event& e) { return e.type == EventType::LlmBwd ? -(e.mb + 1) : (e.mb + 1); }

struct AnchorEntry {
  int stage = 0;
  int left = 0;
  int right = 0;
  friend bool operator==(const AnchorEntry&, const AnchorEntry&) = default;
};

// Encoder microbatch (0-based) -> insertion slot. Forward and backward
// anchors are kept apart; duplicates are preserved so validation can see them.
struct AnchorDataFlow {
  std::vector<std::pair<int, AnchorEntry>> forward;
  std::vector<std::pair<int, AnchorEntry>> backward;
  friend bool operator==(const AnchorDataFlow&, const AnchorDataFlow&) = default;
};

// Renders entries as "{5: (0, [-1,5]), 6: (1, [-2,5])}" with 1-based keys.
inline std::string format_dataflow(const std::vector<std::pair<int, AnchorEntry>>& entries) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) os << ", ";
    const auto& [k, a] = entries[i];
    os << k + 1 << ": (" << a.stage << ", [" << a.left << ',' << a.right << "])";
  }
  os << '}';
  return os.str();
}

inline std::vector<std::pair<int, AnchorEntry>> parse_dataflow(const std::string& text) {
  std::size_t p = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ArgumentError("data-flow parse error at offset " + std::to_string(p) + ": " + what);
  };
  auto skip = [&] {
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
  };
  auto expect = [&](char c) {
    skip();
    if (p >= text.size() || text[p] != c) fail(std::string("expected '") + c + "'");
    ++p;
  };
  auto integer = [&]() -> int {
    skip();
    const std::size_t start = p;
    if (p < text.size() && (text[p] == '-' || text[p] == '+')) ++p;
    while (p < text.size() && std::isdigit(static_cast<unsigned char>(text[p]))) ++p;
    if (p == start || (p == start + 1 && !std::isdigit(static_cast<unsigned char>(text[start])))) fail("expected integer");
    return std::stoi(text.substr(start, p - start));
  };
  std::vector<std::pair<int, AnchorEntry>> out;
  expect('{');
  skip();
  if (p < text.size() && text[p] == '}') return out;
  for (;;) {
    const int key = integer();
    if (key < 1) fail("keys are 1-based microbatch indices");
    expect(':');
    expect('(');
    AnchorEntry a;
    a.stage = integer();
    expect(',');
    expect('[');
    a.left = integer();
    expect(',');
    a.right = integer();
    expect(']');
    expect(')');
    out.emplace_back(key - 1, a);
    skip();
    if (p < text.size() && text[p] == ',') {
      ++p;
      skip();
      // Tolerate the "..." continuation used in hand-written examples.
      if (text.compare(p, 3, "...") == 0) {
        p += 3;
        expect('}');
        return out;
      }
      continue;
    }
    expect('}');
    return out;
  }
}

namespace detail {

// LLM compute program of one stage in replica 0 (the SPMD template).
inline std::vector<int> llm_program(const ScheduleIR& ir, int pp, int stage) {
  std::vector<int> out;
  for (int id : ir.program(stage, Lane::Compute)) {
    const Event& e = ir.at(id);
    if (e.type == EventType::LlmFwd || e.type == EventType::LlmBwd) out.push_back(id);
  }
  (void)pp;
  return out;
}

inline int find_ref(const ScheduleIR& ir, const std::vector<int>& prog, int ref) {
  for (std::size_t i = 0; i < prog.size(); ++i)
    if (llm_ref(ir.at(prog[i])) == ref) return static_cast<int>(i);
  return -1;
}

// Slot index in [0, prog.size()] described by (left, right), or -1.
inline int slot_of(const ScheduleIR& ir, const std::vector<int>& prog, const AnchorEntry& a) {
  int slot = -1;
  if (a.right != 0) {
    const int i = find_ref(ir, prog, a.right);
    if (i < 0) return -1;
    slot = i;
  } else {
    slot = static_cast<int>(prog.size());
  }
  const int expected_left = slot == 0 ? 0 : llm_ref(ir.at(prog[static_cast<std::size_t>(slot - 1)]));
  if (a.left != expected_left) return -1;
  return slot;
}

inline AnchorEntry entry_for_slot(const ScheduleIR& ir, const std::vector<int>& prog, int stage, int slot) {
  AnchorEntry a;
  a.stage = stage;
  a.left = slot == 0 ? 0 : llm_ref(ir.at(prog[static_cast<std::size_t>(slot - 1)]));
  a.right = slot == static_cast<int>(prog.size()) ? 0 : llm_ref(ir.at(prog[static_cast<std::size_t>(slot)]));
  return a;
}

inline int pp_of(const ScheduleIR& llm) {
  int pp = 0;
  for (const auto& e : llm.events)
    if (e.type == EventType::LlmFwd) pp = std::max(pp, e.stage + 1);
  return pp;
}

inline int dp_of(const ScheduleIR& llm) {
  int dp = 0;
  for (const auto& e : llm.events)
    if (e.type == EventType::LlmFwd) dp = std::max(dp, e.replica + 1);
  return dp;
}

inline int mbs_of(const ScheduleIR& llm) {
  int m = 0;
  for (const auto& e : llm.events)
    if (e.type == EventType::LlmFwd) m = std::max(m, e.mb + 1);
  return m;
}

}  // namespace detail

struct DataflowViolation {
  int mb = -1;
  std::string message;
};

// Checks an anchor flow against an LLM-only schedule (replica 0 is the
// template; all replicas run the same program).
inline std::vector<DataflowViolation> validate_dataflow(const AnchorDataFlow& flow, const ScheduleIR& llm,
                                                        int encoder_mbs) {
  std::vector<DataflowViolation> v;
  const int pp = detail::pp_of(llm);
  for (const auto* entries : {&flow.forward, &flow.backward}) {
    const bool fwd = entries == &flow.forward;
    std::map<int, int> seen;
    for (const auto& [mb, a] : *entries) {
      if (++seen[mb] == 2) v.push_back({mb, "microbatch multiply anchored"});
      if (mb < 0 || mb >= encoder_mbs) v.push_back({mb, "encoder microbatch out of range"});
      if (a.stage < 0 || a.stage >= pp) {
        v.push_back({mb, "stage out of range"});
        continue;
      }
      const auto prog = detail::llm_program(llm, pp, a.stage);
      const int slot = detail::slot_of(llm, prog, a);
      if (slot < 0) {
        v.push_back({mb, "anchor references events that are missing or not adjacent"});
        continue;
      }
      if (mb < 0 || mb >= encoder_mbs) continue;
      if (fwd) {
        // Anything at or before the slot must not already depend on the consumer.
        const auto consumer = llm.find(EventType::LlmFwd, 0, 0, mb);
        if (consumer && slot > 0) {
          const auto reach = reachable_from(llm, *consumer);
          if (reach[static_cast<std::size_t>(prog[static_cast<std::size_t>(slot - 1)])])
            v.push_back({mb, "consumer precedes producer"});
        }
      } else {
        // The slot must come after the gradient producer.
        const auto producer = llm.find(EventType::LlmBwd, 0, 0, mb);
        if (producer && slot < static_cast<int>(prog.size())) {
          const auto reach = reachable_from(llm, prog[static_cast<std::size_t>(slot)]);
          if (reach[static_cast<std::size_t>(*producer)])
            v.push_back({mb, "gradient consumer precedes producer"});
        }
      }
    }
    if (!fwd) {
      std::map<int, int> fwd_stage;
      for (const auto& [mb, a] : flow.forward) fwd_stage.emplace(mb, a.stage);
      for (const auto& [mb, a] : *entries) {
        auto it = fwd_stage.find(mb);
        if (it != fwd_stage.end() && it->second != a.stage)
          v.push_back({mb, "encoder backward anchored on a different stage than its forward"});
      }
    }
    for (int mb = 0; mb < encoder_mbs; ++mb)
      if (!seen.contains(mb)) v.push_back({mb, fwd ? "encoder microbatch not anchored" : "encoder backward not anchored"});
  }
  return v;
}

// Generic flow-driven builder: places encoder events of every replica into
// the LLM programs at the anchored slots and wires encoder/LLM dependencies.
inline ScheduleIR build_from_flow(const ScheduleIR& llm, const EncoderCosts& enc, const AnchorDataFlow& flow) {
  const int pp = detail::pp_of(llm);
  const int dp = detail::dp_of(llm);
  ScheduleIR ir(llm.num_ranks);
  ir.events = llm.events;
  ir.deps = llm.deps;
  ir.rank_roles = llm.rank_roles;
  for (int r = 0; r < llm.num_ranks; ++r)
    for (Lane l : {Lane::Comm, Lane::Copy}) ir.program(r, l) = llm.program(r, l);

  // Per stage: slot -> ordered list of (is_fwd, mb).
  std::vector<std::map<int, std::vector<std::pair<bool, int>>>> slots(static_cast<std::size_t>(pp));
  std::vector<std::vector<int>> templates(static_cast<std::size_t>(pp));
  for (int s = 0; s < pp; ++s) templates[static_cast<std::size_t>(s)] = detail::llm_program(llm, pp, s);
  for (const auto* entries : {&flow.backward, &flow.forward}) {
    const bool fwd = entries == &flow.forward;
    for (const auto& [mb, a] : *entries) {
      const int slot = detail::slot_of(llm, templates.at(static_cast<std::size_t>(a.stage)), a);
      if (slot < 0) throw ArgumentError("anchor for encoder microbatch " + std::to_string(mb + 1) + " is invalid");
      slots[static_cast<std::size_t>(a.stage)][slot].emplace_back(fwd, mb);
    }
  }
  for (auto& st : slots)
    for (auto& [slot, list] : st)
      std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
        // Backward first (frees memory), then by microbatch.
        if (a.first != b.first) return !a.first;
        return a.second < b.second;
      });

  std::map<int, int> fwd_stage, bwd_stage;
  for (const auto& [mb, a] : flow.forward) fwd_stage[mb] = a.stage;
  for (const auto& [mb, a] : flow.backward) bwd_stage[mb] = a.stage;

  for (int r = 0; r < dp; ++r) {
    // Encoder event ids for (mb) in this replica: per model.
    std::map<int, std::vector<int>> fwd_ids, bwd_ids;
    for (int s = 0; s < pp; ++s) {
      const int rank = r * pp + s;
      const auto& old = llm.program(rank, Lane::Compute);
      auto& prog = ir.program(rank, Lane::Compute);
      prog.clear();
      auto place = [&](int slot) {
        auto it = slots[static_cast<std::size_t>(s)].find(slot);
        if (it == slots[static_cast<std::size_t>(s)].end()) return;
        for (const auto& [is_fwd, mb] : it->second) {
          for (const auto& w : enc.models) {
            Event e;
            e.type = is_fwd ? EventType::EncFwd : EventType::EncBwd;
            e.rank = rank;
            e.replica = r;
            e.stage = s;
            e.mb = mb;
            e.model = w.model;
            const Bytes act = detail::enc_at(w.act_bytes, r, mb);
            if (is_fwd) {
              e.duration = detail::enc_at(w.fwd, r, mb);
              e.flops = detail::enc_at(w.fwd_flops, r, mb);
              e.mem_alloc = act;
              if (!enc.offload) e.mem_free = 0;
            } else {
              e.duration = detail::enc_at(w.bwd, r, mb);
              e.flops = detail::enc_at(w.bwd_flops, r, mb);
              e.mem_free = act;
            }
            const int id = ir.add(e);
            prog.push_back(id);
            (is_fwd ? fwd_ids : bwd_ids)[mb].push_back(id);
          }
        }
      };
      // The LLM program may also hold non-LLM compute; keep it in place.
      int llm_index = 0;
      for (int id : old) {
        const Event& e = ir.at(id);
        if (e.type == EventType::LlmFwd || e.type == EventType::LlmBwd) place(llm_index++);
        prog.push_back(id);
      }
      place(llm_index);
    }

    const bool hops = enc.p2p > 0 || enc.p2p_bytes > 0;
    for (const auto& [mb, ids] : fwd_ids) {
      const auto consumer = ir.find(EventType::LlmFwd, r, 0, mb);
      if (!consumer) continue;  // encoder mb beyond the LLM microbatches
      const int s = fwd_stage.at(mb);
      if (s == 0 || !hops) {
        for (int id : ids) ir.depend(id, *consumer);
      } else {
        Event cm;
        cm.type = EventType::Comm;
        cm.rank = r * pp + s;
        cm.lane = Lane::Comm;
        cm.replica = r;
        cm.stage = s;
        cm.mb = mb;
        cm.primitive = Primitive::P2P;
        cm.group = {r * pp + s, r * pp};
        cm.bytes = enc.p2p_bytes;
        cm.duration = enc.p2p;
        cm.tag = "enc_out";
        const int c = ir.append(cm);
        for (int id : ids) ir.depend(id, c);
        ir.depend(c, *consumer);
      }
    }
    for (const auto& [mb, ids] : bwd_ids) {
      const auto producer = ir.find(EventType::LlmBwd, r, 0, mb);
      const int s = bwd_stage.at(mb);
      if (producer) {
        if (s == 0 || !hops) {
          for (int id : ids) ir.depend(*producer, id);
        } else {
          Event cm;
          cm.type = EventType::Comm;
          cm.rank = r * pp;
          cm.lane = Lane::Comm;
          cm.replica = r;
          cm.stage = 0;
          cm.mb = mb;
          cm.primitive = Primitive::P2P;
          cm.group = {r * pp, r * pp + s};
          cm.bytes = enc.p2p_bytes;
          cm.duration = enc.p2p;
          cm.tag = "enc_grad";
          const int c = ir.append(cm);
          ir.depend(*producer, c);
          for (int id : ids) ir.depend(c, id);
        }
      }
      // Forward before backward on the same model.
      const auto fit = fwd_ids.find(mb);
      if (fit != fwd_ids.end())
        for (std::size_t k = 0; k < ids.size() && k < fit->second.size(); ++k) {
          ir.depend(fit->second[k], ids[k]);
          if (enc.offload) {
            Event off;
            off.type = EventType::Offload;
            off.rank = ir.at(fit->second[k]).rank;
            off.lane = Lane::Copy;
            off.replica = r;
            off.mb = mb;
            off.model = ir.at(fit->second[k]).model;
            off.bytes = ir.at(fit->second[k]).mem_alloc;
            off.duration = enc.offload_time;
            off.mem_free = off.bytes;
            off.tag = "act";
            Event rel = off;
            rel.type = EventType::Reload;
            rel.rank = ir.at(ids[k]).rank;
            rel.mem_free = 0;
            rel.mem_alloc = rel.bytes;
            const int o = ir.append(off);
            const int l = ir.append(rel);
            ir.depend(fit->second[k], o);
            ir.depend(o, l);
            ir.depend(l, ids[k]);
          }
        }
    }
  }
  order_transfer_lanes(ir);
  return ir;
}

enum class InsertionPolicy { OnDemand, AllUpfront };

struct InsertionResult {
  ScheduleIR ir;
  AnchorDataFlow flow;
};

// Uniform share: stage s hosts encoder microbatches {s, s+pp, ...}. OnDemand
// runs EncFwd(m) right before LlmFwd(s, m - s), which lines up with the
// moment stage 0 needs it, and runs EncBwd(m) in the first later forward
// slot of the same stage that already depends on LlmBwd(0, m), so each
// stage's encoder work stays in one block per window. AllUpfront runs all
// encoder forwards before the LLM program and all backwards after it.
inline AnchorDataFlow uniform_dataflow(const ScheduleIR& llm, int encoder_mbs, InsertionPolicy policy) {
  const int pp = detail::pp_of(llm);
  const int llm_mbs = detail::mbs_of(llm);
  AnchorDataFlow flow;
  std::vector<std::vector<int>> prog(static_cast<std::size_t>(pp));
  for (int s = 0; s < pp; ++s) prog[static_cast<std::size_t>(s)] = detail::llm_program(llm, pp, s);
  for (int m = 0; m < encoder_mbs; ++m) {
    const int s = m % pp;
    const auto& p = prog[static_cast<std::size_t>(s)];
    if (policy == InsertionPolicy::AllUpfront) {
      flow.forward.emplace_back(m, detail::entry_for_slot(llm, p, s, 0));
      flow.backward.emplace_back(m, detail::entry_for_slot(llm, p, s, static_cast<int>(p.size())));
      continue;
    }
    const int fslot = detail::find_ref(llm, p, m - s + 1);
    if (fslot < 0) throw InternalError("LLM program lacks LlmFwd(" + std::to_string(s) + "," + std::to_string(m - s) + ")");
    flow.forward.emplace_back(m, detail::entry_for_slot(llm, p, s, fslot));

    int bslot = static_cast<int>(p.size());
    if (const auto producer = llm.find(EventType::LlmBwd, 0, 0, m)) {
      const auto reach = reachable_from(llm, *producer);
      for (int later = m + pp; later < llm_mbs; later += pp) {
        const int slot = detail::find_ref(llm, p, later - s + 1);
        if (slot >= 0 && reach[static_cast<std::size_t>(p[static_cast<std::size_t>(slot)])]) {
          bslot = slot;
          break;
        }
      }
    }
    flow.backward.emplace_back(m, detail::entry_for_slot(llm, p, s, bslot));
  }
  return flow;
}

inline InsertionResult insert_encoders_uniform(const ScheduleIR& llm, const EncoderCosts& enc, InsertionPolicy policy) {
  for (const auto& e : llm.events)
    if (e.type == EventType::EncFwd || e.type == EventType::EncBwd)
      throw ArgumentError("schedule already contains encoder events");
  const int mbs = enc.encoder_mbs();
  if (mbs > detail::mbs_of(llm)) throw ArgumentError("more encoder microbatches than LLM microbatches");
  InsertionResult out;
  out.flow = uniform_dataflow(llm, mbs, policy);
  out.ir = build_from_flow(llm, enc, out.flow);
  return out;
}

inline InsertionResult insert_encoders_uniform(const ScheduleIR& llm, const ParallelLayout& layout,
                                               const EncoderCosts& enc, InsertionPolicy policy) {
  for (std::size_t s = 1; s < layout.colocation.size(); ++s)
    if (layout.colocation[s] != layout.colocation[0])
      throw ConfigError("heterogeneous encoder colocation");
  return insert_encoders_uniform(llm, enc, policy);
}

// Aggressive insertion used as the negative control: stage s owns a
// contiguous block of weights[s] encoder microbatches, runs their forwards
// before its LLM program and their backwards after it.
inline InsertionResult insert_encoders_nonuniform(const ScheduleIR& llm, const EncoderCosts& enc,
                                                  const std::vector<int>& weights) {
  const int pp = detail::pp_of(llm);
  const int mbs = enc.encoder_mbs();
  if (static_cast<int>(weights.size()) != pp) throw ArgumentError("need one weight per stage");
  if (std::any_of(weights.begin(), weights.end(), [](int w) { return w < 0; }))
    throw ArgumentError("weights must be nonnegative");
  if (std::accumulate(weights.begin(), weights.end(), 0) != mbs)
    throw ArgumentError("weights must sum to the number of encoder microbatches");
  if (mbs > detail::mbs_of(llm)) throw ArgumentError("more encoder microbatches than LLM microbatches");
  InsertionResult out;
  int m = 0;
  for (int s = 0; s < pp; ++s) {
    const auto p = detail::llm_program(llm, pp, s);
    for (int k = 0; k < weights[static_cast<std::size_t>(s)]; ++k, ++m) {
      out.flow.forward.emplace_back(m, detail::entry_for_slot(llm, p, s, 0));
      out.flow.backward.emplace_back(m, detail::entry_for_slot(llm, p, s, static_cast<int>(p.size())));
    }
  }
  out.ir = build_from_flow(llm, enc, out.flow);
  return out;
}

}  // namespace mmsim
