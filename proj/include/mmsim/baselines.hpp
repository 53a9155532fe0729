#pragma once

// Comparison architectures: encoders prepended to the first LLM stage,
// encoders on a disaggregated rank block, and static bubble packing.

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/engine.hpp"
#include "mmsim/schedule.hpp"
#include "mmsim/topology.hpp"

namespace mmsim {

namespace detail {

inline Nanos encoder_fwd_total(const EncoderCosts& enc, int r, int m) {
  Nanos t = 0;
  for (const auto& w : enc.models) t += enc_at(w.fwd, r, m);
  return t;
}
inline Nanos encoder_bwd_total(const EncoderCosts& enc, int r, int m) {
  Nanos t = 0;
  for (const auto& w : enc.models) t += enc_at(w.bwd, r, m);
  return t;
}

template <typename T>
void ensure_shape(PerReplicaStage<T>& v, int dp, int pp, int m) {
  if (!v.empty()) return;
  v.assign(static_cast<std::size_t>(dp),
           std::vector<std::vector<T>>(static_cast<std::size_t>(pp), std::vector<T>(static_cast<std::size_t>(m), T{})));
}

}  // namespace detail

// Encoder work of microbatch j is fused into stage 0's LlmFwd(0, j) and
// LlmBwd(0, j); its activations stay on stage 0 alongside the LLM's.
inline ScheduleIR build_prepended(PipelineCosts llm, const EncoderCosts& enc) {
  detail::ensure_shape(llm.fwd, llm.dp, llm.pp, llm.microbatches);
  detail::ensure_shape(llm.bwd, llm.dp, llm.pp, llm.microbatches);
  detail::ensure_shape(llm.act_bytes, llm.dp, llm.pp, llm.microbatches);
  detail::ensure_shape(llm.fwd_flops, llm.dp, llm.pp, llm.microbatches);
  detail::ensure_shape(llm.bwd_flops, llm.dp, llm.pp, llm.microbatches);
  const int mbs = std::min(enc.encoder_mbs(), llm.microbatches);
  for (int r = 0; r < llm.dp; ++r)
    for (int j = 0; j < mbs; ++j) {
      const auto ur = static_cast<std::size_t>(r), uj = static_cast<std::size_t>(j);
      llm.fwd[ur][0][uj] += detail::encoder_fwd_total(enc, r, j);
      llm.bwd[ur][0][uj] += detail::encoder_bwd_total(enc, r, j);
      for (const auto& w : enc.models) {
        llm.act_bytes[ur][0][uj] += detail::enc_at(w.act_bytes, r, j);
        llm.fwd_flops[ur][0][uj] += detail::enc_at(w.fwd_flops, r, j);
        llm.bwd_flops[ur][0][uj] += detail::enc_at(w.bwd_flops, r, j);
      }
    }
  return build_1f1b(llm);
}

// Encoder events run on `encoder_workers` dedicated ranks (ids 0..E-1); the
// LLM pipeline occupies the following ranks. Each worker processes its share
// in the order stage 0 consumes it, so the block never deadlocks.
inline ScheduleIR build_disaggregated(const PipelineCosts& llm_costs, const EncoderCosts& enc, int encoder_workers) {
  if (encoder_workers < 1) throw ConfigError("disaggregated baseline needs at least one encoder rank");
  const ScheduleIR llm = build_1f1b(llm_costs);
  const int E = encoder_workers;
  ScheduleIR ir(E + llm.num_ranks);
  for (int r = 0; r < E; ++r) ir.rank_roles[static_cast<std::size_t>(r)] = "encoder";
  ir.events = llm.events;
  for (auto& e : ir.events) {
    e.rank += E;
    for (auto& g : e.group) g += E;
  }
  ir.deps = llm.deps;
  for (int r = 0; r < llm.num_ranks; ++r) ir.programs[static_cast<std::size_t>(r + E)] = llm.programs[static_cast<std::size_t>(r)];

  const int pp = llm_costs.pp, m = llm_costs.microbatches;
  const int mbs = std::min(enc.encoder_mbs(), m);
  // Stage-0 program position of every LLM event (identical across replicas).
  std::map<std::pair<bool, int>, int> pos;
  {
    const auto& prog = llm.program(0, Lane::Compute);
    for (std::size_t i = 0; i < prog.size(); ++i) {
      const Event& e = llm.at(prog[i]);
      pos[{e.type == EventType::LlmBwd, e.mb}] = static_cast<int>(i);
    }
  }
  struct Item {
    double key;
    int replica;
    bool fwd;
    int mb;
  };
  std::vector<std::vector<Item>> work(static_cast<std::size_t>(E));
  for (int r = 0; r < llm_costs.dp; ++r)
    for (int j = 0; j < mbs; ++j) {
      const int w = (r * m + j) % E;
      work[static_cast<std::size_t>(w)].push_back({static_cast<double>(pos.at({false, j})), r, true, j});
      work[static_cast<std::size_t>(w)].push_back({pos.at({true, j}) + 0.5, r, false, j});
    }
  const bool hops = enc.p2p > 0 || enc.p2p_bytes > 0;
  for (int w = 0; w < E; ++w) {
    auto& items = work[static_cast<std::size_t>(w)];
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
      if (a.key != b.key) return a.key < b.key;
      return a.replica < b.replica;
    });
    for (const auto& it : items) {
      const int stage0 = E + it.replica * pp;
      std::vector<int> ids;
      for (const auto& model : enc.models) {
        Event e;
        e.type = it.fwd ? EventType::EncFwd : EventType::EncBwd;
        e.rank = w;
        e.replica = it.replica;
        e.stage = -1;
        e.mb = it.mb;
        e.model = model.model;
        const Bytes act = detail::enc_at(model.act_bytes, it.replica, it.mb);
        if (it.fwd) {
          e.duration = detail::enc_at(model.fwd, it.replica, it.mb);
          e.flops = detail::enc_at(model.fwd_flops, it.replica, it.mb);
          e.mem_alloc = act;
        } else {
          e.duration = detail::enc_at(model.bwd, it.replica, it.mb);
          e.flops = detail::enc_at(model.bwd_flops, it.replica, it.mb);
          e.mem_free = act;
        }
        ids.push_back(ir.append(e));
      }
      const auto f0 = ir.find(EventType::LlmFwd, it.replica, 0, it.mb);
      const auto b0 = ir.find(EventType::LlmBwd, it.replica, 0, it.mb);
      if (it.fwd) {
        if (!hops) {
          for (int id : ids) ir.depend(id, *f0);
        } else {
          Event c;
          c.type = EventType::Comm;
          c.rank = w;
          c.lane = Lane::Comm;
          c.replica = it.replica;
          c.mb = it.mb;
          c.primitive = Primitive::P2P;
          c.group = {w, stage0};
          c.bytes = enc.p2p_bytes;
          c.duration = enc.p2p;
          c.tag = "enc_out";
          const int cid = ir.append(c);
          for (int id : ids) ir.depend(id, cid);
          ir.depend(cid, *f0);
        }
      } else {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const auto fwd = ir.find(EventType::EncFwd, it.replica, -1, it.mb, ir.at(ids[k]).model);
          if (fwd) ir.depend(*fwd, ids[k]);
        }
        if (!hops) {
          for (int id : ids) ir.depend(*b0, id);
        } else {
          Event c;
          c.type = EventType::Comm;
          c.rank = stage0;
          c.lane = Lane::Comm;
          c.replica = it.replica;
          c.stage = 0;
          c.mb = it.mb;
          c.primitive = Primitive::P2P;
          c.group = {stage0, w};
          c.bytes = enc.p2p_bytes;
          c.duration = enc.p2p;
          c.tag = "enc_grad";
          const int cid = ir.append(c);
          ir.depend(*b0, cid);
          for (int id : ids) ir.depend(cid, id);
        }
      }
    }
  }
  order_transfer_lanes(ir);
  return ir;
}

// Static bubble packing. The plan is computed once from reference costs:
// idle gaps of the LLM-only timeline (shifted by the unavoidable prologue of
// encoding microbatch 0, extended by the epilogue of its last backward) are
// filled greedily. Forwards must finish before
// their consumer starts; backwards must start after their producer ends.
// Forwards that fit nowhere run serially on stage 0, backwards that fit
// nowhere run serially on their forward's stage; both are flagged.
struct OptimusPlan {
  AnchorDataFlow flow;
  std::vector<int> overflow_fwd;
  std::vector<int> overflow_bwd;
};

inline OptimusPlan plan_optimus(const PipelineCosts& ref_llm, const EncoderCosts& ref_enc) {
  PipelineCosts single = ref_llm;
  single.dp = 1;
  if (!single.fwd.empty()) single.fwd.resize(1);
  if (!single.bwd.empty()) single.bwd.resize(1);
  if (!single.act_bytes.empty()) single.act_bytes.resize(1);
  if (!single.fwd_flops.empty()) single.fwd_flops.resize(1);
  if (!single.bwd_flops.empty()) single.bwd_flops.resize(1);
  if (!single.tokens.empty()) single.tokens.resize(1);
  single.grad_sync_events = false;
  const ScheduleIR llm = build_1f1b(single);
  const SimResult ref = simulate(llm);
  const int pp = single.pp;
  const int mbs = std::min(ref_enc.encoder_mbs(), single.microbatches);
  const Nanos prologue = mbs > 0 ? detail::encoder_fwd_total(ref_enc, 0, 0) : 0;
  // LlmBwd(0, m-1) ends the LLM timeline, so its encoder backward always trails it.
  const Nanos epilogue = mbs == single.microbatches && mbs > 0 ? detail::encoder_bwd_total(ref_enc, 0, mbs - 1) : 0;
  const Nanos horizon = ref.timeline.makespan + prologue + epilogue;

  struct Gap {
    int stage;
    int slot;  // insert before the slot-th LLM event of the stage
    Nanos start, end, used;
  };
  std::vector<Gap> gaps;
  std::vector<std::vector<int>> progs(static_cast<std::size_t>(pp));
  for (int s = 0; s < pp; ++s) {
    progs[static_cast<std::size_t>(s)] = detail::llm_program(llm, pp, s);
    const auto& p = progs[static_cast<std::size_t>(s)];
    Nanos t = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& en = ref.timeline.entries[static_cast<std::size_t>(p[i])];
      const Nanos st = en.start + prologue;
      if (st > t) gaps.push_back({s, static_cast<int>(i), t, st, 0});
      t = en.end + prologue;
    }
    if (horizon > t) gaps.push_back({s, static_cast<int>(p.size()), t, horizon, 0});
  }
  auto event_time = [&](EventType type, int mb, bool start) {
    const auto id = llm.find(type, 0, 0, mb);
    const auto& en = ref.timeline.entries[static_cast<std::size_t>(*id)];
    return (start ? en.start : en.end) + prologue;
  };

  OptimusPlan plan;
  auto anchor = [&](int s, int slot) { return detail::entry_for_slot(llm, progs[static_cast<std::size_t>(s)], s, slot); };
  for (int j = 0; j < mbs; ++j) {
    const Nanos cost = detail::encoder_fwd_total(ref_enc, 0, j);
    const Nanos deadline = event_time(EventType::LlmFwd, j, true);
    Gap* best = nullptr;
    for (auto& g : gaps) {
      const Nanos hop = g.stage == 0 ? 0 : ref_enc.p2p;
      const Nanos finish = g.start + g.used + cost;
      if (finish > g.end || finish + hop > deadline) continue;
      if (!best || g.end > best->end || (g.end == best->end && g.stage < best->stage)) best = &g;
    }
    if (j == 0 && !best) {
      // The prologue gap on stage 0 is sized for exactly this microbatch.
      for (auto& g : gaps)
        if (g.stage == 0 && g.slot == 0) best = &g;
    }
    if (best) {
      best->used += cost;
      plan.flow.forward.emplace_back(j, anchor(best->stage, best->slot));
    } else {
      plan.overflow_fwd.push_back(j);
      plan.flow.forward.emplace_back(j, anchor(0, detail::find_ref(llm, progs[0], j + 1)));
    }
  }
  for (int j = 0; j < mbs; ++j) {
    const Nanos cost = detail::encoder_bwd_total(ref_enc, 0, j);
    const Nanos ready = event_time(EventType::LlmBwd, j, false);
    Gap* best = nullptr;
    const int home = plan.flow.forward[static_cast<std::size_t>(j)].second.stage;
    for (auto& g : gaps) {
      if (g.stage != home) continue;  // activations live where the forward ran
      const Nanos hop = g.stage == 0 ? 0 : ref_enc.p2p;
      const Nanos begin = std::max(g.start + g.used, ready + hop);
      if (begin + cost > g.end) continue;
      const Nanos best_begin = best ? std::max(best->start + best->used, ready + (best->stage == 0 ? 0 : ref_enc.p2p)) : 0;
      if (!best || begin < best_begin || (begin == best_begin && g.stage < best->stage)) best = &g;
    }
    if (best) {
      const Nanos hop = best->stage == 0 ? 0 : ref_enc.p2p;
      best->used = std::max(best->start + best->used, ready + hop) + cost - best->start;
      plan.flow.backward.emplace_back(j, anchor(best->stage, best->slot));
    } else {
      plan.overflow_bwd.push_back(j);
      const auto& hp = progs[static_cast<std::size_t>(home)];
      plan.flow.backward.emplace_back(j, anchor(home, home == 0 ? detail::find_ref(llm, hp, -(j + 1)) + 1
                                                                : static_cast<int>(hp.size())));
    }
  }
  return plan;
}

inline ScheduleIR build_optimus(const PipelineCosts& llm_costs, const EncoderCosts& enc, const OptimusPlan& plan) {
  const ScheduleIR llm = build_1f1b(llm_costs);
  ScheduleIR ir = build_from_flow(llm, enc, plan.flow);
  for (auto& e : ir.events) {
    if (e.type == EventType::EncFwd &&
        std::find(plan.overflow_fwd.begin(), plan.overflow_fwd.end(), e.mb) != plan.overflow_fwd.end())
      e.overflow = true;
    if (e.type == EventType::EncBwd &&
        std::find(plan.overflow_bwd.begin(), plan.overflow_bwd.end(), e.mb) != plan.overflow_bwd.end())
      e.overflow = true;
  }
  return ir;
}

inline std::size_t overflow_count(const ScheduleIR& ir) {
  return static_cast<std::size_t>(std::count_if(ir.events.begin(), ir.events.end(), [](const Event& e) { return e.overflow; }));
}

}  // namespace mmsim
