#pragma once

// Long-short sequence parallelism for encoders. Per microbatch, every rank
// first encodes its own short samples (DP state), then the SP group shifts
// into Ulysses state and encodes the long samples sharded over the group.

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mmsim/balance.hpp"
#include "mmsim/common.hpp"
#include "mmsim/model_cost.hpp"
#include "mmsim/schedule_ir.hpp"
#include "mmsim/topology.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

struct LsspSplit {
  std::vector<Sample> dp;  // length <= eta
  std::vector<Sample> sp;  // length > eta
};

inline LsspSplit lssp_split(std::span<const Sample> samples, Tokens eta) {
  if (eta < 0) throw ArgumentError("eta must be >= 0");
  LsspSplit out;
  for (const auto& s : samples) (s.length <= eta ? out.dp : out.sp).push_back(s);
  return out;
}

struct LsspCostModel {
  ModelSpec encoder;
  Hardware hw;
  CommModel comm;
  double passes = 1.0;      // 1 = forward only, 3 = forward + backward
  Tokens rank_capacity = 0; // tokens one rank can hold; 0 = unlimited
  Bytes activation_bytes = 2;
};

// Encoding time of one sample spread over `gpus` (attention within the sample).
inline Nanos lssp_sample_nanos(const LsspCostModel& c, Tokens len, int gpus) {
  return compute_nanos(c.passes * flops_forward(c.encoder, len, std::max<Tokens>(1, len)), c.hw, gpus);
}

// Ulysses moves q/k/v and the attention output through an all-to-all in every
// layer; the traffic is lumped into the enter and exit events (half each).
inline Bytes lssp_alltoall_bytes(const LsspCostModel& c, Tokens long_tokens, int sp) {
  const Bytes per_rank = long_tokens / std::max(1, sp);
  return per_rank * c.encoder.hidden * c.activation_bytes * 4 * c.encoder.layers / 2;
}

inline Nanos lssp_alltoall_nanos(const LsspCostModel& c, Tokens long_tokens, int sp, bool intra_node) {
  if (sp <= 1 || long_tokens == 0) return 0;
  return seconds_to_nanos(comm_time(c.comm, Primitive::AllToAll, lssp_alltoall_bytes(c, long_tokens, sp),
                                    static_cast<std::size_t>(sp), intra_node));
}

inline Bytes zero_gather_bytes(const LsspCostModel& c) { return static_cast<Bytes>(c.encoder.params * 2.0); }

namespace detail {
inline void check_lssp_capacity(const LsspCostModel& c, const Sample& s, Tokens eta, int sp) {
  if (c.rank_capacity <= 0) return;
  const Tokens limit = s.length <= eta ? c.rank_capacity : c.rank_capacity * sp;
  if (s.length > limit)
    throw ConfigError("sample " + std::to_string(s.id) + " (" + std::to_string(s.length) +
                      " tokens) exceeds the SP group capacity of " + std::to_string(limit) + " tokens");
}
}  // namespace detail

// One microbatch dealt the way grouped reordering leaves it: long samples
// over Ulysses groups (KK on encoding time), then short ones longest first
// onto the least loaded rank. Result is per_rank[rank][0].
inline std::vector<std::vector<std::vector<Sample>>> lssp_deal(std::span<const Sample> samples, Tokens eta, int ranks,
                                                               int sp, const LsspCostModel& cost) {
  if (sp < 1 || ranks < sp || ranks % sp != 0) throw ConfigError("encoder ranks must split into whole Ulysses groups");
  std::vector<std::vector<std::vector<Sample>>> per_rank(static_cast<std::size_t>(ranks),
                                                         std::vector<std::vector<Sample>>(1));
  const auto split = lssp_split(samples, eta);
  std::vector<Nanos> load(static_cast<std::size_t>(ranks), 0);
  if (!split.sp.empty()) {
    std::vector<std::int64_t> wts;
    for (const auto& s : split.sp) wts.push_back(lssp_sample_nanos(cost, s.length, sp));
    const auto part = kk_partition(wts, ranks / sp);
    for (std::size_t i = 0; i < split.sp.size(); ++i) {
      const int g0 = part.assignment[i] * sp;
      per_rank[static_cast<std::size_t>(g0)][0].push_back(split.sp[i]);
      for (int k = 0; k < sp; ++k) load[static_cast<std::size_t>(g0 + k)] += wts[i];
    }
  }
  std::vector<std::pair<Nanos, std::size_t>> order;
  for (std::size_t i = 0; i < split.dp.size(); ++i) order.emplace_back(lssp_sample_nanos(cost, split.dp[i].length, 1), i);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [t, i] : order) {
    const auto r = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    per_rank[r][0].push_back(split.dp[i]);
    load[r] += t;
  }
  return per_rank;
}

// per_rank[rank][mb] -> samples held by that encoder rank. Ranks are grouped
// into consecutive Ulysses groups of layout.encoder.ulysses_sp.
inline ScheduleIR lssp_schedule(const std::vector<std::vector<std::vector<Sample>>>& per_rank, Tokens eta,
                                const ParallelLayout& layout, const Topology& topo, const LsspCostModel& cost) {
  const int sp = layout.encoder.ulysses_sp;
  const int ranks = static_cast<int>(per_rank.size());
  if (eta < 0) throw ArgumentError("eta must be >= 0");
  if (sp < 1 || ranks % sp != 0) throw ConfigError("encoder ranks must split into whole Ulysses groups");
  if (ranks != layout.encoder.dp * sp) throw ConfigError("encoder dp * ulysses_sp must match the rank count");
  const int mbs = ranks == 0 ? 0 : static_cast<int>(per_rank.front().size());
  for (const auto& r : per_rank)
    if (static_cast<int>(r.size()) != mbs) throw ArgumentError("ranks disagree on microbatch count");

  ScheduleIR ir(ranks);
  ir.lumped_backward = true;
  std::fill(ir.rank_roles.begin(), ir.rank_roles.end(), "encoder");
  const bool zero = layout.encoder.zero_stage != ZeroStage::None;
  std::vector<int> all(static_cast<std::size_t>(ranks));
  std::iota(all.begin(), all.end(), 0);
  const bool all_intra = topo.same_node(all);
  const Nanos gather = zero ? seconds_to_nanos(comm_time(cost.comm, Primitive::AllGather, zero_gather_bytes(cost),
                                                         static_cast<std::size_t>(ranks), all_intra))
                            : 0;
  auto add_gather = [&](int rank, int mb, int before, const char* tag) {
    Event g;
    g.type = EventType::Comm;
    g.rank = rank;
    g.lane = Lane::Comm;
    g.mb = mb;
    g.primitive = Primitive::AllGather;
    g.group = all;
    g.bytes = zero_gather_bytes(cost);
    g.duration = gather;
    g.tag = tag;
    ir.depend(ir.append(g), before);
  };

  for (int g0 = 0; g0 < ranks; g0 += sp) {
    std::vector<int> group(static_cast<std::size_t>(sp));
    std::iota(group.begin(), group.end(), g0);
    const bool intra = topo.same_node(group);
    for (int mb = 0; mb < mbs; ++mb) {
      Tokens long_tokens = 0;
      Nanos long_work = 0;
      std::vector<int> dp_ids;
      for (int r : group) {
        Nanos t = 0;
        Tokens toks = 0;
        for (const auto& s : per_rank[static_cast<std::size_t>(r)][static_cast<std::size_t>(mb)]) {
          detail::check_lssp_capacity(cost, s, eta, sp);
          if (s.length <= eta) {
            t += lssp_sample_nanos(cost, s.length, 1);
            toks += s.length;
          } else {
            long_tokens += s.length;
            long_work += lssp_sample_nanos(cost, s.length, sp);
          }
        }
        Event e;
        e.type = EventType::EncFwd;
        e.rank = r;
        e.mb = mb;
        e.model = cost.encoder.name;
        e.tag = "dp";
        e.duration = t;
        e.tokens = 0;
        e.flops = 0;
        e.mem_alloc = toks * cost.encoder.hidden * cost.activation_bytes;
        e.mem_free = e.mem_alloc;
        const int id = ir.append(e);
        dp_ids.push_back(id);
        if (zero) add_gather(r, mb, id, "zero_dp");
      }
      if (long_tokens == 0) continue;
      const Nanos a2a = lssp_alltoall_nanos(cost, long_tokens, sp, intra);
      const Bytes a2a_bytes = lssp_alltoall_bytes(cost, long_tokens, sp);
      std::vector<int> enter, sp_ids;
      for (int r : group) {
        if (sp > 1) {
          Event c;
          c.type = EventType::Comm;
          c.rank = r;
          c.lane = Lane::Comm;
          c.mb = mb;
          c.primitive = Primitive::AllToAll;
          c.group = group;
          c.bytes = a2a_bytes;
          c.duration = a2a;
          c.tag = "sp_enter";
          const int id = ir.append(c);
          for (int d : dp_ids) ir.depend(d, id);
          enter.push_back(id);
        }
      }
      for (std::size_t k = 0; k < group.size(); ++k) {
        Event e;
        e.type = EventType::EncFwd;
        e.rank = group[k];
        e.mb = mb;
        e.model = cost.encoder.name;
        e.tag = "sp";
        e.duration = long_work;
        e.mem_alloc = long_tokens / sp * cost.encoder.hidden * cost.activation_bytes;
        e.mem_free = e.mem_alloc;
        const int id = ir.append(e);
        for (int c : enter) ir.depend(c, id);
        if (zero) add_gather(group[k], mb, id, "zero_sp");
        sp_ids.push_back(id);
      }
      for (int r : group) {
        if (sp <= 1) break;
        Event c;
        c.type = EventType::Comm;
        c.rank = r;
        c.lane = Lane::Comm;
        c.mb = mb;
        c.primitive = Primitive::AllToAll;
        c.group = group;
        c.bytes = a2a_bytes;
        c.duration = a2a;
        c.tag = "sp_exit";
        const int id = ir.append(c);
        for (int s : sp_ids) ir.depend(s, id);
      }
    }
  }
  order_transfer_lanes(ir);
  return ir;
}

// Closed-form makespan of lssp_schedule without ZeRO gathers: each group
// alternates max(DP work) -> enter -> SP work -> exit per microbatch, with the
// exit all-to-all overlapping the next microbatch's DP work.
inline Nanos lssp_analytic_makespan(const std::vector<std::vector<std::vector<Sample>>>& per_rank, Tokens eta,
                                    const ParallelLayout& layout, const Topology& topo, const LsspCostModel& cost) {
  const int sp = layout.encoder.ulysses_sp;
  const int ranks = static_cast<int>(per_rank.size());
  const int mbs = ranks == 0 ? 0 : static_cast<int>(per_rank.front().size());
  Nanos makespan = 0;
  for (int g0 = 0; g0 < ranks; g0 += sp) {
    std::vector<int> group(static_cast<std::size_t>(sp));
    std::iota(group.begin(), group.end(), g0);
    const bool intra = topo.same_node(group);
    std::vector<Nanos> compute_free(static_cast<std::size_t>(sp), 0);
    Nanos comm_free = 0;
    for (int mb = 0; mb < mbs; ++mb) {
      Tokens long_tokens = 0;
      Nanos long_work = 0;
      Nanos dp_done = 0;
      for (int k = 0; k < sp; ++k) {
        Nanos t = 0;
        for (const auto& s : per_rank[static_cast<std::size_t>(g0 + k)][static_cast<std::size_t>(mb)]) {
          if (s.length <= eta) {
            t += lssp_sample_nanos(cost, s.length, 1);
          } else {
            long_tokens += s.length;
            long_work += lssp_sample_nanos(cost, s.length, sp);
          }
        }
        compute_free[static_cast<std::size_t>(k)] += t;
        dp_done = std::max(dp_done, compute_free[static_cast<std::size_t>(k)]);
        makespan = std::max(makespan, compute_free[static_cast<std::size_t>(k)]);
      }
      if (long_tokens == 0) continue;
      Nanos sp_start = dp_done;
      if (sp > 1) {
        comm_free = std::max(comm_free, dp_done) + lssp_alltoall_nanos(cost, long_tokens, sp, intra);
        sp_start = comm_free;
      }
      Nanos sp_end = 0;
      for (auto& f : compute_free) {
        f = std::max(f, sp_start) + long_work;
        sp_end = std::max(sp_end, f);
      }
      makespan = std::max(makespan, sp_end);
      if (sp > 1) {
        comm_free = std::max(comm_free, sp_end) + lssp_alltoall_nanos(cost, long_tokens, sp, intra);
        makespan = std::max(makespan, comm_free);
      }
    }
  }
  return makespan;
}

// Static spatial split: `dp_nodes` whole nodes encode short samples in plain
// DP, the remaining nodes form fixed Ulysses groups (one per node) for long
// samples. Work is spread by longest-processing-time first on both sides.
inline Nanos static_split_makespan(std::span<const Sample> samples, Tokens eta, int dp_nodes, const Topology& topo,
                                   const LsspCostModel& cost) {
  const int sp_nodes = topo.nodes - dp_nodes;
  if (dp_nodes < 0 || sp_nodes < 0) throw ArgumentError("invalid static split");
  const int G = topo.gpus_per_node;
  std::vector<Nanos> shorts, longs;
  for (const auto& s : samples) {
    if (s.length <= eta)
      shorts.push_back(lssp_sample_nanos(cost, s.length, 1));
    else
      longs.push_back(lssp_sample_nanos(cost, s.length, G) + 2 * lssp_alltoall_nanos(cost, s.length, G, true));
  }
  auto lpt = [](std::vector<Nanos> jobs, int machines) -> Nanos {
    if (jobs.empty()) return 0;
    if (machines <= 0) return std::numeric_limits<Nanos>::max() / 4;
    std::sort(jobs.begin(), jobs.end(), std::greater<>());
    std::vector<Nanos> load(static_cast<std::size_t>(machines), 0);
    for (Nanos j : jobs) *std::min_element(load.begin(), load.end()) += j;
    return *std::max_element(load.begin(), load.end());
  };
  return std::max(lpt(shorts, dp_nodes * G), lpt(longs, sp_nodes));
}

// Node split minimizing the static makespan on a calibration sample set.
inline int calibrate_static_split(std::span<const Sample> samples, Tokens eta, const Topology& topo,
                                  const LsspCostModel& cost) {
  int best = 1;
  Nanos best_t = std::numeric_limits<Nanos>::max();
  for (int d = 1; d < topo.nodes; ++d) {
    const Nanos t = static_split_makespan(samples, eta, d, topo, cost);
    if (t < best_t) {
      best_t = t;
      best = d;
    }
  }
  return best;
}

}  // namespace mmsim
