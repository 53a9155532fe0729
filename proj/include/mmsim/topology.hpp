#pragma once

// Cluster description and the decoupled encoder/LLM parallel layout.
//
// LLM rank order is TP innermost, then SP, then DP, then PP:
//   rank = ((pp * dp_degree + dp) * sp_degree + sp) * tp_degree + tp
// Encoder ranks use Ulysses SP innermost, then DP.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/model_cost.hpp"

namespace mmsim {

struct Topology {
  int nodes = 1;
  int gpus_per_node = 8;

  int total_ranks() const { return nodes * gpus_per_node; }
  int rank(int node, int slot) const { return node * gpus_per_node + slot; }
  int node_of(int rank) const { return rank / gpus_per_node; }

  bool same_node(std::span<const int> ranks) const {
    if (ranks.empty()) return true;
    const int n = node_of(ranks.front());
    return std::all_of(ranks.begin(), ranks.end(), [&](int r) { return node_of(r) == n; });
  }
};

// comm_time over a concrete rank set; picks the link class from locality.
inline double comm_time(const CommModel& model, Primitive p, Bytes bytes, std::span<const int> group,
                        const Topology& topo) {
  if (group.empty()) throw ArgumentError("communication group must be nonempty");
  return comm_time(model, p, bytes, group.size(), topo.same_node(group));
}

enum class SpVariant { Ulysses, CP };
enum class ZeroStage { None, Z2, Z3 };

struct LlmDegrees {
  int dp = 1, tp = 1, pp = 1, sp = 1;
  SpVariant sp_variant = SpVariant::Ulysses;
  int ep = 1;  // folded into dp; no dedicated cost model
};

struct EncoderDegrees {
  int dp = 1, ulysses_sp = 1;
  int pp = 1;  // must stay 1
  ZeroStage zero_stage = ZeroStage::None;
};

struct ParallelLayout {
  LlmDegrees llm;
  EncoderDegrees encoder;
  std::vector<std::vector<std::string>> colocation;  // stage -> encoder names
  Tokens lssp_eta = 1;
  Tokens max_seq_len = 1;
  int reorder_group_size = 1;

  // GPUs behind one pipeline-stage worker of one replica.
  int gpus_per_stage_worker() const { return llm.tp * llm.sp; }
};

struct Violation {
  std::string group;
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

inline std::vector<int> llm_tp_group(const ParallelLayout& l, int pp, int dp, int sp) {
  std::vector<int> g;
  for (int t = 0; t < l.llm.tp; ++t) g.push_back(((pp * l.llm.dp + dp) * l.llm.sp + sp) * l.llm.tp + t);
  return g;
}

// All GPUs of stage `pp` in replica `dp` (TP x SP block).
inline std::vector<int> llm_stage_worker_ranks(const ParallelLayout& l, int pp, int dp) {
  std::vector<int> g;
  for (int s = 0; s < l.llm.sp; ++s)
    for (int t = 0; t < l.llm.tp; ++t) g.push_back(((pp * l.llm.dp + dp) * l.llm.sp + s) * l.llm.tp + t);
  return g;
}

inline std::vector<int> llm_dp_group(const ParallelLayout& l, int pp, int sp, int tp) {
  std::vector<int> g;
  for (int d = 0; d < l.llm.dp; ++d) g.push_back(((pp * l.llm.dp + d) * l.llm.sp + sp) * l.llm.tp + tp);
  return g;
}

inline std::vector<int> encoder_sp_group(const ParallelLayout& l, int dp) {
  std::vector<int> g(static_cast<std::size_t>(l.encoder.ulysses_sp));
  std::iota(g.begin(), g.end(), dp * l.encoder.ulysses_sp);
  return g;
}

inline std::vector<std::vector<int>> reorder_groups(const ParallelLayout& l, const Topology& t) {
  std::vector<std::vector<int>> out;
  const int n = t.total_ranks();
  const int g = std::max(1, l.reorder_group_size);
  for (int start = 0; start + g <= n; start += g) {
    std::vector<int> grp(static_cast<std::size_t>(g));
    std::iota(grp.begin(), grp.end(), start);
    out.push_back(std::move(grp));
  }
  return out;
}

inline std::string group_name(std::string_view kind, std::span<const int> ranks) {
  std::string s(kind);
  s += " [";
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(ranks[i]);
  }
  return s + "]";
}

inline std::vector<Violation> validate_layout(const Topology& topo, const ParallelLayout& l) {
  std::vector<Violation> v;
  const int total = topo.total_ranks();
  if (topo.nodes < 1 || topo.gpus_per_node < 1) v.push_back({"topology", "nodes and gpus_per_node must be >= 1"});

  const auto& m = l.llm;
  if (m.dp < 1 || m.tp < 1 || m.pp < 1 || m.sp < 1 || m.ep < 1)
    v.push_back({"llm", "all LLM parallel degrees must be >= 1"});
  else if (m.dp * m.tp * m.pp * m.sp != total)
    v.push_back({"llm", "dp*tp*pp*sp = " + std::to_string(m.dp * m.tp * m.pp * m.sp) +
                            " does not equal total ranks " + std::to_string(total)});

  const auto& e = l.encoder;
  if (e.pp != 1) v.push_back({"encoder", "encoder pipeline parallelism is not supported"});
  if (e.dp < 1 || e.ulysses_sp < 1)
    v.push_back({"encoder", "encoder degrees must be >= 1"});
  else if (e.dp * e.ulysses_sp != total)
    v.push_back({"encoder", "encoder dp*ulysses_sp = " + std::to_string(e.dp * e.ulysses_sp) +
                                " does not span all " + std::to_string(total) + " ranks"});

  if (static_cast<int>(l.colocation.size()) != m.pp)
    v.push_back({"colocation", "colocation lists " + std::to_string(l.colocation.size()) +
                                   " stages, pipeline has " + std::to_string(m.pp)});
  for (std::size_t s = 1; s < l.colocation.size(); ++s)
    if (l.colocation[s] != l.colocation[0])
      v.push_back({"colocation stage " + std::to_string(s), "heterogeneous encoder assignment"});
  if (!l.colocation.empty() && l.colocation[0].empty())
    v.push_back({"colocation", "stages have no colocated encoder"});

  const bool llm_ok = m.dp >= 1 && m.tp >= 1 && m.pp >= 1 && m.sp >= 1 && m.dp * m.tp * m.pp * m.sp == total;
  if (llm_ok) {
    for (int p = 0; p < m.pp; ++p)
      for (int d = 0; d < m.dp; ++d)
        for (int s = 0; s < m.sp; ++s) {
          auto g = llm_tp_group(l, p, d, s);
          if (!topo.same_node(g)) v.push_back({group_name("llm tp group", g), "LLM TP group crosses nodes"});
        }
  }
  if (e.dp >= 1 && e.ulysses_sp >= 1 && e.dp * e.ulysses_sp == total) {
    for (int d = 0; d < e.dp; ++d) {
      auto g = encoder_sp_group(l, d);
      if (!topo.same_node(g)) {
        v.push_back({group_name("encoder sp group", g), "encoder SP group crosses nodes"});
        break;
      }
    }
  }

  if (l.lssp_eta < 1 || l.lssp_eta > l.max_seq_len)
    v.push_back({"lssp_eta", "eta " + std::to_string(l.lssp_eta) + " outside [1, " +
                                 std::to_string(l.max_seq_len) + "]"});

  const int g = l.reorder_group_size;
  if (g < 1 || total % g != 0) {
    v.push_back({"reorder_group_size", "group size must divide total ranks"});
  } else {
    const bool in_node = g <= topo.gpus_per_node && topo.gpus_per_node % g == 0;
    const bool node_block = g % topo.gpus_per_node == 0;
    if (!in_node && !node_block)
      v.push_back({"reorder_group_size", "reordering groups must align with node boundaries"});
  }
  return v;
}

enum class BaselineKind { UnimodalPrepended, Disaggregated, OptimusStatic };

struct BaselineLayout {
  BaselineKind kind = BaselineKind::UnimodalPrepended;
  int encoder_ranks = 0;  // Disaggregated only
};

inline std::vector<Violation> validate_baseline(const Topology& topo, const BaselineLayout& b,
                                                const ParallelLayout& llm_layout) {
  std::vector<Violation> v;
  if (b.kind != BaselineKind::Disaggregated) return v;
  const auto& m = llm_layout.llm;
  if (b.encoder_ranks < 1) v.push_back({"disaggregated", "encoder_ranks must be >= 1"});
  if (b.encoder_ranks + m.dp * m.tp * m.pp * m.sp != topo.total_ranks())
    v.push_back({"disaggregated", "encoder ranks + LLM ranks must equal total ranks"});
  if (b.encoder_ranks % std::max(1, llm_layout.gpus_per_stage_worker()) != 0)
    v.push_back({"disaggregated", "encoder_ranks must be a multiple of tp*sp"});
  return v;
}

struct ProxyCluster {
  Topology topology;
  ParallelLayout layout;
  int global_batch_size = 0;
};

// Divides DP degrees, node count and global batch by `factor`; everything
// that shapes a single replica's schedule stays fixed.
inline ProxyCluster scale_down_proxy(const Topology& topo, const ParallelLayout& layout,
                                     int global_batch_size, int factor) {
  if (factor < 1) throw ArgumentError("scale-down factor must be >= 1");
  auto need = [&](int v, const char* what) {
    if (v % factor != 0)
      throw ArgumentError(std::string("scale-down factor ") + std::to_string(factor) +
                          " does not divide " + what + " (" + std::to_string(v) + ")");
  };
  need(layout.llm.dp, "llm.dp");
  need(layout.encoder.dp, "encoder.dp");
  need(global_batch_size, "global batch size");
  need(topo.nodes, "node count");
  ProxyCluster p{topo, layout, global_batch_size / factor};
  p.topology.nodes /= factor;
  p.layout.llm.dp /= factor;
  p.layout.encoder.dp /= factor;
  return p;
}

}  // namespace mmsim
