#pragma once

// Embedding/gradient resharding from encoder ranks into an LLM SP group.
//
// Ulysses groups shard every sequence uniformly and dispatch with one
// symmetric all-to-all. CP groups shard only long samples (head-tail paired
// chunks); short samples stay whole and are spread over ranks (hybrid-DP
// style), dispatched with an all-reduce over a reused buffer.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmsim/balance.hpp"
#include "mmsim/common.hpp"
#include "mmsim/model_cost.hpp"
#include "mmsim/topology.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

enum class ReshardVariant { UlyssesUniform, CpHybrid };

struct ShardPiece {
  int rank = 0;
  Tokens begin = 0;  // sample-local token range [begin, end)
  Tokens end = 0;
  friend bool operator==(const ShardPiece&, const ShardPiece&) = default;
};

struct SampleShards {
  std::int64_t sample_id = 0;
  int sequence = 0;
  Tokens length = 0;
  bool sharded = false;
  std::vector<ShardPiece> pieces;
};

struct ReshardPlan {
  ReshardVariant variant = ReshardVariant::UlyssesUniform;
  int group_size = 1;
  Bytes bytes_per_token = 1;
  std::vector<SampleShards> samples;
  Primitive dispatch = Primitive::AllToAll;
  // [sequence][rank] tokens received.
  std::vector<std::vector<Tokens>> rank_tokens;
  bool degenerate = false;  // some rank received an empty shard of a sequence

  std::size_t sharded_count() const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const SampleShards& s) { return s.sharded; }));
  }
};

// Contiguous split of n tokens into g ranges; the first n % g get one more.
inline std::vector<std::pair<Tokens, Tokens>> even_ranges(Tokens n, int g) {
  std::vector<std::pair<Tokens, Tokens>> out;
  const Tokens base = n / g, extra = n % g;
  Tokens at = 0;
  for (int k = 0; k < g; ++k) {
    const Tokens len = base + (k < extra ? 1 : 0);
    out.emplace_back(at, at + len);
    at += len;
  }
  return out;
}

// Causal attention pairs of a contiguous range [a, b) of one sample.
inline double causal_pairs(Tokens a, Tokens b) {
  const double x = static_cast<double>(a), y = static_cast<double>(b);
  return (y * y - x * x) / 2.0;
}

inline ReshardPlan plan_reshard(std::span<const PackedSequence> sequences, int group_size, ReshardVariant variant,
                                Tokens cp_threshold = 0, Bytes bytes_per_token = 1) {
  if (group_size < 1) throw ArgumentError("SP group size must be >= 1");
  if (variant == ReshardVariant::CpHybrid && cp_threshold < 1) throw ArgumentError("cp_threshold must be >= 1");
  ReshardPlan plan;
  plan.variant = variant;
  plan.group_size = group_size;
  plan.bytes_per_token = bytes_per_token;
  plan.dispatch = variant == ReshardVariant::UlyssesUniform ? Primitive::AllToAll : Primitive::AllReduce;
  const auto g = static_cast<std::size_t>(group_size);

  for (std::size_t q = 0; q < sequences.size(); ++q) {
    const auto& seq = sequences[q];
    std::vector<Tokens> load(g, 0);
    if (variant == ReshardVariant::UlyssesUniform) {
      const auto shards = even_ranges(seq.fill, group_size);
      Tokens off = 0;
      for (const auto& span : seq.spans) {
        SampleShards s{span.sample_id, static_cast<int>(q), span.tokens, group_size > 1, {}};
        for (int k = 0; k < group_size; ++k) {
          const Tokens a = std::max(off, shards[static_cast<std::size_t>(k)].first);
          const Tokens b = std::min(off + span.tokens, shards[static_cast<std::size_t>(k)].second);
          if (a < b) s.pieces.push_back({k, a - off, b - off});
        }
        s.sharded = s.pieces.size() > 1;
        off += span.tokens;
        plan.samples.push_back(std::move(s));
      }
      for (int k = 0; k < group_size; ++k) {
        const auto& r = shards[static_cast<std::size_t>(k)];
        load[static_cast<std::size_t>(k)] = r.second - r.first;
      }
    } else {
      std::vector<double> attn(g, 0.0);
      std::vector<const PackedSequence::Span*> shorts;
      for (const auto& span : seq.spans) {
        if (span.tokens <= cp_threshold) {
          shorts.push_back(&span);
          continue;
        }
        // Head-tail pairing: 2g chunks, rank k takes chunks k and 2g-1-k, so
        // causal work per rank is equal up to rounding.
        SampleShards s{span.sample_id, static_cast<int>(q), span.tokens, true, {}};
        const auto chunks = even_ranges(span.tokens, 2 * group_size);
        for (int k = 0; k < group_size; ++k)
          for (int c : {k, 2 * group_size - 1 - k}) {
            const auto& r = chunks[static_cast<std::size_t>(c)];
            if (r.first < r.second) s.pieces.push_back({k, r.first, r.second});
            load[static_cast<std::size_t>(k)] += r.second - r.first;
            attn[static_cast<std::size_t>(k)] += causal_pairs(r.first, r.second);
          }
        plan.samples.push_back(std::move(s));
      }
      if (!shorts.empty()) {
        std::vector<std::int64_t> w;
        for (const auto* sp : shorts) w.push_back(sp->tokens);
        const Partition part = kk_partition(w, group_size);
        // Heaviest short group to the rank with the least residual load;
        // attention work breaks token ties.
        std::vector<int> groups(g), ranks(g);
        for (std::size_t k = 0; k < g; ++k) groups[k] = ranks[k] = static_cast<int>(k);
        std::stable_sort(groups.begin(), groups.end(), [&](int a, int b) {
          return part.loads[static_cast<std::size_t>(a)] > part.loads[static_cast<std::size_t>(b)];
        });
        std::stable_sort(ranks.begin(), ranks.end(), [&](int a, int b) {
          const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
          if (load[ua] != load[ub]) return load[ua] < load[ub];
          return attn[ua] < attn[ub];
        });
        std::vector<int> rank_of_group(g);
        for (std::size_t k = 0; k < g; ++k) rank_of_group[static_cast<std::size_t>(groups[k])] = ranks[k];
        for (std::size_t i = 0; i < shorts.size(); ++i) {
          const int r = rank_of_group[static_cast<std::size_t>(part.assignment[i])];
          SampleShards s{shorts[i]->sample_id, static_cast<int>(q), shorts[i]->tokens, false,
                         {{r, 0, shorts[i]->tokens}}};
          load[static_cast<std::size_t>(r)] += shorts[i]->tokens;
          plan.samples.push_back(std::move(s));
        }
      }
    }
    if (variant == ReshardVariant::UlyssesUniform && std::find(load.begin(), load.end(), Tokens{0}) != load.end())
      plan.degenerate = true;
    plan.rank_tokens.push_back(std::move(load));
  }
  return plan;
}

// Inverse gather: rebuilds each sample's token coverage from its pieces and
// returns sample id -> length. Throws when ranges overlap or leave gaps.
inline std::map<std::int64_t, Tokens> inverse_gather(const ReshardPlan& plan) {
  std::map<std::int64_t, Tokens> out;
  for (const auto& s : plan.samples) {
    auto pieces = s.pieces;
    std::sort(pieces.begin(), pieces.end(), [](const ShardPiece& a, const ShardPiece& b) { return a.begin < b.begin; });
    Tokens at = 0;
    for (const auto& p : pieces) {
      if (p.begin != at || p.end <= p.begin) throw IntegrityError("shard ranges of sample " + std::to_string(s.sample_id) + " are not contiguous");
      at = p.end;
    }
    if (at != s.length) throw IntegrityError("shard ranges of sample " + std::to_string(s.sample_id) + " do not cover it");
    if (!out.emplace(s.sample_id, s.length).second) throw IntegrityError("sample " + std::to_string(s.sample_id) + " planned twice");
  }
  return out;
}

struct DispatchEvent {
  int rank = 0;
  Primitive primitive = Primitive::AllToAll;
  Bytes bytes = 0;  // per-rank payload handed to the collective
  double seconds = 0;
};

struct DispatchCost {
  std::vector<DispatchEvent> events;
  double seconds = 0;  // slowest rank, summed over sequences
};

// `group` lists the LLM ranks of the SP group, used for link locality.
inline DispatchCost dispatch_cost(const ReshardPlan& plan, const CommModel& comm, const Topology& topo,
                                  std::span<const int> group) {
  if (static_cast<int>(group.size()) != plan.group_size) throw ArgumentError("group does not match plan size");
  DispatchCost out;
  for (const auto& loads : plan.rank_tokens) {
    Tokens total = 0, peak = 0;
    for (Tokens t : loads) {
      total += t;
      peak = std::max(peak, t);
    }
    if (total == 0) continue;
    double worst = 0;
    for (int k = 0; k < plan.group_size; ++k) {
      DispatchEvent e;
      e.rank = group[static_cast<std::size_t>(k)];
      e.primitive = plan.dispatch;
      // Ulysses: each rank holds its uniform shard of S; CP: buffer sized to the largest rank.
      e.bytes = (plan.dispatch == Primitive::AllToAll ? loads[static_cast<std::size_t>(k)] : peak) * plan.bytes_per_token;
      e.seconds = comm_time(comm, e.primitive, e.bytes, group, topo);
      worst = std::max(worst, e.seconds);
      out.events.push_back(e);
    }
    out.seconds += worst;
  }
  return out;
}

// Comparator for the rejected asymmetric dispatch: each rank sends its own
// (possibly skewed) payload; the collective finishes with the largest sender.
inline double asymmetric_alltoall_seconds(std::span<const Bytes> per_rank_bytes, const CommModel& comm,
                                          bool intra_node) {
  double worst = 0;
  for (Bytes b : per_rank_bytes)
    worst = std::max(worst, comm_time(comm, Primitive::AllToAll, b, per_rank_bytes.size(), intra_node));
  return worst;
}

inline double symmetric_alltoall_seconds(std::span<const Bytes> per_rank_bytes, const CommModel& comm,
                                         bool intra_node) {
  Bytes total = 0;
  for (Bytes b : per_rank_bytes) total += b;
  const auto g = static_cast<Bytes>(std::max<std::size_t>(1, per_rank_bytes.size()));
  return comm_time(comm, Primitive::AllToAll, (total + g - 1) / g, per_rank_bytes.size(), intra_node);
}

// Per-rank attention work in token pairs. Ulysses shards heads, so every rank
// sees each sample in full and does 1/g of it.
inline std::vector<double> attention_balance(const ReshardPlan& plan, bool causal = true) {
  std::vector<double> out(static_cast<std::size_t>(plan.group_size), 0.0);
  for (const auto& s : plan.samples) {
    if (plan.variant == ReshardVariant::UlyssesUniform) {
      const double full = causal ? causal_pairs(0, s.length) : static_cast<double>(s.length) * static_cast<double>(s.length);
      for (auto& v : out) v += full / plan.group_size;
      continue;
    }
    for (const auto& p : s.pieces)
      out[static_cast<std::size_t>(p.rank)] += causal ? causal_pairs(p.begin, p.end)
                                                     : static_cast<double>(p.end - p.begin) * static_cast<double>(s.length);
  }
  return out;
}

// Naive CP: every sequence cut into g contiguous shards regardless of sample
// boundaries; attention stays within samples.
inline std::vector<double> naive_cp_attention(std::span<const PackedSequence> sequences, int g, bool causal = true) {
  if (g < 1) throw ArgumentError("CP group size must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(g), 0.0);
  for (const auto& seq : sequences) {
    const auto shards = even_ranges(seq.fill, g);
    Tokens off = 0;
    for (const auto& span : seq.spans) {
      for (int k = 0; k < g; ++k) {
        const Tokens a = std::max(off, shards[static_cast<std::size_t>(k)].first);
        const Tokens b = std::min(off + span.tokens, shards[static_cast<std::size_t>(k)].second);
        if (a >= b) continue;
        out[static_cast<std::size_t>(k)] += causal ? causal_pairs(a - off, b - off)
                                                   : static_cast<double>(b - a) * static_cast<double>(span.tokens);
      }
      off += span.tokens;
    }
  }
  return out;
}

inline double max_min_ratio(std::span<const double> v) {
  if (v.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo <= 0) return *hi <= 0 ? 1.0 : std::numeric_limits<double>::infinity();
  return *hi / *lo;
}

}  // namespace mmsim
