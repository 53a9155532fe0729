#pragma once

// Karmarkar-Karp partitioning, grouped reordering with exact restoration,
// and per-stage loader filtering.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

struct Partition {
  std::vector<int> assignment;  // weight index -> group
  std::vector<std::int64_t> loads;

  std::int64_t max_load() const { return loads.empty() ? 0 : *std::max_element(loads.begin(), loads.end()); }
  std::int64_t spread() const {
    if (loads.empty()) return 0;
    auto [lo, hi] = std::minmax_element(loads.begin(), loads.end());
    return *hi - *lo;
  }
};

// g-way largest differencing. Each partial solution is a g-tuple of subsets;
// the two partials with the largest spread are merged by pairing the heaviest
// subset of one with the lightest of the other. Ties go to the partial
// created first (original weights in index order).
inline Partition kk_partition(std::span<const std::int64_t> weights, int g) {
  if (g < 1) throw ArgumentError("group count must be >= 1");
  if (weights.empty()) throw ArgumentError("weights must be nonempty");
  for (auto w : weights)
    if (w < 0) throw ArgumentError("weights must be nonnegative");

  struct Subset {
    std::int64_t sum = 0;
    std::vector<int> items;
  };
  struct Partial {
    std::vector<Subset> subsets;  // sorted by sum descending
    int order = 0;
    std::int64_t diff() const { return subsets.front().sum - subsets.back().sum; }
  };
  auto normalize = [](Partial& p) {
    std::stable_sort(p.subsets.begin(), p.subsets.end(), [](const Subset& a, const Subset& b) {
      if (a.sum != b.sum) return a.sum > b.sum;
      const int ma = a.items.empty() ? INT32_MAX : *std::min_element(a.items.begin(), a.items.end());
      const int mb = b.items.empty() ? INT32_MAX : *std::min_element(b.items.begin(), b.items.end());
      return ma < mb;
    });
  };

  const auto ug = static_cast<std::size_t>(g);
  std::vector<Partial> pool;
  int order = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Partial p;
    p.subsets.resize(ug);
    p.subsets[0].sum = weights[i];
    p.subsets[0].items.push_back(static_cast<int>(i));
    p.order = order++;
    normalize(p);
    pool.push_back(std::move(p));
  }
  auto before = [](const Partial& a, const Partial& b) {
    if (a.diff() != b.diff()) return a.diff() > b.diff();
    return a.order < b.order;
  };
  while (pool.size() > 1) {
    std::stable_sort(pool.begin(), pool.end(), before);
    Partial a = std::move(pool[0]);
    Partial b = std::move(pool[1]);
    pool.erase(pool.begin(), pool.begin() + 2);
    Partial merged;
    merged.subsets.resize(ug);
    for (std::size_t k = 0; k < ug; ++k) {
      auto& dst = merged.subsets[k];
      const auto& x = a.subsets[k];
      const auto& y = b.subsets[ug - 1 - k];
      dst.sum = x.sum + y.sum;
      dst.items = x.items;
      dst.items.insert(dst.items.end(), y.items.begin(), y.items.end());
    }
    merged.order = order++;
    normalize(merged);
    pool.push_back(std::move(merged));
  }

  Partition out;
  out.assignment.assign(weights.size(), 0);
  out.loads.assign(ug, 0);
  const auto& final_subsets = pool.front().subsets;
  for (std::size_t k = 0; k < ug; ++k) {
    out.loads[k] = final_subsets[k].sum;
    for (int i : final_subsets[k].items) out.assignment[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

// Round-robin by arrival order, the comparison point for kk_partition.
inline Partition round_robin_partition(std::span<const std::int64_t> weights, int g) {
  if (g < 1) throw ArgumentError("group count must be >= 1");
  Partition out;
  out.assignment.resize(weights.size());
  out.loads.assign(static_cast<std::size_t>(g), 0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(g));
    out.assignment[i] = k;
    out.loads[static_cast<std::size_t>(k)] += weights[i];
  }
  return out;
}

// max/mean of a load vector; 1 for an all-zero vector.
inline double imbalance(std::span<const std::int64_t> loads) {
  if (loads.empty()) return 1.0;
  const double total = static_cast<double>(std::accumulate(loads.begin(), loads.end(), std::int64_t{0}));
  if (total <= 0) return 1.0;
  const double mean = total / static_cast<double>(loads.size());
  return static_cast<double>(*std::max_element(loads.begin(), loads.end())) / mean;
}

// ---------------------------------------------------------------------------
// Grouped reordering.

struct ReorderGroup {
  std::vector<int> ranks;
  // [member][microbatch] -> samples in loader order.
  std::vector<std::vector<std::vector<Sample>>> samples;
};

struct SampleOrigin {
  int member = 0;
  int mb = 0;
  int pos = 0;
  friend bool operator==(const SampleOrigin&, const SampleOrigin&) = default;
};

struct ReorderRecord {
  int members = 0;
  int microbatches = 0;
  int window = 1;
  // [member][mb] -> original list size.
  std::vector<std::vector<int>> sizes;
  // [window index][member] -> origin of each output slot.
  std::vector<std::vector<std::vector<SampleOrigin>>> origins;
  std::uint64_t checksum = 0;
};

inline std::uint64_t record_checksum(const ReorderRecord& r) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::int64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(r.members);
  mix(r.microbatches);
  mix(r.window);
  for (const auto& m : r.sizes)
    for (int s : m) mix(s);
  for (const auto& w : r.origins)
    for (const auto& m : w) {
      mix(static_cast<std::int64_t>(m.size()));
      for (const auto& o : m) {
        mix(o.member);
        mix(o.mb);
        mix(o.pos);
      }
    }
  return h;
}

struct ReorderStats {
  std::vector<std::int64_t> pre_loads;   // tokens per member, summed over windows
  std::vector<std::int64_t> post_loads;
  double pre_imbalance = 1.0;   // mean over windows of max/mean
  double post_imbalance = 1.0;
  Bytes metadata_bytes = 0;     // all-gather of per-sample lengths, per member
  Bytes alltoall_bytes = 0;     // largest per-member send volume, summed over windows
  Tokens moved_tokens = 0;
};

struct ReorderResult {
  // [window index][member] -> samples assigned to that member.
  std::vector<std::vector<std::vector<Sample>>> assigned;
  ReorderRecord record;
  ReorderStats stats;
};

// Pools each window of consecutive microbatches across the group, splits the
// pool with kk_partition (g = members) and hands each partition to the member
// that already holds most of its tokens.
inline ReorderResult grouped_reorder(const ReorderGroup& group, int microbatch_window, Bytes bytes_per_token = 1,
                                     Bytes metadata_bytes_per_sample = 8) {
  if (microbatch_window < 1) throw ArgumentError("microbatch window must be >= 1");
  const int g = static_cast<int>(group.samples.size());
  if (g < 1) throw ArgumentError("reorder group has no members");
  const int mbs = static_cast<int>(group.samples.front().size());
  for (const auto& m : group.samples)
    if (static_cast<int>(m.size()) != mbs) throw ArgumentError("members disagree on microbatch count");

  ReorderResult out;
  auto& rec = out.record;
  rec.members = g;
  rec.microbatches = mbs;
  rec.window = microbatch_window;
  rec.sizes.assign(static_cast<std::size_t>(g), std::vector<int>(static_cast<std::size_t>(mbs), 0));
  for (int m = 0; m < g; ++m)
    for (int b = 0; b < mbs; ++b)
      rec.sizes[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] =
          static_cast<int>(group.samples[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)].size());

  auto& st = out.stats;
  st.pre_loads.assign(static_cast<std::size_t>(g), 0);
  st.post_loads.assign(static_cast<std::size_t>(g), 0);
  double pre_sum = 0, post_sum = 0;
  int windows = 0;

  for (int w0 = 0; w0 < mbs; w0 += microbatch_window) {
    const int w1 = std::min(mbs, w0 + microbatch_window);
    std::vector<SampleOrigin> pool;
    std::vector<std::int64_t> weights;
    std::vector<std::int64_t> pre(static_cast<std::size_t>(g), 0);
    for (int m = 0; m < g; ++m)
      for (int b = w0; b < w1; ++b) {
        const auto& list = group.samples[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)];
        for (std::size_t p = 0; p < list.size(); ++p) {
          pool.push_back({m, b, static_cast<int>(p)});
          weights.push_back(list[p].length);
          pre[static_cast<std::size_t>(m)] += list[p].length;
        }
      }
    std::vector<std::vector<SampleOrigin>> slots(static_cast<std::size_t>(g));
    std::vector<std::int64_t> post(static_cast<std::size_t>(g), 0);
    if (!pool.empty()) {
      const Partition part = kk_partition(weights, g);
      // overlap[k][m] = tokens of partition k already resident on member m.
      std::vector<std::vector<std::int64_t>> overlap(static_cast<std::size_t>(g),
                                                     std::vector<std::int64_t>(static_cast<std::size_t>(g), 0));
      for (std::size_t i = 0; i < pool.size(); ++i)
        overlap[static_cast<std::size_t>(part.assignment[i])][static_cast<std::size_t>(pool[i].member)] += weights[i];
      // Greedy maximum-overlap matching, heaviest overlaps first.
      std::vector<std::tuple<std::int64_t, int, int>> cand;
      for (int k = 0; k < g; ++k)
        for (int m = 0; m < g; ++m) cand.emplace_back(-overlap[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)], k, m);
      std::sort(cand.begin(), cand.end());
      std::vector<int> owner(static_cast<std::size_t>(g), -1);
      std::vector<bool> taken(static_cast<std::size_t>(g), false);
      for (const auto& [neg, k, m] : cand) {
        if (owner[static_cast<std::size_t>(k)] >= 0 || taken[static_cast<std::size_t>(m)]) continue;
        owner[static_cast<std::size_t>(k)] = m;
        taken[static_cast<std::size_t>(m)] = true;
      }
      std::vector<Bytes> sent(static_cast<std::size_t>(g), 0);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const int dst = owner[static_cast<std::size_t>(part.assignment[i])];
        slots[static_cast<std::size_t>(dst)].push_back(pool[i]);
        post[static_cast<std::size_t>(dst)] += weights[i];
        if (dst != pool[i].member) {
          st.moved_tokens += weights[i];
          sent[static_cast<std::size_t>(pool[i].member)] += weights[i] * bytes_per_token;
        }
      }
      st.alltoall_bytes += *std::max_element(sent.begin(), sent.end());
      st.metadata_bytes += static_cast<Bytes>(pool.size()) * metadata_bytes_per_sample;
    }
    std::vector<std::vector<Sample>> assigned(static_cast<std::size_t>(g));
    for (int m = 0; m < g; ++m)
      for (const auto& o : slots[static_cast<std::size_t>(m)])
        assigned[static_cast<std::size_t>(m)].push_back(
            group.samples[static_cast<std::size_t>(o.member)][static_cast<std::size_t>(o.mb)][static_cast<std::size_t>(o.pos)]);
    for (int m = 0; m < g; ++m) {
      st.pre_loads[static_cast<std::size_t>(m)] += pre[static_cast<std::size_t>(m)];
      st.post_loads[static_cast<std::size_t>(m)] += post[static_cast<std::size_t>(m)];
    }
    pre_sum += imbalance(pre);
    post_sum += imbalance(post);
    ++windows;
    rec.origins.push_back(std::move(slots));
    out.assigned.push_back(std::move(assigned));
  }
  if (windows > 0) {
    st.pre_imbalance = pre_sum / windows;
    st.post_imbalance = post_sum / windows;
  }
  rec.checksum = record_checksum(rec);
  return out;
}

inline void verify_record(const ReorderRecord& r) {
  if (record_checksum(r) != r.checksum) throw IntegrityError("reorder record checksum mismatch");
  std::vector<std::vector<std::vector<char>>> hit(static_cast<std::size_t>(r.members));
  if (static_cast<int>(r.sizes.size()) != r.members) throw IntegrityError("reorder record member count mismatch");
  for (int m = 0; m < r.members; ++m) {
    hit[static_cast<std::size_t>(m)].resize(r.sizes[static_cast<std::size_t>(m)].size());
    for (std::size_t b = 0; b < r.sizes[static_cast<std::size_t>(m)].size(); ++b)
      hit[static_cast<std::size_t>(m)][b].assign(static_cast<std::size_t>(r.sizes[static_cast<std::size_t>(m)][b]), 0);
  }
  for (const auto& w : r.origins)
    for (const auto& m : w)
      for (const auto& o : m) {
        if (o.member < 0 || o.member >= r.members || o.mb < 0 || o.mb >= r.microbatches || o.pos < 0 ||
            o.pos >= r.sizes[static_cast<std::size_t>(o.member)][static_cast<std::size_t>(o.mb)])
          throw IntegrityError("reorder record references a slot outside the original layout");
        auto& c = hit[static_cast<std::size_t>(o.member)][static_cast<std::size_t>(o.mb)][static_cast<std::size_t>(o.pos)];
        if (c) throw IntegrityError("reorder record maps two outputs to one origin");
        c = 1;
      }
  for (const auto& m : hit)
    for (const auto& b : m)
      if (std::find(b.begin(), b.end(), 0) != b.end()) throw IntegrityError("reorder record leaves an origin unmapped");
}

// Inverse of grouped_reorder for any per-sample payload (embeddings on the
// forward path, gradients on the backward path). Input is indexed like
// ReorderResult::assigned; output like ReorderGroup::samples.
template <typename T>
std::vector<std::vector<std::vector<T>>> restore_order(const ReorderRecord& record,
                                                       const std::vector<std::vector<std::vector<T>>>& reordered) {
  verify_record(record);
  if (reordered.size() != record.origins.size()) throw IntegrityError("payload window count does not match record");
  std::vector<std::vector<std::vector<T>>> out(static_cast<std::size_t>(record.members));
  for (int m = 0; m < record.members; ++m) {
    out[static_cast<std::size_t>(m)].resize(static_cast<std::size_t>(record.microbatches));
    for (int b = 0; b < record.microbatches; ++b)
      out[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)].resize(
          static_cast<std::size_t>(record.sizes[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)]));
  }
  for (std::size_t w = 0; w < record.origins.size(); ++w) {
    if (reordered[w].size() != record.origins[w].size()) throw IntegrityError("payload member count does not match record");
    for (std::size_t m = 0; m < record.origins[w].size(); ++m) {
      const auto& src = reordered[w][m];
      const auto& org = record.origins[w][m];
      if (src.size() != org.size()) throw IntegrityError("payload size does not match record");
      for (std::size_t i = 0; i < org.size(); ++i)
        out[static_cast<std::size_t>(org[i].member)][static_cast<std::size_t>(org[i].mb)][static_cast<std::size_t>(org[i].pos)] = src[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero-redundancy loading.

struct FilterResult {
  std::vector<int> microbatches;  // per-replica microbatch indices this stage fetches
  Bytes io_bytes = 0;             // bytes fetched by this stage's loaders
  Bytes unfiltered_io_bytes = 0;  // bytes if the stage loaded the full batch
};

// Stage s fetches encoder microbatches {s, s+pp, ...} of every replica.
inline FilterResult zero_redundancy_filter(const GlobalBatch& batch, int stage, int pp, Bytes bytes_per_token = 1) {
  if (pp < 1 || stage < 0 || stage >= pp) throw ArgumentError("stage index out of range");
  FilterResult out;
  for (int i = stage; i < batch.microbatches_per_replica; i += pp) out.microbatches.push_back(i);
  for (int r = 0; r < batch.dp_degree; ++r)
    for (int i = 0; i < batch.microbatches_per_replica; ++i) {
      const auto& mb = batch.microbatch(r, i);
      Tokens t = 0;
      for (std::size_t k = 0; k < mb.count; ++k) t += batch.sequences[mb.first + k].fill;
      out.unfiltered_io_bytes += t * bytes_per_token;
      if (i % pp == stage) out.io_bytes += t * bytes_per_token;
    }
  return out;
}

}  // namespace mmsim
