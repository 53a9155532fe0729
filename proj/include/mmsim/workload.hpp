#pragma once

// Synthetic multimodal workload: dataset descriptors, mixture recipes that
// drift across training phases, per-step sample draws and hybrid packing of
// variable-length samples into fixed-capacity sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmsim/common.hpp"

namespace mmsim {

// Length distribution over encoded sample length (tokens).
struct LengthDist {
  enum class Family { LogNormal, Histogram };
  Family family = Family::LogNormal;
  double mean = 1.0;
  double p95 = 1.0;
  // Histogram family: (bin upper edge in tokens, weight). Draws are uniform
  // inside a bin.
  std::vector<std::pair<Tokens, double>> histogram;
};

// Lognormal (mu, sigma) whose mean and 95th percentile match the inputs.
// Takes the smaller sigma root; throws when no lognormal fits.
inline std::pair<double, double> fit_lognormal(double mean, double p95) {
  constexpr double z95 = 1.6448536269514722;
  if (mean <= 0 || p95 <= 0) throw ConfigError("lognormal fit needs positive mean and p95");
  if (p95 <= mean) {
    // Degenerate spread: nearly constant lengths.
    return {std::log(mean), 1e-9};
  }
  const double gap = std::log(p95) - std::log(mean);
  const double disc = z95 * z95 - 2.0 * gap;
  if (disc < 0) throw ConfigError("p95/mean ratio too large for a lognormal fit");
  const double sigma = z95 - std::sqrt(disc);
  return {std::log(mean) - 0.5 * sigma * sigma, sigma};
}

struct DatasetDescriptor {
  std::string name;
  Modality modality = Modality::Text;
  LengthDist length_dist;
  Tokens mean_len = 1;
  Tokens max_len = 1;
};

using DatasetRegistry = std::map<std::string, DatasetDescriptor>;

inline void validate_dataset(const DatasetDescriptor& d) {
  if (d.mean_len <= 0) throw ConfigError("dataset '" + d.name + "': mean_len must be > 0");
  if (d.max_len < d.mean_len) throw ConfigError("dataset '" + d.name + "': max_len < mean_len");
  if (d.length_dist.family == LengthDist::Family::Histogram && d.length_dist.histogram.empty())
    throw ConfigError("dataset '" + d.name + "': empty histogram");
}

struct MixtureRecipe {
  std::vector<std::pair<std::string, double>> entries;

  double ratio_of(const std::string& name) const {
    for (const auto& [n, r] : entries)
      if (n == name) return r;
    return 0.0;
  }
};

inline void validate_recipe(const MixtureRecipe& recipe, const DatasetRegistry& registry) {
  double sum = 0;
  for (const auto& [name, ratio] : recipe.entries) {
    if (!registry.contains(name)) throw ConfigError("unknown dataset '" + name + "'");
    if (ratio < 0) throw ConfigError("negative ratio for dataset '" + name + "'");
    sum += ratio;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mixture ratios must sum to 1");
}

// Builds a recipe from unnormalized weights.
inline MixtureRecipe normalized_recipe(std::vector<std::pair<std::string, double>> weights) {
  double sum = 0;
  for (const auto& w : weights) sum += w.second;
  if (sum <= 0) throw ConfigError("mixture weights sum to zero");
  for (auto& w : weights) w.second /= sum;
  return MixtureRecipe{std::move(weights)};
}

struct PhaseSchedule {
  enum class Interpolation { Step, Linear };
  struct Phase {
    std::int64_t start_step = 0;
    MixtureRecipe recipe;
  };
  std::vector<Phase> phases;
  Interpolation interpolation = Interpolation::Step;
};

inline void validate_schedule(const PhaseSchedule& s, const DatasetRegistry& registry) {
  if (s.phases.empty()) throw ConfigError("phase schedule has no phases");
  if (s.phases.front().start_step != 0) throw ConfigError("phase 0 must start at step 0");
  for (std::size_t i = 1; i < s.phases.size(); ++i)
    if (s.phases[i].start_step <= s.phases[i - 1].start_step)
      throw ConfigError("phase start steps must be strictly increasing");
  for (const auto& p : s.phases) validate_recipe(p.recipe, registry);
}

// The recipe in force at `step`.
inline MixtureRecipe recipe_at(const PhaseSchedule& s, std::int64_t step) {
  if (step < 0) throw ArgumentError("step must be >= 0");
  if (s.phases.empty()) throw ConfigError("phase schedule has no phases");
  std::size_t i = 0;
  while (i + 1 < s.phases.size() && s.phases[i + 1].start_step <= step) ++i;
  if (s.interpolation == PhaseSchedule::Interpolation::Step || i + 1 == s.phases.size())
    return s.phases[i].recipe;

  const auto& a = s.phases[i];
  const auto& b = s.phases[i + 1];
  const double t = static_cast<double>(step - a.start_step) /
                   static_cast<double>(b.start_step - a.start_step);
  // Union of dataset names, in first-seen order.
  std::vector<std::string> names;
  for (const auto& e : a.recipe.entries) names.push_back(e.first);
  for (const auto& e : b.recipe.entries)
    if (std::find(names.begin(), names.end(), e.first) == names.end()) names.push_back(e.first);
  MixtureRecipe out;
  for (const auto& n : names)
    out.entries.emplace_back(n, (1.0 - t) * a.recipe.ratio_of(n) + t * b.recipe.ratio_of(n));
  return out;
}

struct Sample {
  std::int64_t id = 0;
  Modality modality = Modality::Text;
  std::string dataset;
  Tokens length = 1;
  int origin_rank = -1;
  int origin_pos = -1;

  friend bool operator==(const Sample&, const Sample&) = default;
};

inline Tokens draw_length(const DatasetDescriptor& d, std::mt19937_64& rng) {
  double x = 0;
  if (d.length_dist.family == LengthDist::Family::LogNormal) {
    const auto [mu, sigma] = fit_lognormal(d.length_dist.mean, d.length_dist.p95);
    std::lognormal_distribution<double> dist(mu, sigma);
    x = dist(rng);
  } else {
    const auto& h = d.length_dist.histogram;
    std::vector<double> w;
    w.reserve(h.size());
    for (const auto& b : h) w.push_back(b.second);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const std::size_t bin = pick(rng);
    const double lo = bin == 0 ? 1.0 : static_cast<double>(h[bin - 1].first);
    const double hi = static_cast<double>(h[bin].first);
    std::uniform_real_distribution<double> u(lo, hi);
    x = u(rng);
  }
  const auto len = static_cast<Tokens>(std::llround(x));
  return std::clamp<Tokens>(len, 1, d.max_len);
}

// Draws n i.i.d. samples from the recipe in force at `step`. The stream is a
// pure function of (seed, step, n); ids are step-scoped so they stay unique
// across a run.
inline std::vector<Sample> sample_step(const DatasetRegistry& registry, const PhaseSchedule& schedule,
                                       std::int64_t step, std::int64_t n, std::uint64_t seed) {
  if (step < 0) throw ArgumentError("step must be >= 0");
  if (n < 1) throw ArgumentError("sample count must be >= 1");
  const MixtureRecipe recipe = recipe_at(schedule, step);
  validate_recipe(recipe, registry);

  std::vector<const DatasetDescriptor*> datasets;
  std::vector<double> weights;
  for (const auto& [name, ratio] : recipe.entries) {
    datasets.push_back(&registry.at(name));
    weights.push_back(ratio);
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  std::mt19937_64 rng(seq);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const DatasetDescriptor& d = *datasets[pick(rng)];
    Sample s;
    s.id = (step << 32) + i;
    s.modality = d.modality;
    s.dataset = d.name;
    s.length = draw_length(d, rng);
    out.push_back(std::move(s));
  }
  return out;
}

// Distributes samples over data-loader ranks in draw order, stamping the
// (origin_rank, origin_pos) pair used later for order restoration.
inline void assign_to_loaders(std::span<Sample> samples, int ranks) {
  if (ranks < 1) throw ArgumentError("loader rank count must be >= 1");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].origin_rank = static_cast<int>(i % static_cast<std::size_t>(ranks));
    samples[i].origin_pos = static_cast<int>(i / static_cast<std::size_t>(ranks));
  }
}

struct PackedSequence {
  struct Span {
    std::int64_t sample_id = 0;
    Tokens tokens = 0;
    friend bool operator==(const Span&, const Span&) = default;
  };
  Tokens capacity = 0;
  std::vector<Span> spans;
  Tokens fill = 0;

  friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

// First-fit-decreasing packing across modalities. Samples are never split.
inline std::vector<PackedSequence> hybrid_pack(std::span<const Sample> samples, Tokens capacity) {
  if (capacity < 1) throw ArgumentError("capacity must be >= 1");
  for (const auto& s : samples)
    if (s.length > capacity)
      throw PackingError("sample " + std::to_string(s.id) + " (" + std::to_string(s.length) +
                         " tokens) exceeds capacity " + std::to_string(capacity));

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].length != samples[b].length) return samples[a].length > samples[b].length;
    return samples[a].id < samples[b].id;
  });

  std::vector<PackedSequence> bins;
  for (std::size_t idx : order) {
    const Sample& s = samples[idx];
    auto it = std::find_if(bins.begin(), bins.end(),
                           [&](const PackedSequence& b) { return b.fill + s.length <= capacity; });
    if (it == bins.end()) {
      bins.push_back(PackedSequence{capacity, {}, 0});
      it = std::prev(bins.end());
    }
    it->spans.push_back({s.id, s.length});
    it->fill += s.length;
  }
  return bins;
}

struct Microbatch {
  int replica = 0;
  int index = 0;             // microbatch index within the replica
  std::size_t first = 0;     // first sequence index in GlobalBatch::sequences
  std::size_t count = 0;
};

struct GlobalBatch {
  std::int64_t step = 0;
  std::vector<PackedSequence> sequences;
  std::vector<Microbatch> microbatches;
  int dp_degree = 1;
  int microbatches_per_replica = 0;

  const Microbatch& microbatch(int replica, int index) const {
    return microbatches.at(static_cast<std::size_t>(replica * microbatches_per_replica + index));
  }
  Tokens tokens() const {
    Tokens t = 0;
    for (const auto& s : sequences) t += s.fill;
    return t;
  }
};

struct BatchAssembly {
  GlobalBatch batch;
  std::vector<PackedSequence> carryover;
};

// Takes the first gbs sequences as the step's batch; the rest carry over.
inline BatchAssembly build_global_batch(std::vector<PackedSequence> sequences, int global_batch_size,
                                        int dp_degree, int microbatch_size, std::int64_t step = 0) {
  if (global_batch_size < 1 || dp_degree < 1 || microbatch_size < 1)
    throw ConfigError("batch sizes and dp degree must be >= 1");
  if (global_batch_size % (dp_degree * microbatch_size) != 0)
    throw ConfigError("global batch size " + std::to_string(global_batch_size) +
                      " not divisible by dp*microbatch_size = " +
                      std::to_string(dp_degree * microbatch_size));
  if (sequences.size() < static_cast<std::size_t>(global_batch_size))
    throw ArgumentError("need " + std::to_string(global_batch_size) + " sequences, have " +
                        std::to_string(sequences.size()));

  BatchAssembly out;
  out.carryover.assign(std::make_move_iterator(sequences.begin() + global_batch_size),
                       std::make_move_iterator(sequences.end()));
  sequences.resize(static_cast<std::size_t>(global_batch_size));
  out.batch.step = step;
  out.batch.sequences = std::move(sequences);
  out.batch.dp_degree = dp_degree;
  const int per_replica = global_batch_size / dp_degree;
  out.batch.microbatches_per_replica = per_replica / microbatch_size;
  for (int r = 0; r < dp_degree; ++r)
    for (int m = 0; m < out.batch.microbatches_per_replica; ++m)
      out.batch.microbatches.push_back(
          Microbatch{r, m,
                     static_cast<std::size_t>(r * per_replica + m * microbatch_size),
                     static_cast<std::size_t>(microbatch_size)});
  return out;
}

}  // namespace mmsim
