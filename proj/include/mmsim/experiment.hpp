#pragma once

// Experiment orchestration: per-step workload draw, cost derivation for each
// architecture, simulation, and the per-point report record.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsim/balance.hpp"
#include "mmsim/baselines.hpp"
#include "mmsim/config.hpp"
#include "mmsim/engine.hpp"
#include "mmsim/lssp.hpp"
#include "mmsim/reshard.hpp"
#include "mmsim/schedule.hpp"

namespace mmsim {

// Image share split evenly over encoder-modality datasets, text share over
// text datasets.
inline MixtureRecipe mixture_recipe(const ExperimentConfig& c, const Mixture& m) {
  std::vector<std::string> media, text;
  for (const auto& [name, d] : c.datasets) (d.modality == Modality::Text ? text : media).push_back(name);
  std::vector<std::pair<std::string, double>> w;
  if (m.image > 0 && media.empty()) throw ConfigError("mixture has an image share but no media datasets");
  if (m.text > 0 && text.empty()) throw ConfigError("mixture has a text share but no text datasets");
  for (const auto& n : media) w.emplace_back(n, m.image / static_cast<double>(media.size()));
  for (const auto& n : text) w.emplace_back(n, m.text / static_cast<double>(text.size()));
  std::erase_if(w, [](const auto& p) { return p.second <= 0; });
  return normalized_recipe(std::move(w));
}

inline PhaseSchedule schedule_for(const ExperimentConfig& c, const std::optional<Mixture>& m) {
  if (!m) return c.phases;
  PhaseSchedule s;
  s.phases.push_back({0, mixture_recipe(c, *m)});
  return s;
}

struct StepWorkload {
  GlobalBatch batch;
  std::vector<Sample> samples;  // draw order
  std::unordered_map<std::int64_t, std::size_t> index;  // sample id -> position in samples

  const Sample& sample(std::int64_t id) const { return samples.at(index.at(id)); }
};

// Draws the longest sample prefix whose packing fits the global batch, so the
// batch keeps the recipe's proportions. Short batches are padded with empty
// sequences.
inline StepWorkload draw_step(const ExperimentConfig& c, const PhaseSchedule& phases, std::int64_t step,
                              std::uint64_t seed, Tokens seq_len, int gbs, int dp, int mbs) {
  const MixtureRecipe recipe = recipe_at(phases, step);
  double mean = 0;
  for (const auto& [name, r] : recipe.entries) mean += r * static_cast<double>(c.datasets.at(name).mean_len);
  const double budget = static_cast<double>(gbs) * static_cast<double>(seq_len);
  auto n = static_cast<std::int64_t>(std::ceil(budget / std::max(1.0, mean) * 1.5)) + 16;

  std::vector<Sample> drawn;
  for (;;) {
    drawn = sample_step(c.datasets, phases, step, n, seed);
    Tokens total = 0;
    for (const auto& s : drawn) total += s.length;
    if (static_cast<double>(total) > budget) break;
    n *= 2;
  }
  std::size_t k = 0;
  Tokens acc = 0;
  while (k < drawn.size() && static_cast<double>(acc + drawn[k].length) <= budget) acc += drawn[k++].length;
  std::vector<PackedSequence> seqs;
  for (;; --k) {
    seqs = hybrid_pack(std::span<const Sample>(drawn.data(), k), seq_len);
    if (seqs.size() <= static_cast<std::size_t>(gbs) || k == 0) break;
  }
  while (seqs.size() < static_cast<std::size_t>(gbs)) seqs.push_back(PackedSequence{seq_len, {}, 0});

  StepWorkload w;
  w.samples.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.index.emplace(w.samples[i].id, i);
  w.batch = build_global_batch(std::move(seqs), gbs, dp, mbs, step).batch;
  return w;
}

// Model-level work of one LLM microbatch.
struct MicrobatchLoad {
  Tokens tokens = 0;
  double llm_flops = 0;                      // forward, whole model
  std::vector<double> enc_flops;             // forward, per colocated encoder
  std::vector<Tokens> enc_tokens;            // encoder tokens, per colocated encoder
  std::vector<Nanos> enc_exchange;           // reorder all-to-all time, per colocated encoder
};

struct CostContext {
  const ExperimentConfig* cfg = nullptr;
  ModelSpec llm;
  std::vector<ModelSpec> encoders;
  double encoder_scale = 1.0;
  Tokens seq_len = 1;
};

inline CostContext make_context(const ExperimentConfig& c, Tokens seq_len, double encoder_scale) {
  CostContext x;
  x.cfg = &c;
  x.llm = c.models.at(c.llm);
  for (const auto& n : c.encoders()) x.encoders.push_back(c.models.at(n));
  x.encoder_scale = encoder_scale;
  x.seq_len = seq_len;
  return x;
}

// Per-sample attention: packed sequences use variable-length masks.
inline std::vector<std::vector<MicrobatchLoad>> microbatch_loads(const CostContext& x, const StepWorkload& w) {
  const auto& b = w.batch;
  std::vector<std::vector<MicrobatchLoad>> out(static_cast<std::size_t>(b.dp_degree));
  for (int r = 0; r < b.dp_degree; ++r)
    for (int i = 0; i < b.microbatches_per_replica; ++i) {
      const auto& mb = b.microbatch(r, i);
      MicrobatchLoad l;
      l.enc_flops.assign(x.encoders.size(), 0.0);
      l.enc_tokens.assign(x.encoders.size(), 0);
      l.enc_exchange.assign(x.encoders.size(), 0);
      for (std::size_t q = mb.first; q < mb.first + mb.count; ++q)
        for (const auto& sp : b.sequences[q].spans) {
          l.tokens += sp.tokens;
          l.llm_flops += flops_forward(x.llm, sp.tokens, std::max<Tokens>(1, sp.tokens));
          const Sample& s = w.sample(sp.sample_id);
          for (std::size_t e = 0; e < x.encoders.size(); ++e) {
            const auto& enc = x.encoders[e];
            if (enc.modality != s.modality) continue;
            const Tokens t = s.length * enc.tokens_per_patch;
            l.enc_tokens[e] += t;
            l.enc_flops[e] += x.encoder_scale * flops_forward(enc, t, std::max<Tokens>(1, t));
          }
        }
      out[static_cast<std::size_t>(r)].push_back(std::move(l));
    }
  return out;
}

namespace detail {

inline Nanos comm_nanos(const CommModel& comm, Primitive p, Bytes bytes, std::size_t g, bool intra) {
  if (bytes <= 0 || g < 2) return 0;
  return seconds_to_nanos(comm_time(comm, p, bytes, g, intra));
}

}  // namespace detail

// Grouped reordering across the same-stage workers of neighbouring replicas,
// which share a node and reach each encoder slot at the same program
// position. Each member then encodes its balanced share in place of its own
// microbatch's samples; the exchange is charged to the forward pass. Within a
// window the member's share is spread evenly over the window's slots.
inline std::vector<std::vector<MicrobatchLoad>> reordered_loads(const CostContext& x, const StepWorkload& w,
                                                                std::vector<std::vector<MicrobatchLoad>> loads,
                                                                std::pair<double, double>* imbalance = nullptr) {
  const auto& c = *x.cfg;
  const auto& l = c.layout;
  const int G = l.gpus_per_stage_worker();
  const int k = std::max(1, l.reorder_group_size / std::max(1, G));
  const auto& b = w.batch;
  if (imbalance) *imbalance = {1.0, 1.0};
  if (k < 2 || b.dp_degree % k != 0) return loads;
  const int pp = l.llm.pp, m = b.microbatches_per_replica;
  double pre = 0, post = 0;
  int groups = 0;
  for (std::size_t e = 0; e < x.encoders.size(); ++e) {
    const auto& enc = x.encoders[e];
    for (int s = 0; s < pp; ++s) {
      std::vector<int> slots;
      for (int j = s; j < m; j += pp) slots.push_back(j);
      if (slots.empty()) continue;
      for (int r0 = 0; r0 < b.dp_degree; r0 += k) {
        ReorderGroup g;
        for (int r = r0; r < r0 + k; ++r) {
          g.ranks.push_back(r * pp + s);
          std::vector<std::vector<Sample>> per;
          for (int j : slots) {
            std::vector<Sample> mine;
            const auto& mb = b.microbatch(r, j);
            for (std::size_t q = mb.first; q < mb.first + mb.count; ++q)
              for (const auto& sp : b.sequences[q].spans) {
                const Sample& smp = w.sample(sp.sample_id);
                if (smp.modality == enc.modality) mine.push_back(smp);
              }
            per.push_back(std::move(mine));
          }
          g.samples.push_back(std::move(per));
        }
        const int window = std::min<int>(c.microbatch_window, static_cast<int>(slots.size()));
        const auto res = grouped_reorder(g, window);
        pre += res.stats.pre_imbalance;
        post += res.stats.post_imbalance;
        ++groups;
        for (std::size_t wi = 0; wi < res.assigned.size(); ++wi) {
          const auto w0 = wi * static_cast<std::size_t>(window);
          const auto w1 = std::min(slots.size(), w0 + static_cast<std::size_t>(window));
          const auto span = static_cast<double>(w1 - w0);
          // Tokens that change owner travel out and their embeddings travel back.
          Tokens moved = 0;
          for (int mem = 0; mem < k; ++mem)
            for (const auto& o : res.record.origins[wi][static_cast<std::size_t>(mem)])
              if (o.member != mem)
                moved += g.samples[static_cast<std::size_t>(o.member)][static_cast<std::size_t>(o.mb)]
                                  [static_cast<std::size_t>(o.pos)].length;
          const Bytes bytes = moved * enc.tokens_per_patch * (enc.hidden + x.llm.hidden) * 2 / (G * k);
          const Nanos exchange = detail::comm_nanos(c.comm, Primitive::AllToAll, bytes, static_cast<std::size_t>(k * G), true);
          for (int mem = 0; mem < k; ++mem) {
            double fl = 0;
            Tokens tk = 0;
            for (const auto& smp : res.assigned[wi][static_cast<std::size_t>(mem)]) {
              const Tokens t = smp.length * enc.tokens_per_patch;
              tk += t;
              fl += x.encoder_scale * flops_forward(enc, t, std::max<Tokens>(1, t));
            }
            for (auto q = w0; q < w1; ++q) {
              auto& ld = loads[static_cast<std::size_t>(r0 + mem)][static_cast<std::size_t>(slots[q])];
              ld.enc_flops[e] = fl / span;
              ld.enc_tokens[e] = static_cast<Tokens>(static_cast<double>(tk) / span);
              ld.enc_exchange[e] = moved > 0 ? static_cast<Nanos>(static_cast<double>(exchange) / span) : 0;
            }
          }
        }
      }
    }
  }
  if (imbalance && groups > 0) *imbalance = {pre / groups, post / groups};
  return loads;
}

// LLM pipeline costs for `degrees`, one rank per stage worker of tp*sp GPUs.
inline PipelineCosts llm_costs(const CostContext& x, const std::vector<std::vector<MicrobatchLoad>>& loads,
                               const LlmDegrees& d, int microbatch_size) {
  const auto& c = *x.cfg;
  const int G = d.tp * d.sp;
  PipelineCosts p;
  p.pp = d.pp;
  p.dp = d.dp;
  p.microbatches = static_cast<int>(loads.front().size());
  const auto udp = static_cast<std::size_t>(d.dp), upp = static_cast<std::size_t>(d.pp),
             um = static_cast<std::size_t>(p.microbatches);
  p.fwd.assign(udp, std::vector<std::vector<Nanos>>(upp, std::vector<Nanos>(um, 0)));
  p.bwd = p.fwd;
  p.act_bytes = p.fwd;
  p.fwd_flops.assign(udp, std::vector<std::vector<double>>(upp, std::vector<double>(um, 0.0)));
  p.bwd_flops = p.fwd_flops;
  p.tokens.assign(udp, std::vector<Tokens>(um, 0));
  const double layers_per_stage = static_cast<double>(x.llm.layers) / d.pp;
  for (std::size_t r = 0; r < udp; ++r)
    for (std::size_t i = 0; i < um; ++i) {
      const auto& l = loads[r][i];
      p.tokens[r][i] = l.tokens;
      const double f = l.llm_flops / d.pp;
      for (std::size_t s = 0; s < upp; ++s) {
        p.fwd[r][s][i] = compute_nanos(f, c.hardware, G);
        p.bwd[r][s][i] = compute_nanos(2 * f, c.hardware, G);
        p.fwd_flops[r][s][i] = f;
        p.bwd_flops[r][s][i] = 2 * f;
        p.act_bytes[r][s][i] = static_cast<Bytes>(static_cast<double>(l.tokens) * layers_per_stage *
                                                  c.memory.activation_bytes_per_hidden * x.llm.hidden / G);
      }
    }
  // Padded activation buffer between stages, one shard per GPU of the worker.
  p.p2p_bytes = x.seq_len * microbatch_size * x.llm.hidden * 2 / G;
  p.p2p = detail::comm_nanos(c.comm, Primitive::P2P, p.p2p_bytes, 2, false);
  if (d.dp > 1) {
    p.grad_sync_events = true;
    p.grad_bytes = static_cast<Bytes>(x.llm.params / d.pp / d.tp * 2.0);
    p.grad_sync = detail::comm_nanos(c.comm, Primitive::AllReduce, p.grad_bytes, static_cast<std::size_t>(d.dp), false);
  }
  return p;
}

enum class EncoderPlacement { Colocated, Prepended, Dedicated };

// Encoder costs for one microbatch grid. Colocated and Dedicated run each
// encoder microbatch on one worker of `gpus` GPUs with sharded activations;
// Prepended keeps the TP-replicated part of the activations on every GPU.
inline EncoderCosts encoder_costs(const CostContext& x, const std::vector<std::vector<MicrobatchLoad>>& loads, int gpus,
                                  EncoderPlacement placement, bool recompute, int microbatch_size) {
  const auto& c = *x.cfg;
  EncoderCosts out;
  for (std::size_t e = 0; e < x.encoders.size(); ++e) {
    const auto& spec = x.encoders[e];
    EncoderWork w;
    w.model = spec.name;
    for (const auto& rep : loads) {
      std::vector<Nanos> f, b;
      std::vector<Bytes> a;
      std::vector<double> ff, bf;
      for (const auto& l : rep) {
        const double fl = l.enc_flops[e];
        const double bl = (recompute ? 3.0 : 2.0) * fl;
        f.push_back(compute_nanos(fl, c.hardware, gpus) + l.enc_exchange[e]);
        b.push_back(compute_nanos(bl, c.hardware, gpus));
        ff.push_back(fl);
        bf.push_back(2.0 * fl);
        const double tl = static_cast<double>(l.enc_tokens[e]) * spec.layers * spec.hidden;
        double per;
        if (recompute) per = 2.0 / gpus;
        else if (placement == EncoderPlacement::Prepended) per = 10.0 + 24.0 / gpus;
        else per = c.memory.activation_bytes_per_hidden / gpus;
        a.push_back(static_cast<Bytes>(tl * per));
      }
      w.fwd.push_back(std::move(f));
      w.bwd.push_back(std::move(b));
      w.act_bytes.push_back(std::move(a));
      w.fwd_flops.push_back(std::move(ff));
      w.bwd_flops.push_back(std::move(bf));
    }
    out.models.push_back(std::move(w));
  }
  if (placement != EncoderPlacement::Prepended) {
    out.p2p_bytes = x.seq_len * microbatch_size * x.llm.hidden * 2 / gpus;
    out.p2p = detail::comm_nanos(c.comm, Primitive::P2P, out.p2p_bytes, 2, false);
  }
  return out;
}

inline double encoder_state_bytes(const ModelSpec& m, const MemoryModel& mem, ZeroStage z, int shard) {
  const double s = std::max(1, shard);
  switch (z) {
    case ZeroStage::None: return m.params * mem.bytes_per_param_state;
    case ZeroStage::Z2: return m.params * (2.0 + (mem.bytes_per_param_state - 2.0) / s);
    case ZeroStage::Z3: return m.params * mem.bytes_per_param_state / s;
  }
  return 0;
}

inline double llm_state_bytes(const CostContext& x, const LlmDegrees& d) {
  return x.llm.params / d.pp / d.tp * x.cfg->memory.bytes_per_param_state;
}

struct PointReport {
  std::string experiment;
  Architecture architecture = Architecture::Multiplexed;
  std::string mixture;  // "image:text", or "phases"
  Tokens seq_len = 0;
  double encoder_scale = 1.0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  int ranks = 0;
  double makespan_s = 0;
  double throughput = 0;
  Tokens tokens = 0;
  double bubble_ratio = 0;
  std::map<std::string, double> role_bubble_ratio;
  double llm_stall = 0;
  double peak_memory_gb = 0;
  double first_stage_memory_gb = 0;
  bool oom = false;
  int oom_ranks = 0;
  bool encoder_recompute = false;
  double mfu_proxy = 0;
  std::map<std::string, Bytes> comm_bytes;
  int overflow_events = 0;
  double reorder_pre_imbalance = 1.0;
  double reorder_post_imbalance = 1.0;
  std::string trace;

  friend bool operator==(const PointReport&, const PointReport&) = default;
};

struct PointRun {
  PointReport report;
  ScheduleIR ir;
  SimResult sim;
};

struct PointSpec {
  Architecture architecture = Architecture::Multiplexed;
  std::optional<Mixture> mixture;
  Tokens seq_len = 0;        // 0 = config value
  double encoder_scale = 1.0;
  std::int64_t step = 0;
};

namespace detail {

inline SimOptions sim_options(const ExperimentConfig& c, std::vector<double> statics, int gpus_per_rank) {
  SimOptions o;
  o.static_bytes = std::move(statics);
  o.capacity_bytes = c.hardware.memory_bytes;
  o.peak_flops_per_rank = c.hardware.peak_flops * gpus_per_rank;
  return o;
}

}  // namespace detail

// Simulates one architecture on one step of one sweep point.
inline PointRun run_point(const ExperimentConfig& c, const PointSpec& p) {
  const Tokens seq_len = p.seq_len > 0 ? p.seq_len : c.seq_len;
  const CostContext x = make_context(c, seq_len, p.encoder_scale);
  const PhaseSchedule phases = schedule_for(c, p.mixture);
  const LlmDegrees main = c.layout.llm;
  const int G = c.layout.gpus_per_stage_worker();
  const int mbs = c.microbatch_size;
  const bool disagg = p.architecture == Architecture::Disaggregated;
  const LlmDegrees deg = disagg ? c.disagg_llm : main;

  const StepWorkload w = draw_step(c, phases, p.step, c.seed, seq_len, c.global_batch_size, deg.dp, mbs);
  std::pair<double, double> imbalance{1.0, 1.0};
  auto loads = microbatch_loads(x, w);
  if (p.architecture == Architecture::Multiplexed) loads = reordered_loads(x, w, std::move(loads), &imbalance);
  const PipelineCosts llm = llm_costs(x, loads, deg, mbs);

  PointRun run;
  auto& rep = run.report;
  rep.experiment = c.name;
  rep.architecture = p.architecture;
  rep.mixture = p.mixture ? p.mixture->label() : "phases";
  rep.seq_len = seq_len;
  rep.encoder_scale = p.encoder_scale;
  rep.step = p.step;
  rep.seed = c.seed;

  double enc_colocated = 0;
  for (const auto& e : x.encoders)
    enc_colocated += encoder_state_bytes(e, c.memory, c.layout.encoder.zero_stage,
                                         c.layout.encoder.dp * c.layout.encoder.ulysses_sp);
  const double llm_static = llm_state_bytes(x, deg);

  auto build = [&](bool recompute) {
    std::vector<double> statics;
    ScheduleIR ir;
    switch (p.architecture) {
      case Architecture::Multiplexed:
      case Architecture::Optimus: {
        const auto enc = encoder_costs(x, loads, G, EncoderPlacement::Colocated, recompute, mbs);
        if (p.architecture == Architecture::Multiplexed) {
          ir = insert_encoders_uniform(build_1f1b(llm), enc, InsertionPolicy::OnDemand).ir;
        } else {
          // Placement is planned once, offline, on one replica's batch of the
          // reference mixture, and every replica reuses it.
          const auto ref_w = draw_step(c, schedule_for(c, c.optimus_reference), 0, c.seed, seq_len,
                                       c.global_batch_size / deg.dp, 1, mbs);
          const auto ref_loads = microbatch_loads(x, ref_w);
          LlmDegrees one = deg;
          one.dp = 1;
          const auto plan = plan_optimus(llm_costs(x, ref_loads, one, mbs),
                                         encoder_costs(x, ref_loads, G, EncoderPlacement::Colocated, recompute, mbs));
          ir = build_optimus(llm, enc, plan);
        }
        statics.assign(static_cast<std::size_t>(ir.num_ranks), llm_static + enc_colocated);
        break;
      }
      case Architecture::Prepended: {
        const auto enc = encoder_costs(x, loads, G, EncoderPlacement::Prepended, recompute, mbs);
        ir = build_prepended(llm, enc);
        double enc_tp = 0;
        for (const auto& e : x.encoders) enc_tp += e.params * c.memory.bytes_per_param_state / G;
        statics.assign(static_cast<std::size_t>(ir.num_ranks), llm_static);
        for (int r = 0; r < deg.dp; ++r) statics[static_cast<std::size_t>(r * deg.pp)] += enc_tp;
        break;
      }
      case Architecture::Disaggregated: {
        const int workers = c.disagg_encoder_ranks / G;
        const auto enc = encoder_costs(x, loads, G, EncoderPlacement::Dedicated, recompute, mbs);
        ir = build_disaggregated(llm, enc, workers);
        double enc_static = 0;
        for (const auto& e : x.encoders)
          enc_static += encoder_state_bytes(e, c.memory, c.layout.encoder.zero_stage, c.disagg_encoder_ranks);
        statics.assign(static_cast<std::size_t>(ir.num_ranks), llm_static);
        for (int r = 0; r < workers; ++r) statics[static_cast<std::size_t>(r)] = enc_static;
        break;
      }
    }
    return std::make_pair(std::move(ir), std::move(statics));
  };

  auto [ir, statics] = build(false);
  SimResult sim = simulate(ir, detail::sim_options(c, statics, G));
  // Out of memory with kept activations: fall back to encoder recomputation.
  if (sim.metrics.any_oom && !x.encoders.empty()) {
    auto [ir2, statics2] = build(true);
    SimResult sim2 = simulate(ir2, detail::sim_options(c, statics2, G));
    ir = std::move(ir2);
    sim = std::move(sim2);
    rep.encoder_recompute = true;
  }
  const auto violations = check_timeline(ir, sim.timeline);
  if (!violations.empty()) throw InternalError("timeline invariant violated: " + violations.front());

  const auto& m = sim.metrics;
  rep.ranks = ir.num_ranks;
  rep.makespan_s = nanos_to_seconds(m.makespan);
  rep.throughput = m.throughput;
  rep.tokens = m.tokens;
  rep.bubble_ratio = m.bubble_ratio;
  rep.role_bubble_ratio = m.role_bubble_ratio;
  rep.mfu_proxy = m.mfu_proxy;
  rep.comm_bytes = m.comm_bytes;
  rep.oom = m.any_oom;
  rep.oom_ranks = static_cast<int>(std::count(m.oom.begin(), m.oom.end(), true));
  rep.peak_memory_gb = m.peak_memory.empty() ? 0.0 : *std::max_element(m.peak_memory.begin(), m.peak_memory.end()) / 1e9;
  const int first = disagg ? c.disagg_encoder_ranks / G : 0;
  rep.first_stage_memory_gb = m.peak_memory.empty() ? 0.0 : m.peak_memory[static_cast<std::size_t>(first)] / 1e9;
  rep.overflow_events = static_cast<int>(overflow_count(ir));

  if (disagg) {
    // Stall against the same LLM pipeline fed by zero-cost encoders.
    auto idle = encoder_costs(x, loads, G, EncoderPlacement::Dedicated, false, mbs);
    for (auto& mw : idle.models) {
      for (auto& v : mw.fwd) std::fill(v.begin(), v.end(), 0);
      for (auto& v : mw.bwd) std::fill(v.begin(), v.end(), 0);
    }
    idle.p2p = 0;
    idle.p2p_bytes = 0;
    const auto ref = simulate(build_disaggregated(llm, idle, c.disagg_encoder_ranks / G));
    rep.llm_stall = m.makespan > 0 ? 1.0 - static_cast<double>(ref.metrics.makespan) / static_cast<double>(m.makespan) : 0.0;
  }
  rep.reorder_pre_imbalance = imbalance.first;
  rep.reorder_post_imbalance = imbalance.second;
  run.ir = std::move(ir);
  run.sim = std::move(sim);
  return run;
}

// Every point of the configured sweep, in emission order.
inline std::vector<PointSpec> sweep_points(const ExperimentConfig& c) {
  std::vector<std::optional<Mixture>> mixes;
  if (c.mixture_sweep.empty()) mixes.push_back(std::nullopt);
  for (const auto& m : c.mixture_sweep) mixes.emplace_back(m);
  std::vector<Tokens> lens = c.seq_len_sweep;
  if (lens.empty()) lens.push_back(c.seq_len);
  std::vector<double> scales = c.encoder_scale_sweep;
  if (scales.empty()) scales.push_back(1.0);
  std::vector<PointSpec> out;
  for (auto a : c.architectures)
    for (const auto& m : mixes)
      for (auto L : lens)
        for (auto k : scales)
          for (int s = 0; s < c.steps; ++s) out.push_back({a, m, L, k, s});
  return out;
}


// Proxy cluster: DP degrees, nodes and global batch divided by `factor`.
// A disaggregated block that no longer fits whole stage workers is dropped
// from the architecture list; `dropped` reports it.
inline ExperimentConfig scale_down_config(const ExperimentConfig& c, int factor, bool* dropped = nullptr) {
  if (dropped) *dropped = false;
  const auto p = scale_down_proxy(c.topology, c.layout, c.global_batch_size, factor);
  ExperimentConfig out = c;
  out.topology = p.topology;
  out.layout = p.layout;
  out.global_batch_size = p.global_batch_size;
  if (c.disagg_encoder_ranks > 0) {
    const int g = std::max(1, c.disagg_llm.tp * c.disagg_llm.sp);
    const bool fits = c.disagg_llm.dp % factor == 0 && c.disagg_encoder_ranks % factor == 0 &&
                      (c.disagg_encoder_ranks / factor) % g == 0;
    if (fits) {
      out.disagg_llm.dp /= factor;
      out.disagg_encoder_ranks /= factor;
    } else {
      std::erase(out.architectures, Architecture::Disaggregated);
      if (dropped) *dropped = true;
    }
  }
  return out;
}


struct EtaPoint {
  Tokens eta = 0;
  double makespan_s = 0;
  Bytes alltoall_bytes = 0;
  int sp_samples = 0;
};

// LSSP tradeoff for the first colocated encoder on one drawn step, one
// microbatch, with samples dealt by lssp_deal.
inline std::vector<EtaPoint> sweep_eta(const ExperimentConfig& c, const std::vector<Tokens>& etas,
                                       const std::optional<Mixture>& mixture, std::int64_t step = 0) {
  if (c.encoders().empty()) throw ConfigError("layout.colocation: sweep-eta needs an encoder");
  const ModelSpec& enc = c.models.at(c.encoders().front());
  const auto w = draw_step(c, schedule_for(c, mixture), step, c.seed, c.seq_len, c.global_batch_size,
                           c.layout.llm.dp, c.microbatch_size);
  const int sp = c.layout.encoder.ulysses_sp;
  const int ranks = c.layout.encoder.dp * sp;
  std::vector<Sample> mine;
  for (const auto& s : w.samples)
    if (s.modality == enc.modality) mine.push_back(s);
  LsspCostModel cost{enc, c.hardware, c.comm, 3.0, c.seq_len};

  std::vector<EtaPoint> out;
  for (Tokens eta : etas) {
    ParallelLayout l = c.layout;
    l.lssp_eta = eta;
    const auto per_rank = lssp_deal(mine, eta, ranks, sp, cost);
    const auto ir = lssp_schedule(per_rank, eta, l, c.topology, cost);
    const auto sim = simulate(ir);
    EtaPoint p{eta, nanos_to_seconds(sim.metrics.makespan), 0, 0};
    if (auto it = sim.metrics.comm_bytes.find("all_to_all"); it != sim.metrics.comm_bytes.end())
      p.alltoall_bytes = it->second;
    for (const auto& r : per_rank)
      for (const auto& s : r[0]) p.sp_samples += s.length > eta ? 1 : 0;
    out.push_back(p);
  }
  return out;
}

}  // namespace mmsim
