#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "mmsim/engine.hpp"
#include "mmsim/schedule.hpp"
#include "oracle.hpp"

using namespace mmsim;
using oracle::critical_path;
using oracle::predecessors;
using oracle::random_instance;

namespace {

constexpr Nanos ms = 1'000'000;

// Every topological interleaving, each list-scheduled; returns the distinct
// makespans seen (capped at `limit` interleavings).
std::set<Nanos> interleaving_makespans(const ScheduleIR& ir, std::size_t limit) {
  const auto pred = predecessors(ir);
  const std::size_t n = ir.events.size();
  std::vector<int> indeg(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (std::size_t b = 0; b < n; ++b)
    for (int a : pred[b]) {
      ++indeg[b];
      succ[static_cast<std::size_t>(a)].push_back(static_cast<int>(b));
    }
  std::vector<Nanos> end(n, 0);
  std::set<Nanos> out;
  std::size_t seen = 0;
  std::vector<int> order;
  std::function<void()> go = [&] {
    if (seen >= limit) return;
    if (order.size() == n) {
      ++seen;
      Nanos span = 0;
      for (int id : order) {
        Nanos s = 0;
        for (int p : pred[static_cast<std::size_t>(id)]) s = std::max(s, end[static_cast<std::size_t>(p)]);
        end[static_cast<std::size_t>(id)] = s + ir.at(id).duration;
        span = std::max(span, end[static_cast<std::size_t>(id)]);
      }
      out.insert(span);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (indeg[i] != 0 || std::find(order.begin(), order.end(), static_cast<int>(i)) != order.end()) continue;
      order.push_back(static_cast<int>(i));
      for (int s : succ[i]) --indeg[static_cast<std::size_t>(s)];
      go();
      for (int s : succ[i]) ++indeg[static_cast<std::size_t>(s)];
      order.pop_back();
    }
  };
  go();
  return out;
}

}  // namespace

TEST(Engine, SingleChain) {
  const auto ir = build_1f1b(uniform_pipeline_costs(1, 1, 3 * ms, 7 * ms));
  const auto sim = simulate(ir);
  EXPECT_EQ(sim.metrics.makespan, 10 * ms);
  EXPECT_EQ(sim.metrics.bubble_ratio, 0.0);
}

TEST(Engine, MatchesCriticalPathOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 600; ++t) {
    const auto ir = random_instance(rng);
    ASSERT_TRUE(check_ir(ir).empty());
    const auto sim = simulate(ir);
    EXPECT_EQ(sim.metrics.makespan, critical_path(ir)) << "instance " << t;
    EXPECT_TRUE(check_timeline(ir, sim.timeline).empty()) << "instance " << t;
  }
}

TEST(Engine, EveryInterleavingAgreesOnTinyInstances) {
  std::mt19937_64 rng(17);
  int checked = 0;
  while (checked < 40) {
    const auto ir = random_instance(rng);
    if (ir.events.size() > 9) continue;
    const auto spans = interleaving_makespans(ir, 20000);
    ASSERT_EQ(spans.size(), 1u);
    EXPECT_EQ(*spans.begin(), simulate(ir).metrics.makespan);
    ++checked;
  }
}

TEST(Engine, CausalityAndLaneExclusivity) {
  auto c = uniform_pipeline_costs(4, 8, 3 * ms, 5 * ms, 2);
  c.p2p = ms;
  c.grad_sync = 2 * ms;
  c.grad_sync_events = true;
  const auto llm = build_1f1b(c);
  const auto ir = insert_encoders_uniform(llm, uniform_encoder_costs("vit", 2, 8, ms, 2 * ms), InsertionPolicy::OnDemand).ir;
  const auto sim = simulate(ir);
  EXPECT_TRUE(check_timeline(ir, sim.timeline).empty());
  for (const auto& [a, b] : ir.deps)
    EXPECT_GE(sim.timeline.entries[static_cast<std::size_t>(b)].start, sim.timeline.entries[static_cast<std::size_t>(a)].end);
}

TEST(Engine, CommOverlapsCompute) {
  ScheduleIR ir(1);
  Event comp;
  comp.type = EventType::LlmFwd;
  comp.stage = 0;
  comp.mb = 0;
  comp.duration = 5;
  Event comm;
  comm.type = EventType::Comm;
  comm.lane = Lane::Comm;
  comm.duration = 4;
  comm.bytes = 64;
  comm.primitive = Primitive::AllGather;
  ir.append(comp);
  ir.append(comm);
  const auto sim = simulate(ir);
  EXPECT_EQ(sim.metrics.makespan, 5);
  EXPECT_EQ(sim.metrics.comm_bytes.at("all_gather"), 64);
  Event comm2 = comm;
  ir.append(comm2);
  EXPECT_EQ(simulate(ir).metrics.makespan, 8);  // second transfer queues behind the first
}

TEST(Engine, DeadlockIsInternalError) {
  ScheduleIR ir(2);
  Event a;
  a.type = EventType::LlmFwd;
  a.rank = 0;
  a.duration = 1;
  Event b = a;
  b.rank = 1;
  const int x = ir.append(a);
  const int y = ir.append(b);
  ir.depend(x, y);
  ir.depend(y, x);
  EXPECT_THROW(simulate(ir), InternalError);
  ScheduleIR unplaced(1);
  unplaced.add(a);
  EXPECT_THROW(simulate(unplaced), InternalError);
}

TEST(Engine, MetricsIdentities) {
  auto c = uniform_pipeline_costs(3, 6, 2 * ms, 4 * ms);
  c.tokens.assign(1, std::vector<Tokens>(6, 1000));
  const auto ir = build_1f1b(c);
  const auto sim = simulate(ir);
  const auto& m = sim.metrics;
  EXPECT_EQ(m.tokens, 6000);
  EXPECT_DOUBLE_EQ(m.throughput * nanos_to_seconds(m.makespan), 6000.0);
  EXPECT_GE(m.bubble_ratio, 0.0);
  EXPECT_LE(m.bubble_ratio, 1.0);
  // 3 stages x 6 mbs x 6 ms of work over 3 ranks.
  EXPECT_NEAR(m.bubble_ratio, 1.0 - 108.0 / (3.0 * static_cast<double>(m.makespan) / ms), 1e-12);
  EXPECT_EQ(m.role_bubble_ratio.at("llm"), m.bubble_ratio);
}

TEST(Engine, OomIsAFlag) {
  auto c = uniform_pipeline_costs(2, 4, ms, ms);
  c.act_bytes.assign(1, std::vector<std::vector<Bytes>>(2, std::vector<Bytes>(4, 100)));
  const auto ir = build_1f1b(c);
  SimOptions o;
  o.static_bytes = {50, 50};
  o.capacity_bytes = 200;
  const auto sim = simulate(ir, o);
  EXPECT_EQ(sim.metrics.peak_memory[0], 250.0);
  EXPECT_EQ(sim.metrics.peak_memory[1], 150.0);
  EXPECT_TRUE(sim.metrics.oom[0]);
  EXPECT_FALSE(sim.metrics.oom[1]);
  EXPECT_TRUE(sim.metrics.any_oom);
  EXPECT_GT(sim.metrics.makespan, 0);
}

TEST(Engine, MfuProxy) {
  auto c = uniform_pipeline_costs(1, 1, ms, ms);
  c.fwd_flops.assign(1, {{1e9}});
  c.bwd_flops.assign(1, {{2e9}});
  SimOptions o;
  o.peak_flops_per_rank = 3e12;
  EXPECT_NEAR(simulate(build_1f1b(c), o).metrics.mfu_proxy, 3e9 / (3e12 * 2e-3), 1e-12);
}

TEST(Engine, Deterministic) {
  std::mt19937_64 rng(9);
  const auto ir = random_instance(rng);
  const auto a = simulate(ir);
  const auto b = simulate(ir);
  EXPECT_EQ(trace_json(ir, a.timeline), trace_json(ir, b.timeline));
}

TEST(Engine, TraceIsValidJson) {
  const auto ir = insert_encoders_uniform(build_1f1b(uniform_pipeline_costs(2, 4, ms, 2 * ms)),
                                          uniform_encoder_costs("vit", 1, 4, ms, ms), InsertionPolicy::OnDemand)
                      .ir;
  const auto sim = simulate(ir);
  const auto j = nlohmann::json::parse(trace_json(ir, sim.timeline));
  ASSERT_TRUE(j.contains("traceEvents"));
  EXPECT_EQ(j["traceEvents"].size(), 2 * ir.events.size());
  int begins = 0;
  for (const auto& e : j["traceEvents"]) begins += e["ph"] == "B";
  EXPECT_EQ(begins, static_cast<int>(ir.events.size()));
  EXPECT_THROW(export_trace(ir, sim.timeline, "/nonexistent-dir/x/trace.json"), IoError);
}

TEST(Resilience, UniformStableNonuniformGrows) {
  // Base encoder fwd 1 ms / bwd 2 ms against LLM stages of 10 / 20 ms.
  const int pp = 4, m = 128;
  const auto llm = build_1f1b(uniform_pipeline_costs(pp, m, 10 * ms, 20 * ms));
  const std::vector<int> weights{m / 16, m / 8, 3 * m / 16, 10 * m / 16};
  std::vector<double> uni, non;
  for (double k : {0.5, 1.0, 2.0, 4.0}) {
    const auto f = static_cast<Nanos>(k * static_cast<double>(ms));
    const auto enc = uniform_encoder_costs("vit", 1, m, f, 2 * f);
    uni.push_back(simulate(insert_encoders_uniform(llm, enc, InsertionPolicy::OnDemand).ir).metrics.bubble_ratio);
    non.push_back(simulate(insert_encoders_nonuniform(llm, enc, weights).ir).metrics.bubble_ratio);
  }
  const auto [lo, hi] = std::minmax_element(uni.begin(), uni.end());
  EXPECT_LT((*hi - *lo) / *lo, 0.10);
  for (std::size_t i = 1; i < non.size(); ++i) EXPECT_GT(non[i], non[i - 1]);
  EXPECT_GT(non.back() / uni.back(), 1.5);
}
