#include <gtest/gtest.h>

#include <set>

#include "mmsim/experiment.hpp"

using namespace mmsim;

namespace {

ExperimentConfig small_a() {
  // Workload A on a quarter of the cluster: 2 nodes, one LLM replica.
  return scale_down_config(load_config(std::string(MMSIM_PRESET_DIR) + "/workload_a.json"), 4);
}

std::vector<std::vector<EventKey>> first_replica(const std::vector<std::vector<EventKey>>& shape, int pp) {
  return {shape.begin(), shape.begin() + pp};
}

}  // namespace

TEST(Experiment, MixtureRecipeSplitsShares) {
  const auto c = small_a();
  const auto r = mixture_recipe(c, {3, 7});
  double image = 0, text = 0;
  for (const auto& [name, w] : r.entries) (c.datasets.at(name).modality == Modality::Text ? text : image) += w;
  EXPECT_NEAR(image, 0.3, 1e-12);
  EXPECT_NEAR(text, 0.7, 1e-12);
  EXPECT_EQ(mixture_recipe(c, {1, 0}).entries.size(), 2u);
}

TEST(Experiment, DrawStepPacksEverySampleOnce) {
  const auto c = small_a();
  for (std::int64_t step = 0; step < 3; ++step) {
    const auto w = draw_step(c, schedule_for(c, Mixture{5, 5}), step, c.seed, c.seq_len, c.global_batch_size,
                             c.layout.llm.dp, c.microbatch_size);
    EXPECT_EQ(w.batch.sequences.size(), static_cast<std::size_t>(c.global_batch_size));
    std::multiset<std::int64_t> packed;
    Tokens total = 0;
    for (const auto& s : w.batch.sequences) {
      EXPECT_LE(s.fill, c.seq_len);
      for (const auto& sp : s.spans) {
        packed.insert(sp.sample_id);
        EXPECT_EQ(w.sample(sp.sample_id).length, sp.tokens);
        total += sp.tokens;
      }
    }
    EXPECT_EQ(packed.size(), w.samples.size());
    EXPECT_EQ(std::set<std::int64_t>(packed.begin(), packed.end()).size(), packed.size());
    EXPECT_EQ(total, w.batch.tokens());
  }
}

TEST(Experiment, RunPointIsDeterministic) {
  const auto c = small_a();
  for (auto a : {Architecture::Multiplexed, Architecture::Prepended, Architecture::Optimus}) {
    const PointSpec p{a, Mixture{7, 3}, 0, 1.0, 0};
    const auto r1 = run_point(c, p);
    const auto r2 = run_point(c, p);
    EXPECT_EQ(r1.report, r2.report) << to_string(a);
    EXPECT_EQ(r1.sim.timeline.entries.size(), r2.sim.timeline.entries.size());
    for (std::size_t i = 0; i < r1.sim.timeline.entries.size(); ++i) {
      EXPECT_EQ(r1.sim.timeline.entries[i].start, r2.sim.timeline.entries[i].start);
      EXPECT_EQ(r1.sim.timeline.entries[i].end, r2.sim.timeline.entries[i].end);
    }
  }
}

TEST(Experiment, SeedChangesSamplesNotShape) {
  auto c = small_a();
  const PointSpec p{Architecture::Multiplexed, Mixture{5, 5}, 0, 1.0, 0};
  const auto a = run_point(c, p);
  c.seed += 1;
  const auto b = run_point(c, p);
  EXPECT_NE(a.report.tokens, b.report.tokens);
  EXPECT_EQ(compute_shape(a.ir), compute_shape(b.ir));
}

TEST(Experiment, ProxyKeepsPerReplicaShape) {
  const auto full = load_config(std::string(MMSIM_PRESET_DIR) + "/workload_a.json");
  const auto proxy = scale_down_config(full, 4);
  const int pp = full.layout.llm.pp;
  for (auto a : {Architecture::Multiplexed, Architecture::Prepended, Architecture::Optimus}) {
    const PointSpec p{a, Mixture{5, 5}, 0, 1.0, 0};
    const auto f = run_point(full, p);
    const auto q = run_point(proxy, p);
    EXPECT_EQ(f.ir.num_ranks, full.layout.llm.dp * pp);
    EXPECT_EQ(q.ir.num_ranks, proxy.layout.llm.dp * pp);
    EXPECT_EQ(first_replica(compute_shape(f.ir), pp), first_replica(compute_shape(q.ir), pp)) << to_string(a);
  }
}

TEST(Experiment, ScaleDownShrinksOrDropsDisaggregated) {
  const auto full = load_config(std::string(MMSIM_PRESET_DIR) + "/workload_a.json");
  bool dropped = false;
  const auto q = scale_down_config(full, 4, &dropped);
  // disaggregated llm dp 4 and 16 encoder ranks both divide by 4; 4 ranks hold one tp*sp = 4 worker.
  EXPECT_FALSE(dropped);
  EXPECT_EQ(q.disagg_encoder_ranks, 4);
  EXPECT_EQ(q.disagg_llm.dp, 1);
  const auto q16 = scale_down_config(load_config(std::string(MMSIM_PRESET_DIR) + "/workload_a.json"), 2, &dropped);
  EXPECT_FALSE(dropped);
  EXPECT_EQ(q16.global_batch_size, 16);
  EXPECT_THROW(scale_down_config(full, 3), ArgumentError);
  // 8 encoder ranks / 4 = 2, less than one tp*sp = 4 worker.
  auto narrow = full;
  narrow.disagg_encoder_ranks = 8;
  const auto d = scale_down_config(narrow, 4, &dropped);
  EXPECT_TRUE(dropped);
  EXPECT_EQ(std::count(d.architectures.begin(), d.architectures.end(), Architecture::Disaggregated), 0);
}

TEST(Experiment, SweepPointsOrder) {
  auto c = small_a();
  c.steps = 2;
  const auto pts = sweep_points(c);
  ASSERT_EQ(pts.size(), c.architectures.size() * c.mixture_sweep.size() * 2);
  EXPECT_EQ(pts[0].architecture, c.architectures[0]);
  EXPECT_EQ(*pts[0].mixture, c.mixture_sweep[0]);
  EXPECT_EQ(pts[1].step, 1);
  EXPECT_EQ(*pts[2].mixture, c.mixture_sweep[1]);
}

TEST(Experiment, DisaggregatedReportsStall) {
  const auto c = small_a();
  const auto lo = run_point(c, {Architecture::Disaggregated, Mixture{1, 9}, 0, 1.0, 0}).report;
  const auto hi = run_point(c, {Architecture::Disaggregated, Mixture{9, 1}, 0, 1.0, 0}).report;
  EXPECT_GT(lo.role_bubble_ratio.at("encoder"), hi.role_bubble_ratio.at("encoder"));
  EXPECT_GT(hi.llm_stall, lo.llm_stall);
  EXPECT_GE(lo.llm_stall, 0.0);
}

TEST(Experiment, SweepEta) {
  const auto c = small_a();
  const auto pts = sweep_eta(c, {512, 2048, 8192, c.seq_len}, Mixture{9, 1});
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_LE(pts[i].sp_samples, pts[i - 1].sp_samples);
    EXPECT_LE(pts[i].alltoall_bytes, pts[i - 1].alltoall_bytes);
  }
  EXPECT_EQ(pts.back().sp_samples, 0);
  EXPECT_EQ(pts.back().alltoall_bytes, 0);
  EXPECT_GT(pts.front().alltoall_bytes, 0);
}
