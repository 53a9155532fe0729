#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "mmsim/catalog.hpp"
#include "mmsim/engine.hpp"
#include "mmsim/lssp.hpp"

using namespace mmsim;

namespace {

Sample sample(std::int64_t id, Tokens len) {
  Sample s;
  s.id = id;
  s.length = len;
  s.modality = Modality::Image;
  return s;
}

// Short images around 800 tokens, long ones around 9000.
std::vector<Sample> draw(std::mt19937_64& rng, int n, double p_long) {
  std::lognormal_distribution<double> sh(std::log(800.0), 0.6), lg(std::log(9000.0), 0.3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Sample> v;
  for (int i = 0; i < n; ++i) {
    const bool is_long = u(rng) < p_long;
    v.push_back(sample(i, is_long ? std::clamp<Tokens>(static_cast<Tokens>(lg(rng)), 4097, 16384)
                                  : std::clamp<Tokens>(static_cast<Tokens>(sh(rng)), 16, 4096)));
  }
  return v;
}

LsspCostModel vit_cost() { return LsspCostModel{catalog_model("vit-1b"), Hardware{}, CommModel{}, 3.0, 16384}; }

ParallelLayout encoder_layout(int dp, int sp) {
  ParallelLayout l;
  l.encoder.dp = dp;
  l.encoder.ulysses_sp = sp;
  return l;
}

int count_tag(const ScheduleIR& ir, const std::string& tag) {
  return static_cast<int>(std::count_if(ir.events.begin(), ir.events.end(), [&](const Event& e) { return e.tag == tag; }));
}

}  // namespace

TEST(Lssp, ThresholdSplit) {
  const std::vector<Sample> s{sample(0, 1024), sample(1, 2048), sample(2, 9000), sample(3, 512)};
  const auto split = lssp_split(s, 4096);
  ASSERT_EQ(split.dp.size(), 3u);
  ASSERT_EQ(split.sp.size(), 1u);
  EXPECT_EQ(split.sp[0].length, 9000);
  EXPECT_EQ(split.dp[0].length, 1024);
  EXPECT_EQ(split.dp[2].length, 512);
  EXPECT_THROW(lssp_split(s, -1), ArgumentError);
}

TEST(Lssp, EtaAtMaxIsPureDp) {
  std::mt19937_64 rng(4);
  const auto s = draw(rng, 64, 0.3);
  const Tokens mx = std::max_element(s.begin(), s.end(), [](const Sample& a, const Sample& b) { return a.length < b.length; })->length;
  const auto cost = vit_cost();
  const auto ir = lssp_schedule(lssp_deal(s, mx, 16, 8, cost), mx, encoder_layout(2, 8), Topology{2, 8}, cost);
  EXPECT_EQ(count_tag(ir, "sp_enter") + count_tag(ir, "sp_exit"), 0);
  EXPECT_EQ(count_tag(ir, "sp"), 0);
  const auto sim = simulate(ir);
  EXPECT_EQ(sim.metrics.comm_bytes.count("all_to_all"), 0u);
}

TEST(Lssp, EachSampleInExactlyOneState) {
  std::mt19937_64 rng(5);
  const auto cost = vit_cost();
  for (int t = 0; t < 20; ++t) {
    const auto s = draw(rng, 96, 0.1 + 0.05 * t);
    const auto per_rank = lssp_deal(s, 4096, 16, 8, cost);
    std::map<std::int64_t, int> seen;
    for (const auto& r : per_rank)
      for (const auto& x : r[0]) ++seen[x.id];
    ASSERT_EQ(seen.size(), s.size());
    for (const auto& [id, c] : seen) EXPECT_EQ(c, 1) << id;
    // Long samples sit on the first rank of their Ulysses group only.
    for (std::size_t r = 0; r < per_rank.size(); ++r)
      for (const auto& x : per_rank[r][0])
        if (x.length > 4096) {
          EXPECT_EQ(r % 8, 0u);
        }
  }
}

TEST(Lssp, AlternatesStatesPerMicrobatch) {
  const auto cost = vit_cost();
  std::vector<std::vector<std::vector<Sample>>> per_rank(2, std::vector<std::vector<Sample>>(2));
  per_rank[0][0] = {sample(0, 1000), sample(1, 9000)};
  per_rank[1][0] = {sample(2, 2000)};
  per_rank[0][1] = {sample(3, 500)};
  per_rank[1][1] = {sample(4, 12000)};
  const auto ir = lssp_schedule(per_rank, 4096, encoder_layout(1, 2), Topology{1, 2}, cost);
  EXPECT_TRUE(check_ir(ir).empty());
  std::vector<std::string> tags;
  for (int id : ir.program(0, Lane::Compute)) tags.push_back(ir.at(id).tag + std::to_string(ir.at(id).mb));
  EXPECT_EQ(tags, (std::vector<std::string>{"dp0", "sp0", "dp1", "sp1"}));
  EXPECT_EQ(count_tag(ir, "sp_enter"), 4);
  EXPECT_EQ(count_tag(ir, "sp_exit"), 4);
}

TEST(Lssp, AnalyticMatchesEngine) {
  std::mt19937_64 rng(6);
  const auto cost = vit_cost();
  for (int t = 0; t < 60; ++t) {
    const int sp = 1 << (rng() % 4);
    const int groups = 1 + static_cast<int>(rng() % 3);
    const int ranks = sp * groups;
    const int mbs = 1 + static_cast<int>(rng() % 3);
    std::vector<std::vector<std::vector<Sample>>> per_rank(static_cast<std::size_t>(ranks),
                                                           std::vector<std::vector<Sample>>(static_cast<std::size_t>(mbs)));
    std::int64_t id = 0;
    for (auto& r : per_rank)
      for (auto& mb : r) {
        const int n = static_cast<int>(rng() % 4);
        for (int k = 0; k < n; ++k) mb.push_back(sample(id++, 16 + static_cast<Tokens>(rng() % 12000)));
      }
    const Topology topo{std::max(1, ranks / 8), std::min(8, ranks)};
    const auto l = encoder_layout(groups, sp);
    const auto ir = lssp_schedule(per_rank, 4096, l, topo, cost);
    EXPECT_EQ(simulate(ir).metrics.makespan, lssp_analytic_makespan(per_rank, 4096, l, topo, cost)) << "trial " << t;
  }
}

TEST(Lssp, ZeroAddsOverlappableGathers) {
  const auto cost = vit_cost();
  std::vector<std::vector<std::vector<Sample>>> per_rank(2, std::vector<std::vector<Sample>>(1));
  per_rank[0][0] = {sample(0, 1000), sample(1, 9000)};
  per_rank[1][0] = {sample(2, 2000)};
  auto l = encoder_layout(1, 2);
  const auto plain = lssp_schedule(per_rank, 4096, l, Topology{1, 2}, cost);
  l.encoder.zero_stage = ZeroStage::Z3;
  const auto z = lssp_schedule(per_rank, 4096, l, Topology{1, 2}, cost);
  EXPECT_EQ(count_tag(z, "zero_dp"), 2);
  EXPECT_EQ(count_tag(z, "zero_sp"), 2);
  EXPECT_EQ(count_tag(plain, "zero_dp"), 0);
  EXPECT_GE(simulate(z).metrics.makespan, simulate(plain).metrics.makespan);
}

TEST(Lssp, CapacityAndShapeErrors) {
  auto cost = vit_cost();
  cost.rank_capacity = 4000;
  std::vector<std::vector<std::vector<Sample>>> per_rank(2, std::vector<std::vector<Sample>>(1));
  per_rank[0][0] = {sample(9, 9000)};
  EXPECT_THROW(lssp_schedule(per_rank, 4096, encoder_layout(1, 2), Topology{1, 2}, cost), ConfigError);
  per_rank[0][0] = {sample(9, 7000)};
  EXPECT_NO_THROW(lssp_schedule(per_rank, 4096, encoder_layout(1, 2), Topology{1, 2}, cost));
  EXPECT_THROW(lssp_schedule(per_rank, 4096, encoder_layout(1, 4), Topology{1, 2}, cost), ConfigError);
  EXPECT_THROW(lssp_deal({}, 4096, 6, 4, cost), ConfigError);
}

TEST(Lssp, BeatsCalibratedStaticSplitUnderMixtureShift) {
  const Topology topo{4, 8};
  auto l = encoder_layout(4, 8);
  const auto cost = vit_cost();
  const Tokens eta = 4096;
  std::mt19937_64 cal(1);
  const int dp_nodes = calibrate_static_split(draw(cal, 128, 0.10), eta, topo, cost);
  std::mt19937_64 rng(2);
  int wins = 0;
  const int n = 500;
  for (int t = 0; t < n; ++t) {
    const double p_long = 0.10 + 0.50 * t / (n - 1);
    const auto s = draw(rng, 128, p_long);
    const auto ir = lssp_schedule(lssp_deal(s, eta, 32, 8, cost), eta, l, topo, cost);
    wins += simulate(ir).metrics.makespan <= static_split_makespan(s, eta, dp_nodes, topo, cost);
  }
  EXPECT_GE(wins, n * 95 / 100);
}
