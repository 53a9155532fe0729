#include <gtest/gtest.h>

#include <set>

#include "mmsim/schedule.hpp"
#include "mmsim/topology.hpp"

using namespace mmsim;

namespace {

ParallelLayout two_node_layout() {
  ParallelLayout l;
  l.llm = {2, 4, 2, 1};
  l.encoder.dp = 16;
  l.encoder.ulysses_sp = 1;
  l.colocation = {{"vit"}, {"vit"}};
  l.max_seq_len = 16384;
  l.lssp_eta = 4096;
  l.reorder_group_size = 8;
  return l;
}

bool has_message(const std::vector<Violation>& v, const std::string& msg) {
  for (const auto& x : v)
    if (x.message == msg) return true;
  return false;
}

}  // namespace

TEST(Topology, RankMapping) {
  const Topology t{2, 8};
  EXPECT_EQ(t.total_ranks(), 16);
  EXPECT_EQ(t.rank(1, 3), 11);
  EXPECT_EQ(t.node_of(11), 1);
  const std::vector<int> a{0, 7}, b{7, 8};
  EXPECT_TRUE(t.same_node(a));
  EXPECT_FALSE(t.same_node(b));
}

TEST(Topology, CommPicksLinkFromLocality) {
  const Topology t{2, 8};
  const CommModel c;
  const std::vector<int> intra{0, 1, 2, 3}, inter{6, 7, 8, 9};
  EXPECT_LT(comm_time(c, Primitive::AllToAll, 1 << 20, intra, t), comm_time(c, Primitive::AllToAll, 1 << 20, inter, t));
}

TEST(Layout, ValidTwoNodeLayout) { EXPECT_TRUE(validate_layout({2, 8}, two_node_layout()).empty()); }

TEST(Layout, EncoderSpCrossingNodes) {
  auto l = two_node_layout();
  l.encoder.dp = 1;
  l.encoder.ulysses_sp = 16;
  const auto v = validate_layout({2, 8}, l);
  ASSERT_TRUE(has_message(v, "encoder SP group crosses nodes"));
  for (const auto& x : v)
    if (x.message == "encoder SP group crosses nodes") {
      EXPECT_EQ(x.group.rfind("encoder sp group [0,1,", 0), 0u);
    }
}

TEST(Layout, HeterogeneousColocation) {
  auto l = two_node_layout();
  l.colocation = {{"vit", "usm"}, {"vit"}};
  const auto v = validate_layout({2, 8}, l);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].message, "heterogeneous encoder assignment");
  EXPECT_EQ(v[0].group, "colocation stage 1");
}

TEST(Layout, DegreeProductsMustCoverCluster) {
  auto l = two_node_layout();
  l.llm.dp = 1;
  l.encoder.dp = 8;
  const auto v = validate_layout({2, 8}, l);
  EXPECT_EQ(v.size(), 2u);
}

TEST(Layout, TpGroupMustStayInNode) {
  auto l = two_node_layout();
  l.llm = {1, 16, 1, 1};
  l.colocation = {{"vit"}};
  EXPECT_TRUE(has_message(validate_layout({2, 8}, l), "LLM TP group crosses nodes"));
}

TEST(Layout, EncoderPipelineRejected) {
  auto l = two_node_layout();
  l.encoder.pp = 2;
  EXPECT_TRUE(has_message(validate_layout({2, 8}, l), "encoder pipeline parallelism is not supported"));
}

TEST(Layout, EtaRange) {
  auto l = two_node_layout();
  l.lssp_eta = 0;
  EXPECT_FALSE(validate_layout({2, 8}, l).empty());
  l.lssp_eta = l.max_seq_len + 1;
  EXPECT_FALSE(validate_layout({2, 8}, l).empty());
}

TEST(Layout, ReorderGroupsAlignWithNodes) {
  auto l = two_node_layout();
  l.reorder_group_size = 16;
  EXPECT_TRUE(validate_layout({2, 8}, l).empty());
  EXPECT_EQ(reorder_groups(l, {2, 8}).size(), 1u);
  l.reorder_group_size = 3;
  EXPECT_FALSE(validate_layout({2, 8}, l).empty());
}

TEST(Layout, GroupsPartitionRanks) {
  ParallelLayout l;
  l.llm = {2, 2, 2, 2};
  std::set<int> seen;
  for (int p = 0; p < 2; ++p)
    for (int d = 0; d < 2; ++d)
      for (int s = 0; s < 2; ++s)
        for (int r : llm_tp_group(l, p, d, s)) EXPECT_TRUE(seen.insert(r).second);
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(llm_stage_worker_ranks(l, 1, 1).size(), 4u);
  EXPECT_EQ(llm_dp_group(l, 0, 0, 0), (std::vector<int>{0, 4}));
}

TEST(Baseline, DisaggregatedRankArithmetic) {
  auto l = two_node_layout();
  l.llm = {1, 4, 2, 1};
  EXPECT_TRUE(validate_baseline({2, 8}, {BaselineKind::Disaggregated, 8}, l).empty());
  EXPECT_FALSE(validate_baseline({2, 8}, {BaselineKind::Disaggregated, 4}, l).empty());
  l.llm = {1, 4, 3, 1};
  EXPECT_TRUE(validate_baseline({2, 8}, {BaselineKind::Disaggregated, 4}, l).empty());
  // 12 LLM ranks + 4 encoder ranks, but 4 is not a multiple of tp*sp = 3.
  l.llm = {1, 3, 4, 1};
  const auto v = validate_baseline({2, 8}, {BaselineKind::Disaggregated, 4}, l);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].message, "encoder_ranks must be a multiple of tp*sp");
  EXPECT_TRUE(validate_baseline({2, 8}, {BaselineKind::UnimodalPrepended, 0}, l).empty());
}

TEST(ScaleDown, FactorOneIsIdentity) {
  const auto l = two_node_layout();
  const auto p = scale_down_proxy({2, 8}, l, 32, 1);
  EXPECT_EQ(p.topology.nodes, 2);
  EXPECT_EQ(p.layout.llm.dp, l.llm.dp);
  EXPECT_EQ(p.global_batch_size, 32);
}

TEST(ScaleDown, LargeClusterByFour) {
  ParallelLayout l;
  l.llm = {16, 8, 4, 1};
  l.encoder = {128, 4};
  l.colocation.assign(4, {"vit"});
  l.max_seq_len = l.lssp_eta = 16384;
  l.reorder_group_size = 8;
  const Topology t{64, 8};
  ASSERT_TRUE(validate_layout(t, l).empty());
  const auto p = scale_down_proxy(t, l, 256, 4);
  EXPECT_EQ(p.topology.total_ranks(), 128);
  EXPECT_EQ(p.layout.llm.dp, 4);
  EXPECT_EQ(p.layout.llm.tp, 8);
  EXPECT_EQ(p.layout.llm.pp, 4);
  EXPECT_TRUE(validate_layout(p.topology, p.layout).empty());
  // Same per-replica microbatch count, so the per-rank event sequence of one
  // replica is unchanged.
  const int mbs_full = 256 / l.llm.dp, mbs_proxy = p.global_batch_size / p.layout.llm.dp;
  EXPECT_EQ(mbs_full, mbs_proxy);
  const auto full = compute_shape(build_1f1b(uniform_pipeline_costs(l.llm.pp, mbs_full, 1, 2, l.llm.dp)));
  const auto proxy = compute_shape(build_1f1b(uniform_pipeline_costs(p.layout.llm.pp, mbs_proxy, 1, 2, p.layout.llm.dp)));
  ASSERT_EQ(full.size(), 64u);
  ASSERT_EQ(proxy.size(), 16u);
  for (int r = 0; r < 16; ++r) EXPECT_EQ(proxy[static_cast<std::size_t>(r)], full[static_cast<std::size_t>(r)]);
}

TEST(ScaleDown, NonDivisibleFactor) {
  ParallelLayout l;
  l.llm.dp = 16;
  l.encoder.dp = 16;
  EXPECT_THROW(scale_down_proxy({16, 8}, l, 48, 3), ArgumentError);
  EXPECT_THROW(scale_down_proxy({16, 8}, l, 48, 0), ArgumentError);
}
