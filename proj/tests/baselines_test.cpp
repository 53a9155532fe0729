#include <gtest/gtest.h>

#include <random>

#include "mmsim/baselines.hpp"

using namespace mmsim;

namespace {

constexpr Nanos ms = 1'000'000;

Nanos busy_on(const ScheduleIR& ir, const SimResult& sim, int rank) {
  Nanos t = 0;
  for (int id : ir.program(rank, Lane::Compute)) {
    const auto& en = sim.timeline.entries[static_cast<std::size_t>(id)];
    t += en.end - en.start;
  }
  return t;
}

}  // namespace

TEST(Prepended, FusesEncoderIntoStageZero) {
  const auto llm = uniform_pipeline_costs(2, 4, 10 * ms, 20 * ms);
  const auto ir = build_prepended(llm, uniform_encoder_costs("vit", 1, 4, 3 * ms, 6 * ms, 100));
  EXPECT_TRUE(check_ir(ir).empty());
  for (const auto& e : ir.events) {
    if (e.type == EventType::EncFwd || e.type == EventType::EncBwd) ADD_FAILURE() << "separate encoder event";
    if (e.stage == 0 && e.type == EventType::LlmFwd) {
      EXPECT_EQ(e.duration, 13 * ms);
    }
    if (e.stage == 0 && e.type == EventType::LlmBwd) {
      EXPECT_EQ(e.duration, 26 * ms);
    }
    if (e.stage == 1) {
      EXPECT_EQ(e.duration, e.type == EventType::LlmFwd ? 10 * ms : 20 * ms);
    }
  }
}

TEST(Prepended, StageZeroShareGrowsWithImageRatio) {
  // Encoder cost per microbatch proportional to its image share.
  double prev = 0;
  for (int img : {1, 3, 5, 7, 9}) {
    const auto llm = uniform_pipeline_costs(4, 8, 10 * ms, 20 * ms);
    const Nanos ef = img * ms;
    const auto ir = build_prepended(llm, uniform_encoder_costs("vit", 1, 8, ef, 2 * ef));
    const auto sim = simulate(ir);
    const double ratio = static_cast<double>(busy_on(ir, sim, 0)) / static_cast<double>(busy_on(ir, sim, 3));
    EXPECT_GT(ratio, prev) << img << ":" << 10 - img;
    prev = ratio;
  }
}

TEST(Disaggregated, IdleEncoderBlockWithNoImages) {
  const auto llm = uniform_pipeline_costs(2, 4, 10 * ms, 20 * ms);
  const auto ir = build_disaggregated(llm, uniform_encoder_costs("vit", 1, 4, 0, 0), 2);
  EXPECT_TRUE(check_ir(ir).empty());
  const auto sim = simulate(ir);
  EXPECT_DOUBLE_EQ(sim.metrics.role_bubble_ratio.at("encoder"), 1.0);
  EXPECT_LT(sim.metrics.role_bubble_ratio.at("llm"), 1.0);
  EXPECT_EQ(ir.rank_roles[0], "encoder");
  EXPECT_EQ(ir.rank_roles[2], "llm");
}

TEST(Disaggregated, FeedsStageZeroOverP2p) {
  auto enc = uniform_encoder_costs("vit", 2, 6, 4 * ms, 8 * ms);
  enc.p2p = ms;
  enc.p2p_bytes = 1 << 20;
  const auto llm = uniform_pipeline_costs(3, 6, 5 * ms, 10 * ms, 2);
  const auto ir = build_disaggregated(llm, enc, 3);
  EXPECT_TRUE(check_ir(ir).empty());
  const auto sim = simulate(ir);
  EXPECT_TRUE(check_timeline(ir, sim.timeline).empty());
  int outs = 0, grads = 0;
  for (const auto& e : ir.events) {
    outs += e.tag == "enc_out";
    grads += e.tag == "enc_grad";
    if (e.type == EventType::EncFwd || e.type == EventType::EncBwd) {
      EXPECT_LT(e.rank, 3);
    }
  }
  EXPECT_EQ(outs, 12);
  EXPECT_EQ(grads, 12);
  EXPECT_GT(sim.metrics.role_bubble_ratio.at("encoder"), 0.0);
  EXPECT_THROW(build_disaggregated(llm, enc, 0), ConfigError);
}

TEST(Optimus, ReferenceEqualsActualHasNoOverflow) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 30; ++t) {
    const int pp = 2 + static_cast<int>(rng() % 3);
    const int m = pp + static_cast<int>(rng() % 5);
    const auto llm = uniform_pipeline_costs(pp, m, 10 * ms, 20 * ms);
    // Light encoders: the LLM warmup and drain bubbles have room for them.
    const Nanos ef = static_cast<Nanos>(1 + rng() % 3) * ms / 2;
    const auto enc = uniform_encoder_costs("vit", 1, m, ef, 2 * ef);
    const auto plan = plan_optimus(llm, enc);
    EXPECT_TRUE(plan.overflow_fwd.empty()) << "trial " << t;
    EXPECT_TRUE(plan.overflow_bwd.empty()) << "trial " << t;
    const auto ir = build_optimus(llm, enc, plan);
    EXPECT_TRUE(check_ir(ir).empty());
    EXPECT_EQ(overflow_count(ir), 0u);
    EXPECT_TRUE(validate_dataflow(plan.flow, build_1f1b(llm), m).empty());
  }
}

TEST(Optimus, HeavyEncodersOverflowSerially) {
  const auto llm = uniform_pipeline_costs(2, 4, 10 * ms, 20 * ms);
  const auto enc = uniform_encoder_costs("vit", 1, 4, 40 * ms, 80 * ms);
  const auto plan = plan_optimus(llm, enc);
  EXPECT_FALSE(plan.overflow_fwd.empty());
  const auto ir = build_optimus(llm, enc, plan);
  EXPECT_TRUE(check_ir(ir).empty());
  EXPECT_EQ(overflow_count(ir), plan.overflow_fwd.size() + plan.overflow_bwd.size());
  EXPECT_TRUE(check_timeline(ir, simulate(ir).timeline).empty());
}

TEST(Optimus, StalePlanSlowsDownWhenWorkloadShifts) {
  const auto llm = uniform_pipeline_costs(4, 8, 10 * ms, 20 * ms);
  const auto ref = uniform_encoder_costs("vit", 1, 8, ms, 2 * ms);
  const auto plan = plan_optimus(llm, ref);
  const auto heavy = uniform_encoder_costs("vit", 1, 8, 8 * ms, 16 * ms);
  const Nanos stale = simulate(build_optimus(llm, heavy, plan)).metrics.makespan;
  const Nanos fresh_ref = simulate(build_optimus(llm, ref, plan)).metrics.makespan;
  EXPECT_GT(stale, fresh_ref);
}
