#include <gtest/gtest.h>

#include <vector>

#include "mmsim/model_cost.hpp"

using namespace mmsim;

namespace {

ModelSpec toy() {
  ModelSpec m;
  m.name = "toy";
  m.params = 1e9;
  m.layers = 24;
  m.hidden = 2048;
  m.heads = 16;
  return m;
}

}  // namespace

TEST(Flops, ZeroTokens) {
  EXPECT_EQ(flops_forward(toy(), 0, 4096), 0.0);
  EXPECT_EQ(flops_train(toy(), 0, 4096, true), 0.0);
}

TEST(Flops, ClosedForm) {
  const auto f = flops_forward_breakdown(toy(), 1000, 4096);
  EXPECT_DOUBLE_EQ(f.dense, 2.0 * 1e9 * 1000);
  EXPECT_DOUBLE_EQ(f.attention, 2.0 * 24 * 2048 * 1000.0 * 4096);
}

TEST(Flops, DenseLinearInTokensAttentionInTokensTimesSeq) {
  const auto m = toy();
  const auto a = flops_forward_breakdown(m, 700, 2048);
  const auto b = flops_forward_breakdown(m, 1400, 2048);
  EXPECT_DOUBLE_EQ(b.dense / a.dense, 2.0);
  EXPECT_DOUBLE_EQ(b.attention / a.attention, 2.0);
  const auto c = flops_forward_breakdown(m, 700, 4096);
  EXPECT_DOUBLE_EQ(c.dense, a.dense);
  EXPECT_DOUBLE_EQ(c.attention / a.attention, 2.0);
}

TEST(Flops, BackwardIsTwiceForwardAndRecomputeAddsOne) {
  const auto m = toy();
  for (Tokens t : {1, 17, 4096}) {
    EXPECT_DOUBLE_EQ(flops_backward(m, t, 8192), 2.0 * flops_forward(m, t, 8192));
    EXPECT_DOUBLE_EQ(flops_train(m, t, 8192, true) - flops_train(m, t, 8192), flops_forward(m, t, 8192));
  }
}

TEST(Flops, MultiplierScalesBothTerms) {
  auto m = toy();
  const double base = flops_forward(m, 100, 100);
  m.flops_multiplier = 3.5;
  EXPECT_DOUBLE_EQ(flops_forward(m, 100, 100), 3.5 * base);
}

TEST(Flops, DomainErrors) {
  EXPECT_THROW(flops_forward(toy(), -1, 10), ArgumentError);
  EXPECT_THROW(flops_forward(toy(), 1, 0), ArgumentError);
}

TEST(ModelSpec, Validation) {
  auto m = toy();
  EXPECT_NO_THROW(validate_model(m));
  m.heads = 3;
  EXPECT_THROW(validate_model(m), ConfigError);
  m = toy();
  m.params = 0;
  EXPECT_THROW(validate_model(m), ConfigError);
  m = toy();
  m.layers = 0;
  EXPECT_THROW(validate_model(m), ConfigError);
}

TEST(Comm, LatencyFloor) {
  const CommModel c;
  EXPECT_DOUBLE_EQ(comm_time(c, Primitive::AllToAll, 0, 8, true), c.intra.alpha);
  EXPECT_DOUBLE_EQ(comm_time(c, Primitive::P2P, 0, 2, false), c.inter.alpha);
}

TEST(Comm, VolumeFactors) {
  EXPECT_DOUBLE_EQ(volume_factor(Primitive::AllToAll, 4), 0.75);
  EXPECT_DOUBLE_EQ(volume_factor(Primitive::AllGather, 8), 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(volume_factor(Primitive::AllReduce, 2), 0.5);
  EXPECT_DOUBLE_EQ(volume_factor(Primitive::P2P, 2), 1.0);
  EXPECT_DOUBLE_EQ(volume_factor(Primitive::AllToAll, 1), 0.0);
  // Uniform all-to-all: each of g ranks keeps 1/g of its S bytes.
  const CommModel c;
  const Bytes s = 1 << 20;
  const double t = comm_time(c, Primitive::AllToAll, s, 4, true);
  EXPECT_NEAR((t - c.intra.alpha) / c.intra.beta, s * 3.0 / 4.0, 1e-6);
}

TEST(Comm, IntraFasterThanInterAndMonotone) {
  const CommModel c;
  for (Primitive p : kAllPrimitives) {
    double prev = -1;
    for (Bytes b : {Bytes{0}, Bytes{1} << 10, Bytes{1} << 20, Bytes{1} << 30}) {
      const double intra = comm_time(c, p, b, 8, true);
      const double inter = comm_time(c, p, b, 8, false);
      EXPECT_LT(intra, inter);
      EXPECT_GE(intra, prev);
      prev = intra;
    }
  }
}

TEST(Comm, UnknownPrimitiveAndBadGroups) {
  const CommModel c;
  EXPECT_THROW(comm_time(c, "broadcast", 10, 2, true), ArgumentError);
  EXPECT_THROW(comm_time(c, Primitive::P2P, 10, 0, true), ArgumentError);
  EXPECT_THROW(comm_time(c, Primitive::P2P, -1, 2, true), ArgumentError);
  EXPECT_EQ(parse_primitive("all_to_all"), Primitive::AllToAll);
}

TEST(Comm, Validation) {
  CommModel c;
  EXPECT_NO_THROW(validate_comm(c));
  c.intra.beta = c.inter.beta * 2;
  EXPECT_THROW(validate_comm(c), ConfigError);
}

TEST(Memory, KeepClosedForm) {
  const auto m = toy();
  const MemoryModel mem;
  const std::vector<ResidencyDelta> tl{{0, 4096}, {10, -4096}};
  const auto e = peak_memory(m, mem, tl, ActivationPolicy::Keep);
  EXPECT_DOUBLE_EQ(e.activation_peak_bytes, 4096.0 * m.layers * mem.activation_bytes_per_hidden * m.hidden);
  EXPECT_DOUBLE_EQ(e.param_bytes, m.params * mem.bytes_per_param_state);
  EXPECT_DOUBLE_EQ(e.peak_bytes, e.param_bytes + e.activation_peak_bytes);
}

TEST(Memory, RecomputeHoldsOneLayer) {
  const auto m = toy();
  const MemoryModel mem;
  const std::vector<ResidencyDelta> tl{{0, 4096}, {10, -4096}};
  const auto e = peak_memory(m, mem, tl, ActivationPolicy::Recompute);
  EXPECT_DOUBLE_EQ(e.activation_peak_bytes, 4096.0 * activation_bytes_per_token_layer(m, mem));
  EXPECT_GT(e.recompute_flops, 0);
}

TEST(Memory, PolicyDominanceAndMonotonicity) {
  const auto m = toy();
  const MemoryModel mem;
  std::vector<ResidencyDelta> tl;
  double prev_keep = 0;
  for (int i = 0; i < 8; ++i) {
    tl.push_back({i, 1000 + 100 * i});
    const auto keep = peak_memory(m, mem, tl, ActivationPolicy::Keep).peak_bytes;
    const auto off = peak_memory(m, mem, tl, ActivationPolicy::Offload).peak_bytes;
    const auto rc = peak_memory(m, mem, tl, ActivationPolicy::Recompute).peak_bytes;
    EXPECT_LE(rc, off);
    EXPECT_LE(off, keep);
    EXPECT_GE(keep, prev_keep);
    prev_keep = keep;
  }
}

TEST(Memory, ReleasesApplyFirstAtEqualTimes) {
  const std::vector<ResidencyDelta> tl{{0, 100}, {5, 100}, {5, -100}};
  const auto e = peak_memory(toy(), MemoryModel{}, tl, ActivationPolicy::Keep);
  EXPECT_DOUBLE_EQ(e.activation_peak_bytes, 100.0 * toy().layers * activation_bytes_per_token_layer(toy(), {}));
}

TEST(Memory, NegativeResidencyIsInternalError) {
  const std::vector<ResidencyDelta> tl{{0, 10}, {1, -20}};
  EXPECT_THROW(peak_memory(toy(), MemoryModel{}, tl, ActivationPolicy::Keep), InternalError);
}

TEST(Hardware, ComputeNanos) {
  const Hardware hw{100e12, 0.5, 80e9};
  EXPECT_EQ(compute_nanos(50e12, hw, 1), kNanosPerSecond);
  EXPECT_EQ(compute_nanos(50e12, hw, 4), kNanosPerSecond / 4);
  EXPECT_EQ(compute_nanos(0, hw, 1), 0);
}
