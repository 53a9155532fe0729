#include <gtest/gtest.h>

#include "mmsim/catalog.hpp"

using namespace mmsim;

TEST(Catalog, MultipliersReproduceFromCalibration) {
  const CalibrationWorkload w;
  EXPECT_NEAR(calibrate_multiplier(catalog_model("vit-1b"), w, kVitTargetFlops), kVitMultiplier, 1e-3);
  EXPECT_NEAR(calibrate_multiplier(catalog_model("usm-2b"), w, kUsmTargetFlops), kUsmMultiplier, 1e-3);
  EXPECT_NEAR(calibrate_multiplier(catalog_model("llama-12b"), w, kLlmTargetFlops), kLlmMultiplier, 1e-3);
}

TEST(Catalog, CalibratedTotalsHitTargets) {
  const CalibrationWorkload w;
  EXPECT_NEAR(expected_train_flops(catalog_model("vit-1b"), w) / kVitTargetFlops, 1.0, 1e-4);
  EXPECT_NEAR(expected_train_flops(catalog_model("usm-2b"), w) / kUsmTargetFlops, 1.0, 1e-4);
  EXPECT_NEAR(expected_train_flops(catalog_model("llama-12b"), w) / kLlmTargetFlops, 1.0, 1e-4);
}

TEST(Catalog, OrderingLlmOverVitOverUsm) {
  const CalibrationWorkload w;
  const double llm = expected_train_flops(catalog_model("llama-12b"), w);
  const double vit = expected_train_flops(catalog_model("vit-1b"), w);
  const double usm = expected_train_flops(catalog_model("usm-2b"), w);
  EXPECT_GT(llm, vit);
  EXPECT_GT(vit, usm);
}

TEST(Catalog, TokenSharesSumToOne) {
  const CalibrationWorkload w;
  const double s = w.token_share(Modality::Image) + w.token_share(Modality::Audio) + w.token_share(Modality::Text);
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_NEAR(w.token_share(Modality::Image), 4 * 3800.0 / (4 * 3800.0 + 4 * 340.0 + 2 * 1000.0), 1e-12);
}

TEST(Catalog, EveryEntryValidAndNamed) {
  for (const auto& m : model_catalog()) {
    EXPECT_NO_THROW(validate_model(m)) << m.name;
    EXPECT_EQ(catalog_model(m.name).params, m.params);
  }
  EXPECT_THROW(catalog_model("vit-3b"), ConfigError);
  EXPECT_EQ(catalog_model("usm-2b").modality, Modality::Audio);
  EXPECT_EQ(catalog_model("gpt-175b").kind, ModelSpec::Kind::LLMBackbone);
}
