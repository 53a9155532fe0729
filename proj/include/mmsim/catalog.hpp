#pragma once

// Built-in model specs and the FLOP calibration that fixes their multipliers.

#include <cmath>
#include <string>
#include <vector>

#include "mmsim/model_cost.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

// Reference triple-modality batch: 32 sequences of 16K tokens, sample ratio
// image:audio:text = 4:4:2, with the per-model fwd+bwd totals it must reach.
struct CalibrationWorkload {
  Tokens batch_tokens = 32 * 16384;
  struct Part {
    Modality modality;
    double samples_ratio;
    double mean_len;
    double p95_len;
  };
  std::vector<Part> parts{{Modality::Image, 4, 3800, 8000},
                          {Modality::Audio, 4, 340, 700},
                          {Modality::Text, 2, 1000, 2500}};

  double token_share(Modality m) const {
    double all = 0, mine = 0;
    for (const auto& p : parts) {
      all += p.samples_ratio * p.mean_len;
      if (p.modality == m) mine += p.samples_ratio * p.mean_len;
    }
    return mine / all;
  }
};

inline constexpr double kVitTargetFlops = 14.7e15;
inline constexpr double kUsmTargetFlops = 4.54e15;
inline constexpr double kLlmTargetFlops = 29.0e15;

// Expected fwd+bwd FLOPs of `m` over the calibration batch, lengths drawn from
// each part's lognormal (E[t^2] = exp(2mu + 2sigma^2)).
inline double expected_train_flops(const ModelSpec& m, const CalibrationWorkload& w) {
  double fwd = 0;
  for (const auto& p : w.parts) {
    if (m.kind == ModelSpec::Kind::Encoder && p.modality != m.modality) continue;
    const double tokens = w.token_share(p.modality) * static_cast<double>(w.batch_tokens);
    const double samples = tokens / p.mean_len;
    const auto [mu, sigma] = fit_lognormal(p.mean_len, p.p95_len);
    const double t2 = std::exp(2 * mu + 2 * sigma * sigma) * m.tokens_per_patch * m.tokens_per_patch;
    fwd += 2.0 * m.params * tokens * m.tokens_per_patch + 2.0 * m.layers * static_cast<double>(m.hidden) * samples * t2;
  }
  return 3.0 * fwd * m.flops_multiplier;
}

inline double calibrate_multiplier(ModelSpec m, const CalibrationWorkload& w, double target) {
  m.flops_multiplier = 1.0;
  return target / expected_train_flops(m, w);
}

inline constexpr double kVitMultiplier = 4.4334;
inline constexpr double kUsmMultiplier = 9.7059;
inline constexpr double kLlmMultiplier = 0.7147;

inline ModelSpec make_model(std::string name, ModelSpec::Kind kind, Modality modality, double params, int layers,
                            int hidden, int heads, double multiplier) {
  ModelSpec m;
  m.name = std::move(name);
  m.kind = kind;
  m.modality = modality;
  m.params = params;
  m.layers = layers;
  m.hidden = hidden;
  m.heads = heads;
  m.flops_multiplier = multiplier;
  return m;
}

// Encoders of one family share the multiplier calibrated on its smallest
// member; both LLM families share the LLaMA-12B one.
inline std::vector<ModelSpec> model_catalog() {
  using K = ModelSpec::Kind;
  return {
      make_model("vit-1b", K::Encoder, Modality::Image, 1.0e9, 40, 1408, 16, kVitMultiplier),
      make_model("vit-2.4b", K::Encoder, Modality::Image, 2.4e9, 48, 2048, 16, kVitMultiplier),
      make_model("vit-10b", K::Encoder, Modality::Image, 1.0e10, 48, 4096, 32, kVitMultiplier),
      make_model("usm-2b", K::Encoder, Modality::Audio, 2.0e9, 32, 2048, 16, kUsmMultiplier),
      make_model("llama-12b", K::LLMBackbone, Modality::Text, 1.2e10, 40, 5120, 40, kLlmMultiplier),
      make_model("llama-70b", K::LLMBackbone, Modality::Text, 7.0e10, 80, 8192, 64, kLlmMultiplier),
      make_model("gpt-175b", K::LLMBackbone, Modality::Text, 1.75e11, 96, 12288, 96, kLlmMultiplier),
  };
}

inline ModelSpec catalog_model(const std::string& name) {
  for (auto& m : model_catalog())
    if (m.name == name) return m;
  throw ConfigError("unknown catalog model '" + name + "'");
}

}  // namespace mmsim
