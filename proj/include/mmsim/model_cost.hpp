#pragma once

// Analytic FLOP, communication and memory cost models.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmsim/common.hpp"

namespace mmsim {

struct ModelSpec {
  enum class Kind { Encoder, LLMBackbone };
  std::string name;
  Kind kind = Kind::LLMBackbone;
  Modality modality = Modality::Text;  // input modality for encoders
  double params = 0;
  int layers = 1;
  int hidden = 1;
  int heads = 1;
  int tokens_per_patch = 1;
  // Per-model calibration of FLOPs per token; also stands in for operator
  // mixes the transformer formula does not capture (convolutions in audio
  // encoders).
  double flops_multiplier = 1.0;
};

inline void validate_model(const ModelSpec& m) {
  if (m.params <= 0) throw ConfigError("model '" + m.name + "': params must be > 0");
  if (m.layers < 1) throw ConfigError("model '" + m.name + "': layers must be >= 1");
  if (m.heads < 1 || m.hidden % m.heads != 0)
    throw ConfigError("model '" + m.name + "': heads must divide hidden");
}

struct FlopBreakdown {
  double dense = 0;
  double attention = 0;
  double total() const { return dense + attention; }
};

// Forward FLOPs split into the dense 2*N*tokens term and the attention term
// 2*layers*hidden*tokens*seq_len, both scaled by the calibration multiplier.
inline FlopBreakdown flops_forward_breakdown(const ModelSpec& m, Tokens tokens, Tokens seq_len) {
  if (tokens < 0) throw ArgumentError("tokens must be >= 0");
  if (seq_len < 1) throw ArgumentError("seq_len must be >= 1");
  const double t = static_cast<double>(tokens);
  FlopBreakdown f;
  f.dense = 2.0 * m.params * t * m.flops_multiplier;
  f.attention = 2.0 * m.layers * static_cast<double>(m.hidden) * t * static_cast<double>(seq_len) *
                m.flops_multiplier;
  return f;
}

inline double flops_forward(const ModelSpec& m, Tokens tokens, Tokens seq_len) {
  return flops_forward_breakdown(m, tokens, seq_len).total();
}

inline double flops_backward(const ModelSpec& m, Tokens tokens, Tokens seq_len) {
  return 2.0 * flops_forward(m, tokens, seq_len);
}

// Forward + backward, plus one extra forward when activations are recomputed.
inline double flops_train(const ModelSpec& m, Tokens tokens, Tokens seq_len, bool recompute = false) {
  return (recompute ? 4.0 : 3.0) * flops_forward(m, tokens, seq_len);
}

enum class Primitive { AllGather, AllToAll, AllReduce, ReduceScatter, P2P };

inline constexpr std::array<Primitive, 5> kAllPrimitives = {
    Primitive::AllGather, Primitive::AllToAll, Primitive::AllReduce, Primitive::ReduceScatter,
    Primitive::P2P};

inline std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::AllGather: return "all_gather";
    case Primitive::AllToAll: return "all_to_all";
    case Primitive::AllReduce: return "all_reduce";
    case Primitive::ReduceScatter: return "reduce_scatter";
    case Primitive::P2P: return "p2p";
  }
  return "?";
}

inline Primitive parse_primitive(std::string_view s) {
  for (Primitive p : kAllPrimitives)
    if (to_string(p) == s) return p;
  throw ArgumentError("unknown collective primitive '" + std::string(s) + "'");
}

struct LinkCost {
  double alpha = 0;  // seconds
  double beta = 0;   // seconds per byte
};

struct CommModel {
  LinkCost intra{5e-6, 1.0 / 150e9};
  LinkCost inter{10e-6, 1.0 / 37.5e9};
  // Multiplicative overhead per primitive, indexed by Primitive.
  std::array<double, 5> overhead{1.0, 1.0, 1.0, 1.0, 1.0};
};

inline void validate_comm(const CommModel& c) {
  if (c.intra.alpha <= 0 || c.inter.alpha <= 0 || c.intra.beta <= 0 || c.inter.beta <= 0)
    throw ConfigError("comm: alpha and beta must be > 0");
  if (!(c.intra.beta < c.inter.beta)) throw ConfigError("comm: intra-node beta must be below inter-node beta");
}

// Per-rank volume factor of a primitive over a group of g ranks.
inline double volume_factor(Primitive p, std::size_t g) {
  if (p == Primitive::P2P) return 1.0;
  if (g <= 1) return 0.0;
  return static_cast<double>(g - 1) / static_cast<double>(g);
}

// Alpha-beta time for `bytes` per rank; `intra_node` selects the link class.
inline double comm_time(const CommModel& model, Primitive p, Bytes bytes, std::size_t group_size,
                        bool intra_node) {
  if (group_size == 0) throw ArgumentError("communication group must be nonempty");
  if (bytes < 0) throw ArgumentError("bytes must be >= 0");
  const LinkCost& link = intra_node ? model.intra : model.inter;
  return link.alpha + link.beta * static_cast<double>(bytes) * volume_factor(p, group_size) *
                          model.overhead[static_cast<std::size_t>(p)];
}

inline double comm_time(const CommModel& model, std::string_view primitive, Bytes bytes,
                        std::size_t group_size, bool intra_node) {
  return comm_time(model, parse_primitive(primitive), bytes, group_size, intra_node);
}

enum class ActivationPolicy { Keep, Offload, Recompute };

inline std::string_view to_string(ActivationPolicy p) {
  switch (p) {
    case ActivationPolicy::Keep: return "keep";
    case ActivationPolicy::Offload: return "offload";
    case ActivationPolicy::Recompute: return "recompute";
  }
  return "?";
}

struct MemoryModel {
  double bytes_per_param_state = 16.0;  // bf16 param + grad + fp32 Adam states
  // Activation bytes per token per layer = activation_bytes_per_hidden * hidden.
  double activation_bytes_per_hidden = 34.0;
  ActivationPolicy encoder_policy = ActivationPolicy::Keep;
  ActivationPolicy llm_policy = ActivationPolicy::Keep;
};

inline double activation_bytes_per_token_layer(const ModelSpec& m, const MemoryModel& mem) {
  return mem.activation_bytes_per_hidden * static_cast<double>(m.hidden);
}

struct ResidencyDelta {
  Nanos time = 0;
  Tokens delta = 0;  // + on allocation, - on release
};

struct MemoryEstimate {
  double peak_bytes = 0;
  double param_bytes = 0;
  double activation_peak_bytes = 0;
  double recompute_flops = 0;  // extra forward FLOPs under Recompute
  double offload_bytes = 0;    // D2H + H2D traffic under Offload
};

// Peak bytes of param state plus resident activations along a residency
// timeline. Deltas at equal times apply releases first.
inline MemoryEstimate peak_memory(const ModelSpec& m, const MemoryModel& mem,
                                  std::span<const ResidencyDelta> timeline, ActivationPolicy policy,
                                  double param_shard_fraction = 1.0) {
  std::vector<ResidencyDelta> sorted(timeline.begin(), timeline.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ResidencyDelta& a, const ResidencyDelta& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.delta < b.delta;
  });
  Tokens resident = 0, peak_resident = 0, largest_alloc = 0, allocated = 0;
  for (const auto& d : sorted) {
    resident += d.delta;
    if (resident < 0) throw InternalError("negative activation residency");
    peak_resident = std::max(peak_resident, resident);
    if (d.delta > 0) {
      largest_alloc = std::max(largest_alloc, d.delta);
      allocated += d.delta;
    }
  }
  const double per_token_layer = activation_bytes_per_token_layer(m, mem);
  MemoryEstimate e;
  e.param_bytes = m.params * mem.bytes_per_param_state * param_shard_fraction;
  switch (policy) {
    case ActivationPolicy::Keep:
      e.activation_peak_bytes = static_cast<double>(peak_resident) * m.layers * per_token_layer;
      break;
    case ActivationPolicy::Offload:
      // Working layer plus one staging buffer for the copy stream.
      e.activation_peak_bytes =
          std::min(2.0 * static_cast<double>(largest_alloc) * per_token_layer,
                   static_cast<double>(peak_resident) * m.layers * per_token_layer);
      e.offload_bytes = 2.0 * static_cast<double>(allocated) * m.layers * per_token_layer;
      break;
    case ActivationPolicy::Recompute:
      e.activation_peak_bytes = std::min(static_cast<double>(largest_alloc) * per_token_layer,
                                         static_cast<double>(peak_resident) * m.layers * per_token_layer);
      e.recompute_flops = flops_forward(m, allocated, std::max<Tokens>(1, largest_alloc));
      break;
  }
  e.peak_bytes = e.param_bytes + e.activation_peak_bytes;
  return e;
}

// Device-level compute speed used to turn FLOPs into time.
struct Hardware {
  double peak_flops = 312e12;  // per GPU
  double efficiency = 0.5;     // achieved fraction of peak
  double memory_bytes = 80e9;  // per GPU
};

inline Nanos compute_nanos(double flops, const Hardware& hw, int gpus) {
  if (flops <= 0) return 0;
  return seconds_to_nanos(flops / (hw.peak_flops * hw.efficiency * std::max(1, gpus)));
}

}  // namespace mmsim
