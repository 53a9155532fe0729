#pragma once

// Experiment configuration: JSON schema, parsing with path-qualified errors,
// and whole-config validation.

#include <cstdint>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmsim/common.hpp"
#include "mmsim/model_cost.hpp"
#include "mmsim/topology.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

inline constexpr int kSchemaVersion = 1;

enum class Architecture { Multiplexed, Prepended, Disaggregated, Optimus };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Multiplexed: return "multiplexed";
    case Architecture::Prepended: return "prepended";
    case Architecture::Disaggregated: return "disaggregated";
    case Architecture::Optimus: return "optimus";
  }
  return "?";
}

struct Mixture {
  double image = 1;
  double text = 1;
  std::string label() const {
    std::ostringstream os;
    os << image << ':' << text;
    return os.str();
  }
  friend bool operator==(const Mixture&, const Mixture&) = default;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name;
  Topology topology;
  Hardware hardware;
  CommModel comm;
  MemoryModel memory;
  std::map<std::string, ModelSpec> models;
  std::string llm;
  DatasetRegistry datasets;
  PhaseSchedule phases;
  std::vector<Mixture> mixture_sweep;
  std::vector<Tokens> seq_len_sweep;          // empty = batch.seq_len only
  std::vector<double> encoder_scale_sweep;    // empty = 1.0 only
  int global_batch_size = 1;
  Tokens seq_len = 1;
  int microbatch_size = 1;
  ParallelLayout layout;
  int ondemand_window = 0;    // 0 = pp
  int microbatch_window = 1;
  Tokens cp_threshold = 0;    // 0 = seq_len / sp
  std::vector<Architecture> architectures;
  int disagg_encoder_ranks = 0;
  LlmDegrees disagg_llm;
  Mixture optimus_reference{5, 5};
  std::uint64_t seed = 1;
  int steps = 1;
  std::string output_dir = "mmsim-out";

  // Encoder names colocated with every LLM stage.
  const std::vector<std::string>& encoders() const {
    static const std::vector<std::string> none;
    return layout.colocation.empty() ? none : layout.colocation.front();
  }
};

namespace detail {

using nlohmann::json;

inline std::pair<int, int> line_col(const std::string& text, std::size_t offset) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// JSON cursor that remembers its dotted path for error messages.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return j_; }
  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  Node at(const std::string& key) const {
    if (!j_.is_object()) fail("expected an object");
    if (!j_.contains(key)) throw ConfigError(child(key) + ": missing required field");
    return Node(j_.at(key), child(key));
  }
  Node at(std::size_t i) const { return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }
  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }

  std::int64_t integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<std::int64_t>();
  }
  double number() const {
    if (!j_.is_number()) fail("expected a number");
    return j_.get<double>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }

  std::int64_t integer(const std::string& key, std::int64_t dflt) const { return has(key) ? at(key).integer() : dflt; }
  double number(const std::string& key, double dflt) const { return has(key) ? at(key).number() : dflt; }
  std::string string(const std::string& key, const std::string& dflt) const {
    return has(key) ? at(key).string() : dflt;
  }

  std::int64_t positive(const std::string& key) const {
    const auto v = at(key).integer();
    if (v < 1) at(key).fail("must be >= 1");
    return v;
  }
  std::int64_t positive(const std::string& key, std::int64_t dflt) const { return has(key) ? positive(key) : dflt; }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
};

inline Mixture parse_mixture(const Node& n) {
  Mixture m;
  if (n.raw().is_string()) {
    const std::string s = n.string();
    const auto colon = s.find(':');
    if (colon == std::string::npos) n.fail("expected \"image:text\"");
    try {
      m.image = std::stod(s.substr(0, colon));
      m.text = std::stod(s.substr(colon + 1));
    } catch (const std::exception&) {
      n.fail("expected \"image:text\"");
    }
  } else {
    if (n.size() != 2) n.fail("expected [image, text]");
    m.image = n.at(0).number();
    m.text = n.at(1).number();
  }
  if (m.image < 0 || m.text < 0 || m.image + m.text <= 0) n.fail("mixture weights must be nonnegative and not both zero");
  return m;
}

inline LinkCost parse_link(const Node& n) {
  LinkCost l;
  const double alpha_us = n.at("alpha_us").number();
  const double gbps = n.at("bandwidth_gbps").number();
  if (alpha_us <= 0) n.at("alpha_us").fail("must be > 0");
  if (gbps <= 0) n.at("bandwidth_gbps").fail("must be > 0");
  l.alpha = alpha_us * 1e-6;
  l.beta = 1.0 / (gbps * 1e9);
  return l;
}

inline ActivationPolicy parse_policy(const Node& n) {
  const auto s = n.string();
  if (s == "keep") return ActivationPolicy::Keep;
  if (s == "offload") return ActivationPolicy::Offload;
  if (s == "recompute") return ActivationPolicy::Recompute;
  n.fail("unknown activation policy '" + s + "'");
}

inline ModelSpec parse_model(const Node& n) {
  ModelSpec m;
  m.name = n.at("name").string();
  const auto kind = n.at("kind").string();
  if (kind == "encoder") {
    m.kind = ModelSpec::Kind::Encoder;
    try {
      m.modality = parse_modality(n.at("modality").string());
    } catch (const Error& e) {
      n.at("modality").fail(e.what());
    }
  } else if (kind == "llm") {
    m.kind = ModelSpec::Kind::LLMBackbone;
  } else {
    n.at("kind").fail("expected \"encoder\" or \"llm\"");
  }
  m.params = n.at("params").number();
  m.layers = static_cast<int>(n.at("layers").integer());
  m.hidden = static_cast<int>(n.at("hidden").integer());
  m.heads = static_cast<int>(n.at("heads").integer());
  m.tokens_per_patch = static_cast<int>(n.positive("tokens_per_patch", 1));
  m.flops_multiplier = n.number("flops_multiplier", 1.0);
  if (m.flops_multiplier <= 0) n.at("flops_multiplier").fail("must be > 0");
  try {
    validate_model(m);
  } catch (const ConfigError& e) {
    n.fail(e.what());
  }
  return m;
}

inline DatasetDescriptor parse_dataset(const Node& n) {
  DatasetDescriptor d;
  d.name = n.at("name").string();
  try {
    d.modality = parse_modality(n.at("modality").string());
  } catch (const Error& e) {
    n.at("modality").fail(e.what());
  }
  d.mean_len = n.positive("mean_len");
  d.max_len = n.positive("max_len");
  const auto fam = n.string("family", "lognormal");
  if (fam == "lognormal") {
    d.length_dist.family = LengthDist::Family::LogNormal;
    d.length_dist.mean = static_cast<double>(d.mean_len);
    d.length_dist.p95 = n.at("p95_len").number();
  } else if (fam == "histogram") {
    d.length_dist.family = LengthDist::Family::Histogram;
    const auto h = n.at("histogram");
    for (std::size_t i = 0; i < h.size(); ++i) {
      const auto b = h.at(i);
      if (b.size() != 2) b.fail("expected [length, weight]");
      d.length_dist.histogram.emplace_back(b.at(0).integer(), b.at(1).number());
    }
  } else {
    n.at("family").fail("expected \"lognormal\" or \"histogram\"");
  }
  try {
    validate_dataset(d);
  } catch (const ConfigError& e) {
    n.fail(e.what());
  }
  return d;
}

inline MixtureRecipe parse_recipe(const Node& n) {
  MixtureRecipe r;
  if (!n.raw().is_object()) n.fail("expected an object of dataset ratios");
  for (const auto& [k, v] : n.raw().items()) {
    const Node c = n.at(k);
    const double x = c.number();
    if (x < 0) c.fail("ratio must be nonnegative");
    r.entries.emplace_back(k, x);
  }
  return r;
}

inline LlmDegrees parse_llm_degrees(const Node& n) {
  LlmDegrees d;
  d.dp = static_cast<int>(n.positive("dp"));
  d.tp = static_cast<int>(n.positive("tp", 1));
  d.pp = static_cast<int>(n.positive("pp", 1));
  d.sp = static_cast<int>(n.positive("sp", 1));
  d.ep = static_cast<int>(n.positive("ep", 1));
  const auto v = n.string("sp_variant", "ulysses");
  if (v == "ulysses") d.sp_variant = SpVariant::Ulysses;
  else if (v == "cp") d.sp_variant = SpVariant::CP;
  else n.at("sp_variant").fail("expected \"ulysses\" or \"cp\"");
  return d;
}

}  // namespace detail

inline Architecture parse_architecture(const std::string& s) {
  if (s == "multiplexed") return Architecture::Multiplexed;
  if (s == "prepended") return Architecture::Prepended;
  if (s == "disaggregated") return Architecture::Disaggregated;
  if (s == "optimus") return Architecture::Optimus;
  throw ArgumentError("unknown architecture '" + s + "'");
}

inline Mixture parse_mixture_text(const std::string& s) {
  nlohmann::json j = s;
  return detail::parse_mixture(detail::Node(j, "mixture"));
}

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  using detail::Node;
  const Node n(root, "");
  ExperimentConfig c;
  c.schema_version = static_cast<int>(n.at("schema_version").integer());
  if (c.schema_version != kSchemaVersion)
    n.at("schema_version").fail("unsupported schema version " + std::to_string(c.schema_version));
  c.name = n.string("name", "experiment");

  const auto topo = n.at("topology");
  c.topology.nodes = static_cast<int>(topo.positive("nodes"));
  c.topology.gpus_per_node = static_cast<int>(topo.positive("gpus_per_node"));

  if (n.has("hardware")) {
    const auto hw = n.at("hardware");
    c.hardware.peak_flops = hw.number("peak_tflops", 312) * 1e12;
    c.hardware.efficiency = hw.number("efficiency", 0.5);
    c.hardware.memory_bytes = hw.number("memory_gb", 80) * 1e9;
    if (c.hardware.peak_flops <= 0) hw.at("peak_tflops").fail("must be > 0");
    if (c.hardware.efficiency <= 0 || c.hardware.efficiency > 1) hw.at("efficiency").fail("must be in (0, 1]");
    if (c.hardware.memory_bytes <= 0) hw.at("memory_gb").fail("must be > 0");
  }
  if (n.has("comm")) {
    const auto cm = n.at("comm");
    c.comm.intra = detail::parse_link(cm.at("intra"));
    c.comm.inter = detail::parse_link(cm.at("inter"));
    try {
      validate_comm(c.comm);
    } catch (const ConfigError& e) {
      cm.fail(e.what());
    }
  }
  if (n.has("memory")) {
    const auto m = n.at("memory");
    c.memory.bytes_per_param_state = m.number("bytes_per_param_state", 16);
    c.memory.activation_bytes_per_hidden = m.number("activation_bytes_per_hidden", 34);
    if (m.has("encoder_policy")) c.memory.encoder_policy = detail::parse_policy(m.at("encoder_policy"));
    if (m.has("llm_policy")) c.memory.llm_policy = detail::parse_policy(m.at("llm_policy"));
  }

  const auto models = n.at("models");
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto spec = detail::parse_model(models.at(i));
    if (!c.models.emplace(spec.name, spec).second) models.at(i).at("name").fail("duplicate model '" + spec.name + "'");
  }
  c.llm = n.at("llm").string();
  {
    auto it = c.models.find(c.llm);
    if (it == c.models.end()) n.at("llm").fail("unknown model '" + c.llm + "'");
    if (it->second.kind != ModelSpec::Kind::LLMBackbone) n.at("llm").fail("model '" + c.llm + "' is not an LLM");
  }

  const auto ds = n.at("datasets");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto d = detail::parse_dataset(ds.at(i));
    if (!c.datasets.emplace(d.name, d).second) ds.at(i).at("name").fail("duplicate dataset '" + d.name + "'");
  }

  if (n.has("phases")) {
    const auto ph = n.at("phases");
    const auto interp = ph.string("interpolation", "step");
    if (interp == "step") c.phases.interpolation = PhaseSchedule::Interpolation::Step;
    else if (interp == "linear") c.phases.interpolation = PhaseSchedule::Interpolation::Linear;
    else ph.at("interpolation").fail("expected \"step\" or \"linear\"");
    const auto list = ph.at("phases");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto p = list.at(i);
      PhaseSchedule::Phase phase;
      phase.start_step = p.at("start_step").integer();
      phase.recipe = detail::parse_recipe(p.at("recipe"));
      c.phases.phases.push_back(std::move(phase));
    }
    try {
      validate_schedule(c.phases, c.datasets);
    } catch (const ConfigError& e) {
      ph.fail(e.what());
    }
  }

  if (n.has("sweep")) {
    const auto sw = n.at("sweep");
    if (sw.has("mixtures")) {
      const auto m = sw.at("mixtures");
      for (std::size_t i = 0; i < m.size(); ++i) c.mixture_sweep.push_back(detail::parse_mixture(m.at(i)));
    }
    if (sw.has("seq_lens")) {
      const auto m = sw.at("seq_lens");
      for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = m.at(i).integer();
        if (v < 1) m.at(i).fail("must be >= 1");
        c.seq_len_sweep.push_back(v);
      }
    }
    if (sw.has("encoder_cost_scales")) {
      const auto m = sw.at("encoder_cost_scales");
      for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = m.at(i).number();
        if (v <= 0) m.at(i).fail("must be > 0");
        c.encoder_scale_sweep.push_back(v);
      }
    }
  }
  if (c.phases.phases.empty() && c.mixture_sweep.empty())
    n.fail("config needs phases or sweep.mixtures to define the workload");

  const auto b = n.at("batch");
  c.global_batch_size = static_cast<int>(b.positive("global_batch_size"));
  c.seq_len = b.positive("seq_len");
  c.microbatch_size = static_cast<int>(b.positive("microbatch_size", 1));

  const auto l = n.at("layout");
  c.layout.llm = detail::parse_llm_degrees(l.at("llm"));
  const auto e = l.at("encoder");
  c.layout.encoder.dp = static_cast<int>(e.positive("dp"));
  c.layout.encoder.ulysses_sp = static_cast<int>(e.positive("ulysses_sp", 1));
  c.layout.encoder.pp = static_cast<int>(e.positive("pp", 1));
  const auto z = e.string("zero_stage", "none");
  if (z == "none") c.layout.encoder.zero_stage = ZeroStage::None;
  else if (z == "z2") c.layout.encoder.zero_stage = ZeroStage::Z2;
  else if (z == "z3") c.layout.encoder.zero_stage = ZeroStage::Z3;
  else e.at("zero_stage").fail("expected \"none\", \"z2\" or \"z3\"");
  const auto col = l.at("colocation");
  for (std::size_t s = 0; s < col.size(); ++s) {
    std::vector<std::string> names;
    const auto stage = col.at(s);
    for (std::size_t k = 0; k < stage.size(); ++k) {
      const auto nm = stage.at(k).string();
      auto it = c.models.find(nm);
      if (it == c.models.end()) stage.at(k).fail("unknown model '" + nm + "'");
      if (it->second.kind != ModelSpec::Kind::Encoder) stage.at(k).fail("model '" + nm + "' is not an encoder");
      names.push_back(nm);
    }
    c.layout.colocation.push_back(std::move(names));
  }
  c.layout.lssp_eta = l.integer("lssp_eta", c.seq_len);
  c.layout.max_seq_len = c.seq_len;
  c.layout.reorder_group_size = static_cast<int>(l.positive("reorder_group_size", c.topology.gpus_per_node));
  c.ondemand_window = static_cast<int>(l.integer("ondemand_window", 0));
  c.microbatch_window = static_cast<int>(l.positive("microbatch_window", 1));
  c.cp_threshold = l.integer("cp_threshold", 0);
  if (c.cp_threshold < 0) l.at("cp_threshold").fail("must be >= 0");
  if (c.ondemand_window != 0 && c.ondemand_window != c.layout.llm.pp)
    l.at("ondemand_window").fail("only a window equal to the pipeline depth is supported");

  if (n.has("architectures")) {
    const auto a = n.at("architectures");
    for (std::size_t i = 0; i < a.size(); ++i) {
      try {
        c.architectures.push_back(parse_architecture(a.at(i).string()));
      } catch (const ArgumentError& err) {
        a.at(i).fail(err.what());
      }
    }
  } else {
    c.architectures = {Architecture::Multiplexed};
  }
  if (n.has("disaggregated")) {
    const auto d = n.at("disaggregated");
    c.disagg_encoder_ranks = static_cast<int>(d.positive("encoder_ranks"));
    c.disagg_llm = detail::parse_llm_degrees(d.at("llm"));
  }
  if (n.has("optimus")) c.optimus_reference = detail::parse_mixture(n.at("optimus").at("reference_mixture"));

  const auto seed = n.integer("seed", 1);
  if (seed < 0) n.at("seed").fail("must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.steps = static_cast<int>(n.positive("steps", 1));
  c.output_dir = n.string("output_dir", "mmsim-out");
  return c;
}

// Parses JSON text; syntax errors carry line and column.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t off = e.byte > 0 ? e.byte - 1 : 0;
    const auto [line, col] = detail::line_col(text, off);
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                      (pos == std::string::npos ? msg : msg.substr(pos)));
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ExperimentConfig load_config(const std::string& path) {
  return parse_config(parse_json_text(read_file(path), path));
}

// Every violation found after parsing, each naming the config path at fault.
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& v : validate_layout(c.topology, c.layout)) out.push_back("layout: " + v.group + ": " + v.message);
  const auto& m = c.layout.llm;
  if (c.global_batch_size % (m.dp * c.microbatch_size) != 0)
    out.push_back("batch.global_batch_size: " + std::to_string(c.global_batch_size) +
                  " not divisible by layout.llm.dp * batch.microbatch_size");
  else if (c.global_batch_size / (m.dp * c.microbatch_size) < m.pp)
    out.push_back("batch.global_batch_size: fewer microbatches per replica than pipeline stages");
  for (const auto& name : c.encoders()) {
    const auto& spec = c.models.at(name);
    bool fed = false;
    for (const auto& [dn, d] : c.datasets)
      if (d.modality == spec.modality) fed = true;
    if (!fed) out.push_back("layout.colocation: encoder '" + name + "' has no dataset of its modality");
  }
  for (const auto& [dn, d] : c.datasets)
    if (d.max_len > c.seq_len)
      out.push_back("datasets." + dn + ".max_len: exceeds batch.seq_len " + std::to_string(c.seq_len));
  for (auto a : c.architectures) {
    if (a != Architecture::Disaggregated) continue;
    if (c.disagg_encoder_ranks < 1) {
      out.push_back("disaggregated: section required when the disaggregated architecture is listed");
      continue;
    }
    ParallelLayout dl = c.layout;
    dl.llm = c.disagg_llm;
    for (const auto& v : validate_baseline(c.topology, {BaselineKind::Disaggregated, c.disagg_encoder_ranks}, dl))
      out.push_back("disaggregated: " + v.message);
    if (c.global_batch_size % (c.disagg_llm.dp * c.microbatch_size) != 0)
      out.push_back("disaggregated.llm.dp: does not divide the global batch");
    else if (c.global_batch_size / (c.disagg_llm.dp * c.microbatch_size) < c.disagg_llm.pp)
      out.push_back("disaggregated.llm.pp: more stages than microbatches per replica");
  }
  const auto& phases = c.phases.phases;
  if (!phases.empty()) {
    try {
      validate_schedule(c.phases, c.datasets);
    } catch (const ConfigError& e) {
      out.push_back(std::string("phases: ") + e.what());
    }
  }
  return out;
}

}  // namespace mmsim
