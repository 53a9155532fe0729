// Acceptance run: one PASS/FAIL line per criterion. `acceptance N` runs only
// criterion N. Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "mmsim/catalog.hpp"
#include "mmsim/lssp.hpp"
#include "mmsim/report.hpp"
#include "oracle.hpp"
#include "pipeline_check.hpp"

#ifndef MMSIM_PRESET_DIR
#define MMSIM_PRESET_DIR "presets"
#endif

using namespace mmsim;

namespace {

constexpr Nanos ms = 1'000'000;

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string preset(const std::string& file) { return std::string(MMSIM_PRESET_DIR) + "/" + file; }

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  const int n = 600;
  int exact = 0;
  for (int t = 0; t < n; ++t) {
    const auto ir = oracle::random_instance(rng);
    exact += simulate(ir).metrics.makespan == oracle::critical_path(ir);
  }
  return {exact == n, std::to_string(exact) + "/" + std::to_string(n) + " instances exact"};
}

Outcome delay_formula() {
  // Stage weights N0 = 4, N_{-1} = 8; stage 0's encoder total rises by 10 ms.
  const Nanos dt = 10 * ms;
  const auto llm = build_1f1b(uniform_pipeline_costs(2, 12, 10 * ms, 20 * ms));
  auto last_end = [](const ScheduleIR& ir) {
    const auto sim = simulate(ir);
    Nanos t = 0;
    for (int id : ir.program(ir.num_ranks - 1, Lane::Compute))
      if (ir.at(id).type == EventType::LlmBwd) t = std::max(t, sim.timeline.entries[static_cast<std::size_t>(id)].end);
    return t;
  };
  const Nanos e = 5 * ms;
  const auto base = insert_encoders_nonuniform(llm, uniform_encoder_costs("vit", 1, 12, e, 2 * e), {4, 8}).ir;
  const auto up = insert_encoders_nonuniform(llm, uniform_encoder_costs("vit", 1, 12, e + dt / 4, 2 * e), {4, 8}).ir;
  const double delay = static_cast<double>(last_end(up) - last_end(base)) / static_cast<double>(ms);
  return {std::abs(delay - 20.0) <= 0.05 * 20.0, "last-stage delay " + fmt(delay) + " ms (expected 20 ms)"};
}

Outcome resilience() {
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
  const double spread = (*hi - *lo) / *lo;
  const double ratio = non.back() / uni.back();
  return {spread < 0.10 && ratio > 1.5,
          "nonuniform/uniform at x4 " + fmt(ratio, 2) + ", uniform spread " + fmt(100 * spread, 1) + "%"};
}

std::vector<SummaryRow> workload_a_rows(std::initializer_list<Architecture> archs) {
  const auto c = load_config(preset("workload_a.json"));
  std::vector<PointReport> rs;
  for (auto a : archs)
    for (const auto& m : c.mixture_sweep) rs.push_back(run_point(c, {a, m, 0, 1.0, 0}).report);
  return summarize(rs);
}

Outcome baseline_trend() {
  const auto gaps = throughput_gaps(workload_a_rows({Architecture::Multiplexed, Architecture::Prepended}), "prepended");
  bool ge = !gaps.empty(), mono = true;
  std::string d;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    ge = ge && gaps[i].second >= 1.0;
    if (i > 0 && gaps[i].second < gaps[i - 1].second) mono = false;
    d += (i ? " " : "") + gaps[i].first + "=" + fmt(gaps[i].second, 2);
  }
  const bool two = !gaps.empty() && gaps.back().second >= 2.0;
  return {ge && mono && two, "gaps " + d + (two ? "" : " (9:1 below 2x)")};
}

Outcome disaggregation_idle() {
  const auto rows = workload_a_rows({Architecture::Disaggregated});
  const auto& lo = rows.front();
  const auto& hi = rows.back();
  return {lo.encoder_bubble > 0.2 && hi.llm_stall > 0.2,
          "encoder bubble " + fmt(lo.encoder_bubble) + " at " + lo.mixture + ", llm stall " + fmt(hi.llm_stall) + " at " +
              hi.mixture};
}

Outcome kk_quality() {
  std::mt19937_64 rng(99);
  int exhaustive = 0, bounded = 0;
  for (int n = 1; n <= 12; ++n)
    for (int g = 1; g <= 4; ++g)
      for (int t = 0; t < 10; ++t) {
        std::vector<std::int64_t> w(static_cast<std::size_t>(n));
        for (auto& x : w) x = 1 + static_cast<std::int64_t>(rng() % 100);
        const auto kk = kk_partition(w, g).max_load();
        const auto opt = oracle::optimal_max_load(w, g);
        ++exhaustive;
        bounded += kk >= opt && 3 * kk <= 4 * opt;
      }
  std::lognormal_distribution<double> d(7.0, 1.0);
  int wins = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::int64_t> w(64);
    for (auto& x : w) x = 1 + static_cast<std::int64_t>(d(rng));
    wins += imbalance(kk_partition(w, 8).loads) <= imbalance(round_robin_partition(w, 8).loads);
  }
  const std::vector<std::int64_t> hand{8, 7, 6, 5, 4};
  const auto kk = kk_partition(hand, 2);
  const std::int64_t opt_diff = 2 * oracle::optimal_max_load(hand, 2) - 30;
  const bool ok = bounded == exhaustive && wins >= 950 && kk.spread() == 2 && opt_diff == 0;
  return {ok, std::to_string(bounded) + "/" + std::to_string(exhaustive) + " within [OPT, 4/3 OPT], " +
                  std::to_string(wins) + "/1000 beat round-robin, [8,7,6,5,4] diff " + std::to_string(kk.spread()) +
                  " vs OPT " + std::to_string(opt_diff)};
}

Outcome conservation() {
  const auto c = scale_down_config(load_config(preset("workload_a.json")), 4);
  std::size_t samples = 0, bytes = 0, errors = 0;
  std::string first;
  for (std::int64_t step = 0; step < 50; ++step) {
    const Mixture mix = c.mixture_sweep[static_cast<std::size_t>(step) % c.mixture_sweep.size()];
    for (auto v : {ReshardVariant::UlyssesUniform, ReshardVariant::CpHybrid}) {
      check::StepOptions opt;
      opt.variant = v;
      const auto r = check::run_step(c, mix, step, opt);
      samples += r.samples;
      bytes += r.payload_bytes;
      errors += r.errors.size();
      if (first.empty() && !r.errors.empty()) first = r.errors.front();
    }
  }
  return {errors == 0, "50 steps, " + std::to_string(samples) + " samples, " + std::to_string(bytes) +
                           " payload bytes restored" + (first.empty() ? "" : "; " + first)};
}

std::vector<Sample> short_long(std::mt19937_64& rng, int n, double p_long) {
  std::lognormal_distribution<double> sh(std::log(800.0), 0.6), lg(std::log(9000.0), 0.3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Sample> v;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.modality = Modality::Image;
    s.length = u(rng) < p_long ? std::clamp<Tokens>(static_cast<Tokens>(lg(rng)), 4097, 16384)
                               : std::clamp<Tokens>(static_cast<Tokens>(sh(rng)), 16, 4096);
    v.push_back(s);
  }
  return v;
}

Outcome lssp_benefit() {
  const Topology topo{4, 8};
  ParallelLayout l;
  l.encoder.dp = 4;
  l.encoder.ulysses_sp = 8;
  const LsspCostModel cost{catalog_model("vit-1b"), Hardware{}, CommModel{}, 3.0, 16384};
  const Tokens eta = 4096;
  std::mt19937_64 cal(1);
  const int dp_nodes = calibrate_static_split(short_long(cal, 128, 0.10), eta, topo, cost);
  std::mt19937_64 rng(2);
  const int n = 500;
  int wins = 0;
  for (int t = 0; t < n; ++t) {
    const double p_long = 0.10 + 0.50 * t / (n - 1);
    const auto s = short_long(rng, 128, p_long);
    const auto ir = lssp_schedule(lssp_deal(s, eta, 32, 8, cost), eta, l, topo, cost);
    wins += simulate(ir).metrics.makespan <= static_split_makespan(s, eta, dp_nodes, topo, cost);
  }
  return {wins * 100 >= 95 * n, std::to_string(wins) + "/" + std::to_string(n) + " instances at or below the static split (" +
                                    std::to_string(dp_nodes) + " DP nodes)"};
}

Outcome attention_balance_check() {
  const auto c = load_config(preset("skewed.json"));
  const int g = c.layout.encoder.ulysses_sp;
  const Tokens threshold = c.seq_len / g;
  const auto one = std::vector<PackedSequence>{PackedSequence{16384, {{0, 16384}}, 16384}};
  const auto naive_one = naive_cp_attention(one, 4);
  bool ratio1357 = naive_one.size() == 4;
  for (std::size_t k = 0; ratio1357 && k < 4; ++k)
    ratio1357 = naive_one[k] == static_cast<double>(2 * k + 1) * naive_one[0];
  bool ulysses = true, improves = true;
  double worst_naive = 0, worst_hybrid = 0;
  for (std::int64_t step = 0; step < 20; ++step) {
    const auto w = draw_step(c, c.phases, step, c.seed, c.seq_len, c.global_batch_size, c.layout.llm.dp, c.microbatch_size);
    const auto& seqs = w.batch.sequences;
    ulysses = ulysses && max_min_ratio(attention_balance(plan_reshard(seqs, g, ReshardVariant::UlyssesUniform))) == 1.0;
    const double h = max_min_ratio(attention_balance(plan_reshard(seqs, g, ReshardVariant::CpHybrid, threshold)));
    const double nv = max_min_ratio(naive_cp_attention(seqs, g));
    improves = improves && h < nv;
    worst_naive = std::max(worst_naive, nv);
    worst_hybrid = std::max(worst_hybrid, h);
  }
  return {ulysses && ratio1357 && improves,
          std::string("ulysses max/min 1.0 ") + (ulysses ? "yes" : "no") + ", naive 1:3:5:7 " + (ratio1357 ? "yes" : "no") +
              ", skewed preset over 20 steps: worst cp-hybrid " + fmt(worst_hybrid) + " vs naive " + fmt(worst_naive)};
}

Outcome proxy_invariance() {
  const auto full = load_config(preset("workload_a.json"));
  const auto proxy = scale_down_config(full, 4);
  const int pp = full.layout.llm.pp;
  int compared = 0, equal = 0;
  for (auto a : {Architecture::Multiplexed, Architecture::Prepended, Architecture::Optimus})
    for (const auto& m : full.mixture_sweep) {
      const auto f = compute_shape(run_point(full, {a, m, 0, 1.0, 0}).ir);
      const auto q = compute_shape(run_point(proxy, {a, m, 0, 1.0, 0}).ir);
      const std::vector<std::vector<EventKey>> ref(q.begin(), q.begin() + pp);
      for (int r = 0; r < full.layout.llm.dp; ++r) {
        const std::vector<std::vector<EventKey>> rep(f.begin() + r * pp, f.begin() + (r + 1) * pp);
        ++compared;
        equal += rep == ref;
      }
    }
  return {equal == compared && compared > 0,
          std::to_string(equal) + "/" + std::to_string(compared) + " replicas match the proxy (x4 scale-down)"};
}

Outcome determinism() {
  int presets = 0, points = 0;
  std::string bad;
  for (const auto& f : std::filesystem::directory_iterator(MMSIM_PRESET_DIR)) {
    if (f.path().extension() != ".json") continue;
    ++presets;
    auto once = [&] {
      const auto c = load_config(f.path().string());
      std::string out;
      for (const auto& p : sweep_points(c)) {
        const auto run = run_point(c, p);
        out += report_to_json(run.report).dump() + "\n" + trace_json(run.ir, run.sim.timeline) + "\n";
      }
      return out;
    };
    const auto a = once();
    const auto b = once();
    points += static_cast<int>(sweep_points(load_config(f.path().string())).size());
    if (a != b && bad.empty()) bad = f.path().filename().string();
  }
  return {bad.empty() && presets > 0,
          std::to_string(presets) + " presets, " + std::to_string(points) + " points, reports and traces " +
              (bad.empty() ? "identical" : "differ in " + bad)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"oracle makespan equivalence", oracle_equivalence},
      {"delay formula", delay_formula},
      {"resilience direction", resilience},
      {"baseline trend on workload A", baseline_trend},
      {"disaggregation idle", disaggregation_idle},
      {"KK partition quality", kk_quality},
      {"conservation suite", conservation},
      {"LSSP benefit", lssp_benefit},
      {"attention balance", attention_balance_check},
      {"proxy invariance", proxy_invariance},
      {"determinism", determinism},
  };
  int only = 0;
  if (argc > 1) {
    only = std::atoi(argv[1]);
    if (only < 1 || only > static_cast<int>(all.size())) {
      std::cerr << "usage: acceptance [criterion 1-" << all.size() << "]\n";
      return 2;
    }
  }
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (only && static_cast<int>(i) + 1 != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.ok;
    std::cout << (o.ok ? "PASS" : "FAIL") << " " << i + 1 << " " << all[i].name << ": " << o.detail << " ["
              << fmt(s, 1) << " s]\n";
  }
  return failed ? 1 : 0;
}
