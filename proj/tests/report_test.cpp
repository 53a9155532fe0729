#include <gtest/gtest.h>

#include <filesystem>

#include "mmsim/report.hpp"

using namespace mmsim;

namespace {

PointReport record(Architecture a, const std::string& mix, double thr, std::int64_t step = 0) {
  PointReport r;
  r.experiment = "t";
  r.architecture = a;
  r.mixture = mix;
  r.seq_len = 4096;
  r.step = step;
  r.seed = 7;
  r.ranks = 8;
  r.makespan_s = 1.0 / thr;
  r.throughput = thr;
  r.tokens = 1000;
  r.bubble_ratio = 0.25;
  r.role_bubble_ratio = {{"llm", 0.25}};
  r.comm_bytes = {{"all_to_all", 123456789012LL}};
  r.trace = "trace.json";
  return r;
}

}  // namespace

TEST(Report, JsonlRoundTrip) {
  std::vector<PointReport> rs{record(Architecture::Multiplexed, "9:1", 3.5), record(Architecture::Optimus, "1:9", 2.0, 1)};
  rs[1].oom = true;
  rs[1].oom_ranks = 3;
  rs[1].encoder_recompute = true;
  rs[1].llm_stall = 0.125;
  rs[1].overflow_events = 4;
  const auto text = reports_jsonl(rs);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(parse_reports_jsonl(text), rs);
}

TEST(Report, RealRunRoundTrips) {
  const auto c = scale_down_config(load_config(std::string(MMSIM_PRESET_DIR) + "/workload_a.json"), 4);
  const auto r = run_point(c, {Architecture::Disaggregated, Mixture{5, 5}, 0, 1.0, 0}).report;
  EXPECT_EQ(report_from_json(nlohmann::json::parse(report_to_json(r).dump())), r);
}

TEST(Report, RejectsOtherSchemaVersions) {
  auto j = report_to_json(record(Architecture::Prepended, "5:5", 1.0));
  j["schema_version"] = 2;
  EXPECT_THROW(report_from_json(j), ConfigError);
  j.erase("schema_version");
  EXPECT_THROW(report_from_json(j), ConfigError);
  j = report_to_json(record(Architecture::Prepended, "5:5", 1.0));
  j.erase("throughput");
  EXPECT_THROW(report_from_json(j), ConfigError);
  try {
    parse_reports_jsonl(reports_jsonl({record(Architecture::Prepended, "5:5", 1.0)}) + "{bad\n", "r.jsonl");
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("r.jsonl:2: ", 0), 0u) << e.what();
  }
}

TEST(Report, AtomicWriteAndRead) {
  const auto dir = std::filesystem::temp_directory_path() / "mmsim_report_test";
  std::filesystem::remove_all(dir);
  const auto path = dir / "sub" / "records.jsonl";
  const std::vector<PointReport> rs{record(Architecture::Multiplexed, "5:5", 2.0)};
  write_file_atomic(path, reports_jsonl(rs));
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  EXPECT_EQ(read_reports(path.string()), rs);
  std::filesystem::remove_all(dir);
}

TEST(Report, SummaryAveragesSteps) {
  const std::vector<PointReport> rs{record(Architecture::Multiplexed, "5:5", 2.0, 0),
                                    record(Architecture::Multiplexed, "5:5", 4.0, 1),
                                    record(Architecture::Prepended, "5:5", 1.0, 0)};
  const auto rows = summarize(rs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].steps, 2);
  EXPECT_DOUBLE_EQ(rows[0].throughput, 3.0);
  EXPECT_DOUBLE_EQ(rows[0].makespan_s, 0.375);
  const auto tsv = summary_tsv(rows);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);
  EXPECT_EQ(tsv.rfind("architecture\tmixture\t", 0), 0u);
}

TEST(Report, TrendChecks) {
  std::vector<PointReport> rs;
  const double prep[] = {4.0, 3.0, 2.0};
  const char* mixes[] = {"1:9", "5:5", "9:1"};
  for (int i = 0; i < 3; ++i) {
    rs.push_back(record(Architecture::Multiplexed, mixes[i], 4.0));
    rs.push_back(record(Architecture::Prepended, mixes[i], prep[i]));
    auto d = record(Architecture::Disaggregated, mixes[i], 2.0);
    d.role_bubble_ratio["encoder"] = 0.9 - 0.4 * i;
    d.llm_stall = 0.1 + 0.25 * i;
    rs.push_back(d);
  }
  const auto rows = summarize(rs);
  const auto gaps = throughput_gaps(rows, "prepended");
  ASSERT_EQ(gaps.size(), 3u);
  EXPECT_DOUBLE_EQ(gaps[2].second, 2.0);
  const auto checks = trend_checks(rows);
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& t : checks) EXPECT_TRUE(t.ok) << t.name;
  EXPECT_NE(headline(rows).find("9:1 2.00x"), std::string::npos);

  rs[1].throughput = 5.0;  // prepended wins at 1:9
  const auto bad = trend_checks(summarize(rs));
  EXPECT_FALSE(bad[0].ok);
}
