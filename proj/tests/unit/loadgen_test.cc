#include "ragguard/loadgen.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "synthetic_corpus.h"

namespace ragguard {
namespace {

namespace fs = std::filesystem;

std::vector<RequestSample> Samples(std::size_t n) {
  std::vector<RequestSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    RequestSample s;
    s.index = i;
    s.scheduled_us = static_cast<std::int64_t>(i) * 10000;
    s.start_us = s.scheduled_us + 5;
    s.end_us = s.scheduled_us + 1000 + static_cast<std::int64_t>((i * 37) % 100) * 10;
    s.status = 200;
    s.t_ret_us = 100 + static_cast<std::int64_t>(i % 7) * 10;
    s.t_inf_us = 200 + static_cast<std::int64_t>(i % 11) * 10;
    s.t_tot_us = s.t_ret_us + s.t_inf_us + 20;
    s.budget_exceeded = i % 50 == 0;
    out.push_back(s);
  }
  return out;
}

TEST(QuantileTest, NearestRankByHand) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(NearestRank(v, 0.50), 50);
  EXPECT_EQ(NearestRank(v, 0.90), 90);
  EXPECT_EQ(NearestRank(v, 0.99), 99);
  EXPECT_EQ(NearestRank({7.0}, 0.99), 7.0);
  EXPECT_EQ(NearestRank({}, 0.5), 0.0);
  const auto q = StageQuantiles::FromSamples({5, 1, 4, 2, 3});
  EXPECT_EQ(q.count, 5u);
  EXPECT_EQ(q.p50, 3);
  EXPECT_EQ(q.p99, 5);
  EXPECT_EQ(q.max, 5);
}

TEST(ReportTest, QuantilesOrderedAndCountsRight) {
  auto s = Samples(1000);
  s[3].status = 500;
  const auto r = ComputeReport(s, 100.0, 10.0, 10.0, false);
  EXPECT_EQ(r.sent, 1000u);
  EXPECT_EQ(r.ok, 999u);
  EXPECT_EQ(r.errors, 1u);
  EXPECT_EQ(r.budget_violations, 20u);
  for (const auto* q : {&r.client, &r.retrieval, &r.inference, &r.total}) {
    EXPECT_LE(q->p50, q->p90);
    EXPECT_LE(q->p90, q->p95);
    EXPECT_LE(q->p95, q->p99);
    EXPECT_LE(q->p99, q->max);
  }
  std::uint64_t hist_total = 0;
  for (auto c : r.total_hist.counts) hist_total += c;
  EXPECT_EQ(hist_total, 999u);
  EXPECT_NEAR(r.achieved_qps, 100.0, 2.0);
  EXPECT_FALSE(r.saturated);
}

TEST(ReportTest, SlowCompletionFlagsSaturation) {
  auto s = Samples(100);
  for (auto& x : s) x.end_us = x.scheduled_us + 2'000'000;  // every reply 2 s late
  for (std::size_t i = 0; i < s.size(); ++i) s[i].end_us += static_cast<std::int64_t>(i) * 10000;
  const auto r = ComputeReport(s, 100.0, 1.0, 10.0, false);
  EXPECT_TRUE(r.saturated);
}

TEST(ReportTest, CsvRoundTripReproducesReport) {
  const auto s = Samples(500);
  const auto path = fs::temp_directory_path() / "ragguard_samples_test.csv";
  WriteSamplesCsv(path, s);
  const auto back = ReadSamplesCsv(path);
  EXPECT_EQ(back, s);
  EXPECT_EQ(ComputeReport(back, 100.0, 5.0, 10.0, false).ToJson().dump(),
            ComputeReport(s, 100.0, 5.0, 10.0, false).ToJson().dump());
}

TEST(LoadgenOptionsTest, Validation) {
  LoadgenOptions o;
  EXPECT_THROW(o.Validate(), InvalidArgument);  // no queries
  o.queries = {"q"};
  EXPECT_NO_THROW(o.Validate());
  o.target_qps = 0;
  EXPECT_THROW(o.Validate(), InvalidArgument);
}

TEST(LoadgenTest, ConnectionFailureAborts) {
  LoadgenOptions o;
  o.port = 1;  // nothing listens here
  o.queries = {"q"};
  o.duration_s = 1.0;
  o.target_qps = 20;
  const auto r = RunLoadgen(o);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.abort_reason.empty());
}

TEST(LoadgenTest, OpenLoopPacingAgainstLiveServer) {
  KnowledgeBase kb{EncoderConfig{}};
  const auto entries = testing::MakeBulkEntries(2000, 5);
  for (const auto& e : entries) kb.Insert(e.text, e.label);
  kb.Publish();
  EvolvingKb ekb(kb, {});
  ServiceOptions so;
  so.port = 0;
  GuardService service(kb, ekb, so);
  service.LoadModel(GuardParams::Initialize(GuardCapacity::Student(), {64, 5}, 1));
  HttpServer server(service);
  const int port = server.Start();

  LoadgenOptions o;
  o.port = port;
  o.target_qps = 100;
  o.duration_s = 10;
  for (std::size_t i = 0; i < 200; ++i) o.queries.push_back(entries[i].text);
  const auto result = RunLoadgen(o);
  server.Stop();
  ASSERT_FALSE(result.aborted) << result.abort_reason;
  EXPECT_NEAR(static_cast<double>(result.samples.size()), 1000.0, 20.0);
  const auto r = ComputeReport(result.samples, o.target_qps, o.duration_s, o.tau_ms, false);
  EXPECT_EQ(r.errors, 0u);
  EXPECT_FALSE(r.saturated) << r.achieved_qps;
  for (std::size_t i = 0; i < result.samples.size(); ++i) {
    const auto& s = result.samples[i];
    EXPECT_EQ(s.index, i);
    EXPECT_EQ(s.scheduled_us, static_cast<std::int64_t>(i) * 10000);
    EXPECT_GE(s.t_tot_us, s.t_ret_us + s.t_inf_us);
  }
}

}  // namespace
}  // namespace ragguard
