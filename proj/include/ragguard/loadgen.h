#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ragguard/service.h"

namespace ragguard {

// One request as seen by the client. Times are microseconds from the start
// of the run; scheduled_us is the open-loop send time, start_us when the
// request actually went out.
struct RequestSample {
  std::uint64_t index = 0;
  std::int64_t scheduled_us = 0;
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
  int status = 0;  // HTTP status, or -1 for a transport error
  std::int64_t t_ret_us = 0;
  std::int64_t t_inf_us = 0;
  std::int64_t t_tot_us = 0;
  bool budget_exceeded = false;

  // Client-observed latency, measured from the scheduled send time so that
  // queueing in the generator is not hidden.
  std::int64_t client_us() const { return end_us - scheduled_us; }
  bool operator==(const RequestSample&) const = default;
};

struct LoadgenOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  double target_qps = 300.0;
  double duration_s = 60.0;
  std::vector<std::string> queries;
  std::uint64_t seed = 0;  // query order
  int workers = 8;  // must not exceed the server thread count
  double timeout_s = 5.0;
  double tau_ms = 10.0;

  void Validate() const;
};

struct Histogram {
  std::vector<double> upper_ms;      // bucket upper bounds; last is +inf
  std::vector<std::uint64_t> counts;

  static Histogram Of(const std::vector<double>& ms);
  nlohmann::json ToJson() const;
};

struct LatencyReport {
  double target_qps = 0.0;
  double duration_s = 0.0;
  double tau_ms = 0.0;
  std::size_t sent = 0;
  std::size_t ok = 0;
  std::size_t errors = 0;
  double achieved_qps = 0.0;
  bool saturated = false;  // achieved QPS off target by more than 2%
  bool aborted = false;
  std::size_t budget_violations = 0;
  StageQuantiles client, retrieval, inference, total;
  Histogram client_hist, retrieval_hist, inference_hist, total_hist;

  nlohmann::json ToJson() const;
};

// A pure function of its inputs: the same samples give the same report.
LatencyReport ComputeReport(const std::vector<RequestSample>& samples, double target_qps,
                            double duration_s, double tau_ms, bool aborted);

void WriteSamplesCsv(const std::filesystem::path& path, const std::vector<RequestSample>& samples);
std::vector<RequestSample> ReadSamplesCsv(const std::filesystem::path& path);

struct LoadgenResult {
  std::vector<RequestSample> samples;  // ordered by index
  bool aborted = false;
  std::string abort_reason;
};

// Open-loop generator: request i is due at i / target_qps regardless of
// whether earlier requests have completed. A transport failure stops the
// run and returns what was collected.
LoadgenResult RunLoadgen(const LoadgenOptions& options);

}  // namespace ragguard
