#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "ragguard/ekb.h"
#include "ragguard/guard_model.h"
#include "ragguard/knowledge_base.h"

namespace httplib {
class Server;
}

namespace ragguard {

struct ServiceOptions {
  std::size_t k = 5;
  double epsilon = 0.4;
  double tau_ms = 10.0;
  // When set, a retrieval slower than retrieval_budget_ms is discarded and
  // the query is classified without context.
  bool strict = false;
  double retrieval_budget_ms = 5.0;
  double metrics_window_s = 60.0;
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 32;  // one per keep-alive connection; keep above client count

  void Validate() const;
};

struct StageTimings {
  std::int64_t t_ret_us = 0;
  std::int64_t t_inf_us = 0;
  std::int64_t t_tot_us = 0;
  // t_tot - t_ret - t_inf: snapshot acquisition, request decoding and other
  // per-request overhead.
  std::int64_t slack_us = 0;
};

struct ClassifyResponse {
  Label label = Label::kSafe;
  double p_unsafe = 0.0;
  ContextSet context;
  StageTimings timings;
  bool budget_exceeded = false;
  bool fallback = false;  // strict mode dropped the context
  std::uint64_t kb_epoch = 0;

  nlohmann::json ToJson() const;
};

// Nearest-rank quantile of an ascending sample: element ceil(q * n), 1-based.
double NearestRank(const std::vector<double>& sorted, double q);

struct StageQuantiles {
  std::size_t count = 0;
  double p50 = 0.0, p90 = 0.0, p95 = 0.0, p99 = 0.0, max = 0.0;  // ms

  static StageQuantiles FromSamples(std::vector<double> ms);
  nlohmann::json ToJson() const;
};

// Raw per-request samples over a rolling window; quantiles are recomputed
// from the retained samples on every read.
class LatencyWindow {
 public:
  using TimePoint = std::chrono::steady_clock::time_point;

  explicit LatencyWindow(std::chrono::duration<double> window) : window_(window) {}

  void Record(TimePoint at, const StageTimings& t, bool budget_exceeded);

  struct Snapshot {
    StageQuantiles retrieval, inference, total;
    std::uint64_t requests = 0;           // all time
    std::uint64_t budget_violations = 0;  // all time
    std::size_t window_samples = 0;
  };
  Snapshot Read(TimePoint now);

 private:
  struct Sample {
    TimePoint at;
    StageTimings t;
  };
  void Evict(TimePoint now);

  std::chrono::duration<double> window_;
  std::mutex mu_;
  std::deque<Sample> samples_;
  std::uint64_t requests_ = 0;
  std::uint64_t violations_ = 0;
};

class ServiceUnavailable : public Error {
 public:
  using Error::Error;
};

// Retrieve-then-infer over the current KB snapshot. Model and snapshot are
// immutable and shared; Classify takes no lock on the write path.
class GuardService {
 public:
  GuardService(KnowledgeBase& kb, EvolvingKb& ekb, ServiceOptions options);

  // Checks the layout against the KB encoder and retrieval depth.
  void LoadModel(GuardParams params);
  bool model_loaded() const;

  // Throws ServiceUnavailable without a model.
  ClassifyResponse Classify(std::string_view x);

  const ServiceOptions& options() const { return options_; }
  KnowledgeBase& kb() { return kb_; }
  EvolvingKb& ekb() { return ekb_; }

  LatencyWindow::Snapshot Metrics();
  nlohmann::json MetricsJson();
  std::string MetricsText();

 private:
  KnowledgeBase& kb_;
  EvolvingKb& ekb_;
  ServiceOptions options_;
  std::shared_ptr<const GuardParams> model_;
  mutable std::mutex model_mu_;
  LatencyWindow window_;
};

// HTTP/JSON front end for GuardService.
class HttpServer {
 public:
  explicit HttpServer(GuardService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds host:port (port 0 picks a free port) and serves on a background
  // thread. Returns the bound port.
  int Start();
  // Blocks serving on the calling thread until Stop().
  void Run();
  void Stop();
  int port() const { return port_; }

 private:
  void Bind();

  GuardService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace ragguard
