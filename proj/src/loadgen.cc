#include "ragguard/loadgen.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "ragguard/random.h"

namespace ragguard {
namespace {

using nlohmann::json;
using Steady = std::chrono::steady_clock;

constexpr const char* kCsvHeader =
    "index,scheduled_us,start_us,end_us,status,t_ret_us,t_inf_us,t_tot_us,budget_exceeded";

std::vector<double> ToMs(const std::vector<std::int64_t>& us) {
  std::vector<double> out;
  out.reserve(us.size());
  for (auto v : us) out.push_back(static_cast<double>(v) / 1000.0);
  return out;
}

}  // namespace

void LoadgenOptions::Validate() const {
  if (!(target_qps > 0.0)) throw InvalidArgument("loadgen: target_qps must be > 0");
  if (!(duration_s > 0.0)) throw InvalidArgument("loadgen: duration_s must be > 0");
  if (queries.empty()) throw InvalidArgument("loadgen: query list is empty");
  if (workers < 1) throw InvalidArgument("loadgen: workers must be >= 1");
  if (!(timeout_s > 0.0)) throw InvalidArgument("loadgen: timeout_s must be > 0");
}

Histogram Histogram::Of(const std::vector<double>& ms) {
  Histogram h;
  h.upper_ms = {0.25, 0.5, 1, 2, 4, 6, 8, 10, 16, 32, 64, 128,
                std::numeric_limits<double>::infinity()};
  h.counts.assign(h.upper_ms.size(), 0);
  for (double v : ms) {
    const auto it = std::lower_bound(h.upper_ms.begin(), h.upper_ms.end(), v);
    ++h.counts[static_cast<std::size_t>(it - h.upper_ms.begin())];
  }
  return h;
}

json Histogram::ToJson() const {
  json buckets = json::array();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    buckets.push_back({{"le_ms", std::isinf(upper_ms[i]) ? json("inf") : json(upper_ms[i])},
                       {"count", counts[i]}});
  }
  return buckets;
}

json LatencyReport::ToJson() const {
  auto stage = [](const StageQuantiles& q, const Histogram& h) {
    json j = q.ToJson();
    j["histogram"] = h.ToJson();
    return j;
  };
  return {{"target_qps", target_qps},
          {"duration_s", duration_s},
          {"tau_ms", tau_ms},
          {"sent", sent},
          {"ok", ok},
          {"errors", errors},
          {"achieved_qps", achieved_qps},
          {"saturated", saturated},
          {"aborted", aborted},
          {"budget_violations", budget_violations},
          {"client", stage(client, client_hist)},
          {"server",
           {{"retrieval", stage(retrieval, retrieval_hist)},
            {"inference", stage(inference, inference_hist)},
            {"total", stage(total, total_hist)}}}};
}

LatencyReport ComputeReport(const std::vector<RequestSample>& samples, double target_qps,
                            double duration_s, double tau_ms, bool aborted) {
  LatencyReport r;
  r.target_qps = target_qps;
  r.duration_s = duration_s;
  r.tau_ms = tau_ms;
  r.aborted = aborted;
  r.sent = samples.size();

  std::vector<std::int64_t> client, ret, inf, tot;
  std::int64_t first = std::numeric_limits<std::int64_t>::max();
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  for (const auto& s : samples) {
    if (s.status != 200) {
      ++r.errors;
      continue;
    }
    ++r.ok;
    client.push_back(s.client_us());
    ret.push_back(s.t_ret_us);
    inf.push_back(s.t_inf_us);
    tot.push_back(s.t_tot_us);
    if (s.budget_exceeded) ++r.budget_violations;
    first = std::min(first, s.scheduled_us);
    last = std::max(last, s.end_us);
  }
  if (r.ok > 0) {
    // Completions over the span from the first due time to the last response,
    // but never over less than the scheduled duration.
    const double span_s =
        std::max(static_cast<double>(last - first) / 1e6,
                 (static_cast<double>(r.sent) - 1.0) / target_qps);
    r.achieved_qps = span_s > 0.0 ? static_cast<double>(r.ok) / span_s : 0.0;
  }
  r.saturated = std::abs(r.achieved_qps - target_qps) > 0.02 * target_qps;

  const auto c = ToMs(client), a = ToMs(ret), b = ToMs(inf), t = ToMs(tot);
  r.client = StageQuantiles::FromSamples(c);
  r.retrieval = StageQuantiles::FromSamples(a);
  r.inference = StageQuantiles::FromSamples(b);
  r.total = StageQuantiles::FromSamples(t);
  r.client_hist = Histogram::Of(c);
  r.retrieval_hist = Histogram::Of(a);
  r.inference_hist = Histogram::Of(b);
  r.total_hist = Histogram::Of(t);
  return r;
}

void WriteSamplesCsv(const std::filesystem::path& path, const std::vector<RequestSample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kCsvHeader << '\n';
  for (const auto& s : samples) {
    out << s.index << ',' << s.scheduled_us << ',' << s.start_us << ',' << s.end_us << ','
        << s.status << ',' << s.t_ret_us << ',' << s.t_inf_us << ',' << s.t_tot_us << ','
        << (s.budget_exceeded ? 1 : 0) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<RequestSample> ReadSamplesCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw InvalidArgument(path.string() + ": missing or unexpected header");
  }
  std::vector<RequestSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    RequestSample s;
    char c1, c2, c3, c4, c5, c6, c7, c8;
    int exceeded = 0;
    row >> s.index >> c1 >> s.scheduled_us >> c2 >> s.start_us >> c3 >> s.end_us >> c4 >>
        s.status >> c5 >> s.t_ret_us >> c6 >> s.t_inf_us >> c7 >> s.t_tot_us >> c8 >> exceeded;
    if (!row || (row >> std::ws, !row.eof()) || exceeded < 0 || exceeded > 1) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": malformed sample");
    }
    s.budget_exceeded = exceeded == 1;
    out.push_back(s);
  }
  return out;
}

LoadgenResult RunLoadgen(const LoadgenOptions& options) {
  options.Validate();
  const auto total = static_cast<std::uint64_t>(std::llround(options.target_qps * options.duration_s));

  std::vector<std::size_t> order(options.queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(options.seed);
  Shuffle(order, rng);
  std::vector<std::string> bodies;
  bodies.reserve(order.size());
  for (auto i : order) bodies.push_back(json{{"query", options.queries[i]}}.dump());

  LoadgenResult result;
  result.samples.resize(total);
  std::atomic<std::uint64_t> next{0};
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> done{0};
  std::mutex abort_mu;

  // Leave the workers time to connect before the first request is due.
  const auto start = Steady::now() + std::chrono::milliseconds(100);
  auto rel = [start](Steady::time_point t) {
    return std::chrono::duration_cast<std::chrono::microseconds>(t - start).count();
  };

  auto worker = [&] {
    httplib::Client client(options.host, options.port);
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
    const auto timeout_us = static_cast<long>(options.timeout_s * 1e6);
    client.set_connection_timeout(0, timeout_us);
    client.set_read_timeout(0, timeout_us);
    client.set_write_timeout(0, timeout_us);
    while (!stop.load()) {
      const std::uint64_t i = next.fetch_add(1);
      if (i >= total) break;
      const auto due = start + std::chrono::microseconds(std::llround(
                                   static_cast<double>(i) * 1e6 / options.target_qps));
      std::this_thread::sleep_until(due);
      if (stop.load()) break;
      RequestSample& s = result.samples[i];
      s.index = i;
      s.scheduled_us = rel(due);
      s.start_us = rel(Steady::now());
      auto res = client.Post("/v1/classify", bodies[i % bodies.size()], "application/json");
      s.end_us = rel(Steady::now());
      if (!res) {
        s.status = -1;
        std::lock_guard<std::mutex> lock(abort_mu);
        if (!stop.exchange(true)) {
          result.aborted = true;
          result.abort_reason = "request " + std::to_string(i) + ": " + httplib::to_string(res.error());
        }
        break;
      }
      s.status = res->status;
      if (res->status == 200) {
        const json body = json::parse(res->body, nullptr, false);
        if (!body.is_discarded() && body.contains("timings")) {
          const auto& t = body["timings"];
          s.t_ret_us = t.value("t_ret_us", std::int64_t{0});
          s.t_inf_us = t.value("t_inf_us", std::int64_t{0});
          s.t_tot_us = t.value("t_tot_us", std::int64_t{0});
          s.budget_exceeded = body.value("budget_exceeded", false);
        } else {
          s.status = 0;
        }
      }
      done.fetch_add(1);
    }
  };

  std::vector<std::thread> threads;
  for (int w = 0; w < options.workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  // Drop slots that were never sent (only possible after an abort); keep the
  // failed request itself.
  std::vector<RequestSample> kept;
  kept.reserve(total);
  for (std::uint64_t i = 0; i < total; ++i) {
    const auto& s = result.samples[i];
    if (s.status != 0 || s.end_us != 0) kept.push_back(s);
  }
  result.samples = std::move(kept);
  return result;
}

}  // namespace ragguard
