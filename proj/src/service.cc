#include "ragguard/service.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "httplib.h"

namespace ragguard {
namespace {

using nlohmann::json;
using Steady = std::chrono::steady_clock;

std::int64_t Micros(Steady::duration d) {
  return std::chrono::duration_cast<std::chrono::microseconds>(d).count();
}

json ContextJson(const ContextSet& ctx) {
  json items = json::array();
  for (const auto& it : ctx.items) items.push_back({{"entry_id", it.id}, {"similarity", it.score}});
  return items;
}

json EntryJson(const KbEntry& e) {
  return {{"id", e.id},
          {"text", e.text},
          {"label", LabelName(e.label)},
          {"source", SourceName(e.meta.source)},
          {"timestamp", e.meta.timestamp_ms},
          {"confidence", e.meta.confidence}};
}

std::string FormatMs(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void ServiceOptions::Validate() const {
  if (k < 1) throw InvalidArgument("service: k must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 2.0)) throw InvalidArgument("service: epsilon out of range");
  if (!(tau_ms > 0.0)) throw InvalidArgument("service: tau_ms must be > 0");
  if (!(retrieval_budget_ms > 0.0)) throw InvalidArgument("service: retrieval_budget_ms must be > 0");
  if (!(metrics_window_s > 0.0)) throw InvalidArgument("service: metrics_window_s must be > 0");
  if (port < 0 || port > 65535) throw InvalidArgument("service: port out of range");
  if (threads < 1) throw InvalidArgument("service: threads must be >= 1");
}

json ClassifyResponse::ToJson() const {
  return {{"label", LabelName(label)},
          {"p_unsafe", p_unsafe},
          {"context", ContextJson(context)},
          {"timings",
           {{"t_ret_us", timings.t_ret_us},
            {"t_inf_us", timings.t_inf_us},
            {"t_tot_us", timings.t_tot_us},
            {"slack_us", timings.slack_us}}},
          {"budget_exceeded", budget_exceeded},
          {"fallback", fallback},
          {"kb_epoch", kb_epoch}};
}

// ---------------------------------------------------------------------------
// Metrics

double NearestRank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

StageQuantiles StageQuantiles::FromSamples(std::vector<double> ms) {
  StageQuantiles s;
  s.count = ms.size();
  if (ms.empty()) return s;
  std::sort(ms.begin(), ms.end());
  s.p50 = NearestRank(ms, 0.50);
  s.p90 = NearestRank(ms, 0.90);
  s.p95 = NearestRank(ms, 0.95);
  s.p99 = NearestRank(ms, 0.99);
  s.max = ms.back();
  return s;
}

json StageQuantiles::ToJson() const {
  return {{"count", count}, {"p50_ms", p50}, {"p90_ms", p90},
          {"p95_ms", p95},  {"p99_ms", p99}, {"max_ms", max}};
}

void LatencyWindow::Record(TimePoint at, const StageTimings& t, bool budget_exceeded) {
  std::lock_guard<std::mutex> lock(mu_);
  ++requests_;
  if (budget_exceeded) ++violations_;
  samples_.push_back({at, t});
  Evict(at);
}

void LatencyWindow::Evict(TimePoint now) {
  const auto cutoff = now - std::chrono::duration_cast<Steady::duration>(window_);
  while (!samples_.empty() && samples_.front().at < cutoff) samples_.pop_front();
}

LatencyWindow::Snapshot LatencyWindow::Read(TimePoint now) {
  std::vector<double> ret, inf, tot;
  Snapshot s;
  {
    std::lock_guard<std::mutex> lock(mu_);
    Evict(now);
    s.requests = requests_;
    s.budget_violations = violations_;
    s.window_samples = samples_.size();
    ret.reserve(samples_.size());
    inf.reserve(samples_.size());
    tot.reserve(samples_.size());
    for (const auto& x : samples_) {
      ret.push_back(static_cast<double>(x.t.t_ret_us) / 1000.0);
      inf.push_back(static_cast<double>(x.t.t_inf_us) / 1000.0);
      tot.push_back(static_cast<double>(x.t.t_tot_us) / 1000.0);
    }
  }
  s.retrieval = StageQuantiles::FromSamples(std::move(ret));
  s.inference = StageQuantiles::FromSamples(std::move(inf));
  s.total = StageQuantiles::FromSamples(std::move(tot));
  return s;
}

// ---------------------------------------------------------------------------
// GuardService

GuardService::GuardService(KnowledgeBase& kb, EvolvingKb& ekb, ServiceOptions options)
    : kb_(kb),
      ekb_(ekb),
      options_(std::move(options)),
      window_(std::chrono::duration<double>(options_.metrics_window_s)) {
  options_.Validate();
}

void GuardService::LoadModel(GuardParams params) {
  if (params.layout.dimension != kb_.config().dimension) {
    throw InvalidArgument("service: model expects dimension " +
                          std::to_string(params.layout.dimension) + ", KB encodes " +
                          std::to_string(kb_.config().dimension));
  }
  if (params.layout.k != options_.k) {
    throw InvalidArgument("service: model has " + std::to_string(params.layout.k) +
                          " context slots, service retrieves k=" + std::to_string(options_.k));
  }
  auto p = std::make_shared<const GuardParams>(std::move(params));
  std::lock_guard<std::mutex> lock(model_mu_);
  model_ = std::move(p);
}

bool GuardService::model_loaded() const {
  std::lock_guard<std::mutex> lock(model_mu_);
  return model_ != nullptr;
}

ClassifyResponse GuardService::Classify(std::string_view x) {
  const auto t0 = Steady::now();
  std::shared_ptr<const GuardParams> model;
  {
    std::lock_guard<std::mutex> lock(model_mu_);
    model = model_;
  }
  if (!model) throw ServiceUnavailable("no model loaded");
  const auto snap = kb_.Snapshot();

  ClassifyResponse r;
  r.kb_epoch = snap->epoch();

  const auto t1 = Steady::now();
  const EncodedText q = snap->EncodeQuery(x);
  r.context = snap->RetrieveTopK(q, options_.k, options_.epsilon);
  const auto t2 = Steady::now();
  if (options_.strict &&
      static_cast<double>(Micros(t2 - t1)) > options_.retrieval_budget_ms * 1000.0) {
    r.context = ContextSet{{}, options_.k};
    r.fallback = true;
  }

  FeatureVector features(static_cast<Eigen::Index>(model->layout.size()));
  WriteFeatures(q.embedding, r.context, *snap, model->layout,
                std::span<double>(features.data(), model->layout.size()));
  const PredictionDistribution dist = Forward(*model, features);
  r.label = dist.Argmax();
  r.p_unsafe = dist.p_unsafe;
  const auto t3 = Steady::now();

  r.timings.t_ret_us = Micros(t2 - t1);
  r.timings.t_inf_us = Micros(t3 - t2);
  r.timings.t_tot_us = Micros(t3 - t0);
  r.timings.slack_us = r.timings.t_tot_us - r.timings.t_ret_us - r.timings.t_inf_us;
  r.budget_exceeded = static_cast<double>(r.timings.t_tot_us) > options_.tau_ms * 1000.0;
  window_.Record(t3, r.timings, r.budget_exceeded);
  return r;
}

LatencyWindow::Snapshot GuardService::Metrics() { return window_.Read(Steady::now()); }

json GuardService::MetricsJson() {
  const auto m = Metrics();
  return {{"window_s", options_.metrics_window_s},
          {"window_samples", m.window_samples},
          {"requests", m.requests},
          {"budget_violations", m.budget_violations},
          {"tau_ms", options_.tau_ms},
          {"kb_epoch", kb_.Snapshot()->epoch()},
          {"stages",
           {{"retrieval", m.retrieval.ToJson()},
            {"inference", m.inference.ToJson()},
            {"total", m.total.ToJson()}}}};
}

std::string GuardService::MetricsText() {
  const auto m = Metrics();
  std::string out;
  out += "ragguard_requests_total " + std::to_string(m.requests) + "\n";
  out += "ragguard_budget_violations_total " + std::to_string(m.budget_violations) + "\n";
  out += "ragguard_kb_epoch " + std::to_string(kb_.Snapshot()->epoch()) + "\n";
  out += "ragguard_window_samples " + std::to_string(m.window_samples) + "\n";
  const std::pair<const char*, const StageQuantiles*> stages[] = {
      {"retrieval", &m.retrieval}, {"inference", &m.inference}, {"total", &m.total}};
  for (const auto& [name, q] : stages) {
    const std::pair<const char*, double> rows[] = {
        {"0.5", q->p50}, {"0.9", q->p90}, {"0.95", q->p95}, {"0.99", q->p99}};
    for (const auto& [quantile, v] : rows) {
      out += std::string("ragguard_latency_ms{stage=\"") + name + "\",quantile=\"" + quantile +
             "\"} " + FormatMs(v) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void Reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void ReplyError(httplib::Response& res, int status, const std::string& message) {
  Reply(res, status, {{"error", message}});
}

// Parses a JSON object body; replies 400 and returns nullopt on failure.
std::optional<json> ParseBody(const httplib::Request& req, httplib::Response& res) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    ReplyError(res, 400, "request body must be a JSON object");
    return std::nullopt;
  }
  return body;
}

std::optional<std::string> StringField(const json& body, const char* key, httplib::Response& res) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_string()) {
    ReplyError(res, 400, std::string("field '") + key + "' must be a string");
    return std::nullopt;
  }
  return it->get<std::string>();
}

template <typename Handler>
httplib::Server::Handler Guarded(Handler h) {
  return [h](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const ServiceUnavailable& e) {
      ReplyError(res, 503, e.what());
    } catch (const Conflict& e) {
      ReplyError(res, 409, e.what());
    } catch (const InvalidArgument& e) {
      ReplyError(res, 400, e.what());
    } catch (const GeneratorError& e) {
      ReplyError(res, 502, e.what());
    } catch (const std::exception& e) {
      ReplyError(res, 500, e.what());
    }
  };
}

std::size_t QueryInt(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || n < 0) {
    throw InvalidArgument(std::string("query parameter '") + key + "' must be a nonnegative integer");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace

HttpServer::HttpServer(GuardService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  GuardService* svc = &service_;
  const int threads = service_.options().threads;
  s.set_tcp_nodelay(true);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };

  s.Post("/v1/classify", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    auto body = ParseBody(req, res);
    if (!body) return;
    auto query = StringField(*body, "query", res);
    if (!query) return;
    Reply(res, 200, svc->Classify(*query).ToJson());
  }));

  s.Post("/v1/feedback", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    auto body = ParseBody(req, res);
    if (!body) return;
    auto query = StringField(*body, "query", res);
    if (!query) return;
    auto label_text = StringField(*body, "label", res);
    if (!label_text) return;
    const auto label = ParseLabel(*label_text);
    if (!label) return ReplyError(res, 400, "label must be safe or unsafe");
    FeedbackSource source = FeedbackSource::kEndUser;
    if (body->contains("source")) {
      const auto& s = body->at("source");
      const auto parsed = s.is_string() ? ParseFeedbackSource(s.get<std::string>()) : std::nullopt;
      if (!parsed) return ReplyError(res, 400, "source must be end_user, operator or grader_model");
      source = *parsed;
    }
    const auto rec = svc->ekb().SubmitFeedback(*query, *label, source);
    Reply(res, 200, RecordToJson(rec, svc->ekb().k()));
  }));

  s.Get("/v1/feedback", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<RecordStatus> status;
    if (req.has_param("status")) {
      const auto v = req.get_param_value("status");
      if (v == "pending") status = RecordStatus::kPending;
      else if (v == "accepted") status = RecordStatus::kAccepted;
      else if (v == "rejected") status = RecordStatus::kRejected;
      else return ReplyError(res, 400, "status must be pending, accepted or rejected");
    }
    json records = json::array();
    for (const auto& r : svc->ekb().Records(status)) records.push_back(RecordToJson(r, svc->ekb().k()));
    Reply(res, 200, {{"k", svc->ekb().k()}, {"records", std::move(records)}});
  }));

  s.Get("/v1/kb", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    const auto snap = svc->kb().Snapshot();
    const std::size_t offset = QueryInt(req, "offset", 0);
    const std::size_t limit = QueryInt(req, "limit", 100);
    json entries = json::array();
    const auto all = snap->entries();
    for (std::size_t i = offset; i < all.size() && i < offset + limit; ++i) {
      entries.push_back(EntryJson(*all[i]));
    }
    Reply(res, 200,
          {{"epoch", snap->epoch()},
           {"size", snap->size()},
           {"pending", svc->kb().pending()},
           {"staged_synthetic", svc->ekb().staged_synthetic()},
           {"offset", offset},
           {"entries", std::move(entries)}});
  }));

  s.Get("/v1/kb/search", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("q")) return ReplyError(res, 400, "query parameter 'q' is required");
    const std::size_t k = QueryInt(req, "k", svc->options().k);
    if (k < 1) return ReplyError(res, 400, "k must be >= 1");
    const auto snap = svc->kb().Snapshot();
    const auto q = snap->EncodeQuery(req.get_param_value("q"));
    const auto ctx = snap->index().TopK(q, snap->config().metric, k, std::nullopt, {});
    json results = json::array();
    for (const auto& it : ctx.items) {
      json e = EntryJson(*snap->Find(it.id));
      e["similarity"] = it.score;
      results.push_back(std::move(e));
    }
    Reply(res, 200, {{"epoch", snap->epoch()}, {"results", std::move(results)}});
  }));

  s.Post("/v1/kb/promote", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    auto body = ParseBody(req, res);
    if (!body) return;
    auto query = StringField(*body, "query", res);
    if (!query) return;
    if (!svc->ekb().Find(*query)) return ReplyError(res, 404, "no feedback record for query");
    const KbEntry e = svc->ekb().Promote(*query);
    json out = EntryJson(e);
    out["visible_after_refresh"] = true;
    Reply(res, 200, out);
  }));

  s.Post("/v1/kb/reject", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    auto body = ParseBody(req, res);
    if (!body) return;
    auto query = StringField(*body, "query", res);
    if (!query) return;
    if (!svc->ekb().Find(*query)) return ReplyError(res, 404, "no feedback record for query");
    Reply(res, 200, RecordToJson(svc->ekb().Reject(*query), svc->ekb().k()));
  }));

  s.Post("/v1/kb/refresh", Guarded([svc](const httplib::Request&, httplib::Response& res) {
    const auto epoch = svc->ekb().Refresh();
    Reply(res, 200, {{"epoch", epoch}, {"size", svc->kb().Snapshot()->size()}});
  }));

  s.Post("/v1/kb/policy-run", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    auto body = ParseBody(req, res);
    if (!body) return;
    if (!body->contains("policy")) return ReplyError(res, 400, "field 'policy' is required");
    PolicySpec policy;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    try {
      policy = body->at("policy").get<PolicySpec>();
      n = body->value("n", std::size_t{10});
      seed = body->value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
      return ReplyError(res, 400, e.what());
    }
    TemplateGenerator generator;
    const auto staged = svc->ekb().StageSynthetic(policy, generator, n, seed);
    json texts = json::array();
    for (const auto& ex : staged) texts.push_back(ex.text);
    json out = {{"policy_id", policy.policy_id},
                {"staged", staged.size()},
                {"texts", std::move(texts)}};
    if (body->value("refresh", false)) out["epoch"] = svc->ekb().Refresh();
    Reply(res, 200, out);
  }));

  s.Get("/v1/metrics", Guarded([svc](const httplib::Request& req, httplib::Response& res) {
    if (req.has_param("format") && req.get_param_value("format") == "text") {
      res.set_content(svc->MetricsText(), "text/plain; version=0.0.4");
      return;
    }
    Reply(res, 200, svc->MetricsJson());
  }));

  s.Get("/metrics", Guarded([svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(svc->MetricsText(), "text/plain; version=0.0.4");
  }));

  s.Get("/healthz", [svc](const httplib::Request&, httplib::Response& res) {
    Reply(res, svc->model_loaded() ? 200 : 503, {{"model_loaded", svc->model_loaded()}});
  });
}

HttpServer::~HttpServer() { Stop(); }

void HttpServer::Bind() {
  const auto& o = service_.options();
  if (o.port == 0) {
    port_ = server_->bind_to_any_port(o.host);
  } else {
    port_ = server_->bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (port_ <= 0) {
    throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));
  }
}

int HttpServer::Start() {
  Bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::Run() {
  Bind();
  server_->listen_after_bind();
}

void HttpServer::Stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ragguard
