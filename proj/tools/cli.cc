#include "cli.h"

#include <pthread.h>
#include <signal.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ragguard/config.h"
#include "ragguard/ekb.h"
#include "ragguard/guard_model.h"
#include "ragguard/knowledge_base.h"
#include "ragguard/loadgen.h"
#include "ragguard/manifest.h"
#include "ragguard/perturbation.h"
#include "ragguard/service.h"
#include "ragguard/training.h"

namespace ragguard {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = ".";
};

void AddCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config file");
  cmd->add_option("--set", c.sets, "Override, section.key=value (repeatable)");
  cmd->add_option("-o,--out", c.out, "Output directory");
}

Config LoadConfig(const Common& c) {
  std::optional<fs::path> file;
  if (!c.config.empty()) file = c.config;
  return Config::Resolve(file, ProcessEnvironment(), c.sets);
}

fs::path OutDir(const Common& c) {
  fs::path out(c.out);
  fs::create_directories(out);
  return out;
}

void WriteJson(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

// Flag value, else the config value at section.key, else an error naming
// what is missing.
std::string Required(const std::string& flag, const Config& cfg, const char* section,
                     const char* key, const char* what) {
  if (!flag.empty()) return flag;
  const auto& v = cfg.section(section).at(key);
  if (v.is_string() && !v.get<std::string>().empty()) return v.get<std::string>();
  throw Error(std::string("no ") + what + " given (flag or " + section + "." + key + ")");
}

std::optional<std::string> Optional(const std::string& flag, const Config& cfg,
                                    const char* section, const char* key) {
  if (!flag.empty()) return flag;
  const auto& v = cfg.section(section).at(key);
  if (v.is_string() && !v.get<std::string>().empty()) return v.get<std::string>();
  return std::nullopt;
}

Manifest StartManifest(const std::string& command, const Config& cfg) {
  Manifest m;
  m.command = command;
  m.config_hash = HexDigest(cfg.Hash());
  m.config = cfg.doc();
  m.seeds = {{"model", cfg.section("model").at("seed")},
             {"training", cfg.section("training").at("seed")},
             {"split", cfg.section("training").at("split_seed")},
             {"perturbation", cfg.section("perturbation").at("rng_seed")}};
  return m;
}

// Train split inserted as the retrieval KB, with ids for self-exclusion.
struct Prepared {
  Dataset data;
  std::unique_ptr<KnowledgeBase> kb;
  std::vector<EntryId> ids;
};

Prepared Prepare(const Config& cfg, const fs::path& dataset) {
  Prepared p;
  p.data = LoadDataset(dataset, cfg.dataset_options());
  if (p.data.train.empty()) throw Error("dataset " + dataset.string() + " has no train rows");
  p.kb = std::make_unique<KnowledgeBase>(cfg.encoder());
  p.ids = InsertExamples(*p.kb, p.data.train);
  return p;
}

TrainingSet BuildTrainingSet(const Config& cfg, const Prepared& p, bool perturb) {
  const PerturbationConfig pert = cfg.perturbation();
  TemplateAttacker attacker;
  const auto seed = cfg.section("training").at("seed").get<std::uint64_t>();
  return TrainingSet::Build(p.data.train, p.ids, p.kb->Snapshot(), cfg.retrieval(),
                            perturb ? &pert : nullptr, perturb ? &attacker : nullptr, seed);
}

std::unique_ptr<KnowledgeBase> LoadKb(const fs::path& path, const Config& cfg) {
  return KnowledgeBase::Load(path, cfg.encoder());
}

const std::vector<Example>& SplitRows(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "test") return d.test;
  throw InvalidArgument("split must be train or test");
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string dataset;
  bool materialize = false;
};

int RunTrain(const TrainArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path dataset = Required(a.dataset, cfg, "training", "dataset", "dataset");
  const Prepared p = Prepare(cfg, dataset);
  const TrainingSet ts = BuildTrainingSet(cfg, p, true);
  if (a.materialize) ts.WriteMaterialized(out / "training_set.jsonl");

  const auto& model = cfg.section("model");
  const auto& training = cfg.section("training");
  auto init = GuardParams::Initialize(cfg.teacher_capacity(), ts.layout(),
                                      model.at("seed").get<std::uint64_t>());
  const double lambda = cfg.perturbation().lambda;
  const auto epochs = training.at("epochs").get<std::size_t>();
  const auto opt = training.at("teacher_opt").get<OptimizerOptions>();
  TeacherResult r = RaftTrain(std::move(init), ts, lambda, epochs, opt,
                              [](const EpochRow& row, const GuardParams&, const GuardParams*) {
                                std::cerr << "epoch " << row.epoch << " L_train " << row.l_train
                                          << " L_adv " << row.l_adv << " L_total " << row.l_total
                                          << '\n';
                              });
  const auto snap = p.kb->Snapshot();
  const EvalMetrics m = Evaluate(r.params, p.data.test, *snap, cfg.retrieval());
  r.report.config_hash = HexDigest(cfg.Hash());
  r.report.final_metrics = m.ToJson();

  Manifest man = StartManifest("train", cfg);
  man.inputs = {dataset};
  SaveCheckpoint(out / "teacher.ckpt", r.params, {{"lambda", lambda}, {"epochs", epochs}});
  WriteJson(out / "train_report.json", r.report.ToJson());
  WriteJson(out / "metrics.json", m.ToJson());
  p.kb->Persist(out / "kb.jsonl");
  man.outputs = {out / "teacher.ckpt", out / "train_report.json", out / "metrics.json",
                 out / "kb.jsonl"};
  if (a.materialize) man.outputs.push_back(out / "training_set.jsonl");
  man.Write(out / "manifest.json");
  std::cout << "weighted_f1 " << m.weighted_f1 << "\n";
  return 0;
}

struct DistillArgs {
  Common common;
  std::string dataset;
  std::string teacher;
};

int RunDistill(const DistillArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path dataset = Required(a.dataset, cfg, "training", "dataset", "dataset");
  const fs::path teacher_path = Required(a.teacher, cfg, "model", "checkpoint", "teacher checkpoint");
  GuardParams teacher = LoadCheckpoint(teacher_path);
  const Prepared p = Prepare(cfg, dataset);
  const TrainingSet ts = BuildTrainingSet(cfg, p, true);
  if (!(teacher.layout == ts.layout())) {
    throw InvalidArgument("teacher layout does not match the configured encoder dimension and k");
  }
  const auto seed = cfg.section("model").at("seed").get<std::uint64_t>();
  auto student = GuardParams::Initialize(cfg.student_capacity(), ts.layout(), DeriveSeed(seed, 0x57d, 0));
  DistillResult r = SkdTrain(std::move(teacher), std::move(student), ts, cfg.schedule(), cfg.distill());

  const auto snap = p.kb->Snapshot();
  const EvalMetrics mt = Evaluate(r.teacher, p.data.test, *snap, cfg.retrieval());
  const EvalMetrics ms = Evaluate(r.student, p.data.test, *snap, cfg.retrieval());
  const json metrics = {
      {"teacher", mt.ToJson()},
      {"student", ms.ToJson()},
      {"retention", mt.weighted_f1 > 0.0 ? ms.weighted_f1 / mt.weighted_f1 : 0.0},
      {"teacher_parameters", r.teacher.ParameterCount()},
      {"student_parameters", r.student.ParameterCount()}};
  r.report.config_hash = HexDigest(cfg.Hash());
  r.report.final_metrics = metrics;

  Manifest man = StartManifest("distill", cfg);
  man.inputs = {dataset, teacher_path};
  SaveCheckpoint(out / "student.ckpt", r.student);
  SaveCheckpoint(out / "teacher_distilled.ckpt", r.teacher);
  WriteJson(out / "distill_report.json", r.report.ToJson());
  WriteJson(out / "metrics.json", metrics);
  man.outputs = {out / "student.ckpt", out / "teacher_distilled.ckpt",
                 out / "distill_report.json", out / "metrics.json"};
  man.Write(out / "manifest.json");
  std::cout << "teacher " << mt.weighted_f1 << " student " << ms.weighted_f1 << "\n";
  return 0;
}

struct EvalArgs {
  Common common;
  std::string dataset;
  std::string model;
  std::string kb;
  std::string split = "test";
};

int RunEval(const EvalArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path dataset = Required(a.dataset, cfg, "training", "dataset", "dataset");
  const fs::path model_path = Required(a.model, cfg, "model", "checkpoint", "model checkpoint");
  const GuardParams params = LoadCheckpoint(model_path);
  const auto kb_path = Optional(a.kb, cfg, "kb", "path");

  Manifest man = StartManifest("eval", cfg);
  man.inputs = {dataset, model_path};
  Prepared p;
  if (kb_path) {
    p.data = LoadDataset(dataset, cfg.dataset_options());
    p.kb = LoadKb(*kb_path, cfg);
    man.inputs.push_back(*kb_path);
  } else {
    p = Prepare(cfg, dataset);
  }
  const EvalMetrics m =
      Evaluate(params, SplitRows(p.data, a.split), *p.kb->Snapshot(), cfg.retrieval());
  WriteJson(out / "metrics.json", m.ToJson());
  man.outputs = {out / "metrics.json"};
  man.Write(out / "manifest.json");
  std::cout << "weighted_f1 " << m.weighted_f1 << "\n";
  return 0;
}

struct AnalyzeArgs {
  Common common;
  std::string dataset;
  std::string kb;
  std::string split = "test";
  std::optional<double> threshold;
};

int RunAnalyze(const AnalyzeArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path dataset = Required(a.dataset, cfg, "training", "dataset", "dataset");
  const auto kb_path = Optional(a.kb, cfg, "kb", "path");
  Manifest man = StartManifest("analyze", cfg);
  man.inputs = {dataset};
  Prepared p;
  if (kb_path) {
    p.data = LoadDataset(dataset, cfg.dataset_options());
    p.kb = LoadKb(*kb_path, cfg);
    man.inputs.push_back(*kb_path);
  } else {
    p = Prepare(cfg, dataset);
  }
  const double threshold = a.threshold.value_or(1.0 - cfg.retrieval().epsilon);
  const auto& rows = SplitRows(p.data, a.split);
  const auto snap = p.kb->Snapshot();
  const json doc = {{"split", a.split},
                    {"threshold", threshold},
                    {"context_distribution", AnalyzeContextDistribution(rows, *snap, threshold).ToJson()},
                    {"coverage_ratio", ContextCoverageRatio(rows, *snap, threshold)}};
  WriteJson(out / "analysis.json", doc);
  man.outputs = {out / "analysis.json"};
  man.Write(out / "manifest.json");
  std::cout << doc.dump(2) << "\n";
  return 0;
}

ServiceOptions ServiceOptionsFrom(const Config& cfg) {
  const auto& s = cfg.section("service");
  ServiceOptions o;
  o.k = cfg.retrieval().k;
  o.epsilon = cfg.retrieval().epsilon;
  o.tau_ms = s.at("tau_ms").get<double>();
  o.strict = s.at("strict").get<bool>();
  o.retrieval_budget_ms = s.at("retrieval_budget_ms").get<double>();
  o.metrics_window_s = s.at("metrics_window_s").get<double>();
  o.host = s.at("host").get<std::string>();
  o.port = s.at("port").get<int>();
  o.threads = s.at("threads").get<int>();
  o.Validate();
  return o;
}

struct ServeArgs {
  Common common;
  std::string model;
  std::string kb;
};

int RunServe(const ServeArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const auto kb_path = Optional(a.kb, cfg, "kb", "path");
  std::unique_ptr<KnowledgeBase> kb =
      kb_path ? LoadKb(*kb_path, cfg) : std::make_unique<KnowledgeBase>(cfg.encoder());
  if (!kb_path) kb->Publish();

  EvolvingKb::Options eo;
  eo.k = cfg.section("service").at("ekb_k").get<std::size_t>();
  if (auto log = Optional("", cfg, "service", "feedback_log")) eo.feedback_log = *log;
  EvolvingKb ekb(*kb, eo);
  GuardService service(*kb, ekb, ServiceOptionsFrom(cfg));
  if (auto model = Optional(a.model, cfg, "model", "checkpoint")) {
    service.LoadModel(LoadCheckpoint(*model));
  } else {
    std::cerr << "warning: no model loaded; /v1/classify answers 503\n";
  }

  // Signals are taken on a dedicated thread so Stop() runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  HttpServer server(service);
  const int port = server.Start();
  std::cerr << "serving on " << service.options().host << ":" << port << " (kb epoch "
            << kb->Snapshot()->epoch() << ", " << kb->Snapshot()->size() << " entries)\n";
  int sig = 0;
  sigwait(&set, &sig);
  server.Stop();
  if (kb_path && cfg.section("kb").contains("path")) {
    // Promoted and synthetic entries survive a restart.
    kb->Persist(*kb_path);
  }
  return 0;
}

std::vector<std::string> ReadQueries(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open query file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    // Dataset-style JSONL rows contribute their text field.
    if (line.front() == '{') {
      const json row = json::parse(line, nullptr, false);
      if (!row.is_discarded() && row.contains("text") && row["text"].is_string()) {
        out.push_back(row["text"].get<std::string>());
        continue;
      }
    }
    out.push_back(line);
  }
  if (out.empty()) throw Error("query file " + path.string() + " is empty");
  return out;
}

struct BenchArgs {
  Common common;
  std::string queries;
  std::string from_samples;
  double qps = 300.0;
  double duration = 60.0;
  int workers = 8;
  std::uint64_t seed = 0;
  std::string host;
  int port = 0;
};

int RunBench(const BenchArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const double tau = cfg.section("service").at("tau_ms").get<double>();
  Manifest man = StartManifest("bench", cfg);
  man.seeds["queries"] = a.seed;

  std::vector<RequestSample> samples;
  bool aborted = false;
  if (!a.from_samples.empty()) {
    samples = ReadSamplesCsv(a.from_samples);
    man.inputs = {a.from_samples};
  } else {
    if (a.queries.empty()) throw InvalidArgument("bench: --queries or --from-samples is required");
    LoadgenOptions lo;
    lo.host = a.host.empty() ? cfg.section("service").at("host").get<std::string>() : a.host;
    lo.port = a.port > 0 ? a.port : cfg.section("service").at("port").get<int>();
    lo.target_qps = a.qps;
    lo.duration_s = a.duration;
    lo.queries = ReadQueries(a.queries);
    lo.seed = a.seed;
    lo.workers = a.workers;
    lo.tau_ms = tau;
    LoadgenResult r = RunLoadgen(lo);
    samples = std::move(r.samples);
    aborted = r.aborted;
    if (aborted) std::cerr << "aborted: " << r.abort_reason << "\n";
    man.inputs = {a.queries};
    WriteSamplesCsv(out / "samples.csv", samples);
  }
  const LatencyReport report = ComputeReport(samples, a.qps, a.duration, tau, aborted);
  WriteJson(out / "report.json", report.ToJson());
  man.outputs = {out / "report.json"};
  if (a.from_samples.empty()) man.outputs.push_back(out / "samples.csv");
  man.Write(out / "manifest.json");
  std::cout << "achieved_qps " << report.achieved_qps << " p99_total_ms " << report.total.p99
            << " p99_client_ms " << report.client.p99 << (report.saturated ? " SATURATED" : "")
            << "\n";
  return aborted ? 1 : 0;
}

struct KbArgs {
  Common common;
  std::string dataset;
  std::string kb;
  std::string split = "train";
  std::string query;
  std::size_t k = 5;
};

int RunKbImport(const KbArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path dataset = Required(a.dataset, cfg, "training", "dataset", "dataset");
  const Dataset data = LoadDataset(dataset, cfg.dataset_options());
  KnowledgeBase kb(cfg.encoder());
  if (a.split == "train" || a.split == "all") InsertExamples(kb, data.train);
  if (a.split == "test" || a.split == "all") InsertExamples(kb, data.test);
  if (a.split != "train" && a.split != "test" && a.split != "all") {
    throw InvalidArgument("split must be train, test or all");
  }
  kb.Persist(out / "kb.jsonl");
  Manifest man = StartManifest("kb import", cfg);
  man.inputs = {dataset};
  man.outputs = {out / "kb.jsonl"};
  man.Write(out / "manifest.json");
  std::cout << "entries " << kb.size() << "\n";
  return 0;
}

int RunKbExport(const KbArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const fs::path out = OutDir(a.common);
  const fs::path kb_path = Required(a.kb, cfg, "kb", "path", "KB file");
  const auto kb = LoadKb(kb_path, cfg);
  Dataset d;
  for (const auto& e : kb->Snapshot()->entries()) d.train.push_back({e->text, e->label});
  WriteDataset(out / "kb_dataset.jsonl", d);
  std::cout << "entries " << d.train.size() << "\n";
  return 0;
}

int RunKbStats(const KbArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const auto kb = LoadKb(Required(a.kb, cfg, "kb", "path", "KB file"), cfg);
  const auto snap = kb->Snapshot();
  std::map<std::string, std::size_t> by_source, by_label;
  for (const auto& e : snap->entries()) {
    ++by_source[std::string(SourceName(e->meta.source))];
    ++by_label[std::string(LabelName(e->label))];
  }
  std::cout << json{{"entries", snap->size()}, {"by_source", by_source}, {"by_label", by_label}}.dump(2)
            << "\n";
  return 0;
}

int RunKbSearch(const KbArgs& a) {
  const Config cfg = LoadConfig(a.common);
  const auto kb = LoadKb(Required(a.kb, cfg, "kb", "path", "KB file"), cfg);
  const auto snap = kb->Snapshot();
  const auto q = snap->EncodeQuery(a.query);
  for (const auto& it : snap->index().TopK(q, snap->config().metric, a.k, std::nullopt, {}).items) {
    const KbEntry* e = snap->Find(it.id);
    std::cout << it.id << '\t' << it.score << '\t' << LabelName(e->label) << '\t' << e->text << '\n';
  }
  return 0;
}

}  // namespace

int RunCli(int argc, const char* const* argv) {
  CLI::App app{"Retrieval-augmented guard model: training, evaluation and serving"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Adversarial fine-tuning of the teacher");
  AddCommon(c_train, train.common);
  c_train->add_option("--dataset", train.dataset, "Dataset JSONL");
  c_train->add_flag("--materialize", train.materialize, "Also write the perturbed training set");

  DistillArgs distill;
  auto* c_distill = app.add_subcommand("distill", "Scheduled teacher-to-student distillation");
  AddCommon(c_distill, distill.common);
  c_distill->add_option("--dataset", distill.dataset, "Dataset JSONL");
  c_distill->add_option("--teacher", distill.teacher, "Teacher checkpoint");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Weighted F1 of a checkpoint");
  AddCommon(c_eval, eval.common);
  c_eval->add_option("--dataset", eval.dataset, "Dataset JSONL");
  c_eval->add_option("--model", eval.model, "Checkpoint");
  c_eval->add_option("--kb", eval.kb, "KB file (default: train split)");
  c_eval->add_option("--split", eval.split, "train or test")->check(CLI::IsMember({"train", "test"}));

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Context-label distribution and coverage");
  AddCommon(c_analyze, analyze.common);
  c_analyze->add_option("--dataset", analyze.dataset, "Dataset JSONL");
  c_analyze->add_option("--kb", analyze.kb, "KB file (default: train split)");
  c_analyze->add_option("--split", analyze.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  c_analyze->add_option("--threshold", analyze.threshold, "Similarity threshold (default 1 - epsilon)");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "HTTP classification service");
  AddCommon(c_serve, serve.common);
  c_serve->add_option("--model", serve.model, "Checkpoint");
  c_serve->add_option("--kb", serve.kb, "KB file");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Open-loop load generator");
  AddCommon(c_bench, bench.common);
  c_bench->add_option("--queries", bench.queries, "Query file (lines or dataset JSONL)");
  c_bench->add_option("--from-samples", bench.from_samples, "Recompute the report from samples.csv");
  c_bench->add_option("--qps", bench.qps, "Target requests per second")->check(CLI::PositiveNumber);
  c_bench->add_option("--duration", bench.duration, "Seconds")->check(CLI::PositiveNumber);
  c_bench->add_option("--workers", bench.workers, "Client connections")->check(CLI::PositiveNumber);
  c_bench->add_option("--seed", bench.seed, "Query order seed");
  c_bench->add_option("--host", bench.host, "Service host (default service.host)");
  c_bench->add_option("--port", bench.port, "Service port (default service.port)");

  KbArgs kb;
  auto* c_kb = app.add_subcommand("kb", "Knowledge base import/export/inspection");
  c_kb->require_subcommand(1);
  auto* c_import = c_kb->add_subcommand("import", "Dataset rows to a KB file");
  AddCommon(c_import, kb.common);
  c_import->add_option("--dataset", kb.dataset, "Dataset JSONL");
  c_import->add_option("--split", kb.split, "train, test or all");
  auto* c_export = c_kb->add_subcommand("export", "KB file to dataset JSONL");
  AddCommon(c_export, kb.common);
  c_export->add_option("--kb", kb.kb, "KB file");
  auto* c_stats = c_kb->add_subcommand("stats", "Entry counts");
  AddCommon(c_stats, kb.common);
  c_stats->add_option("--kb", kb.kb, "KB file");
  auto* c_search = c_kb->add_subcommand("search", "Top-k entries for a probe");
  AddCommon(c_search, kb.common);
  c_search->add_option("--kb", kb.kb, "KB file");
  c_search->add_option("-q,--query", kb.query, "Probe text")->required();
  c_search->add_option("-k", kb.k, "Results")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_train) return RunTrain(train);
    if (*c_distill) return RunDistill(distill);
    if (*c_eval) return RunEval(eval);
    if (*c_analyze) return RunAnalyze(analyze);
    if (*c_serve) return RunServe(serve);
    if (*c_bench) return RunBench(bench);
    if (*c_import) return RunKbImport(kb);
    if (*c_export) return RunKbExport(kb);
    if (*c_stats) return RunKbStats(kb);
    if (*c_search) return RunKbSearch(kb);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ragguard
