#include "ragguard/training.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ragguard/random.h"

namespace ragguard {
namespace {

constexpr std::uint64_t kOrderStream = 0x0bd3;
constexpr std::uint64_t kPerturbStream = 0x9e37;

std::string NormalizeLabelToken(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out(raw.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::size_t> BatchOrder(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(DeriveSeed(seed, kOrderStream, epoch));
  Shuffle(order, rng);
  return order;
}

void CheckOptimizer(const OptimizerOptions& opt) {
  if (opt.batch_size == 0) throw InvalidArgument("training: batch_size must be >= 1");
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) {
    throw InvalidArgument("training: lr must be finite and >= 0");
  }
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
    throw InvalidArgument("training: momentum must lie in [0, 1)");
  }
}

void CheckShapes(const GuardParams& params, const TrainingSet& data) {
  if (params.layout != data.layout()) {
    throw InvalidArgument("training: model feature layout does not match the training set");
  }
}

LossTarget CeTarget(Label y) {
  LossTarget t;
  t.label = y;
  return t;
}

FeatureMatrix GatherColumns(const FeatureMatrix& src, std::span<const std::size_t> cols) {
  FeatureMatrix out(src.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.col(static_cast<Eigen::Index>(c)) = src.col(static_cast<Eigen::Index>(cols[c]));
  }
  return out;
}

// One optimizer step on the teacher objective over the examples in `idx`.
void TeacherStep(GuardParams& params, OptimizerState& state, const TrainingSet& data,
                 std::span<const std::size_t> idx, double lambda, bool supervised_only,
                 const OptimizerOptions& opt, std::size_t batch_index) {
  const auto& examples = data.examples();
  const FeatureMatrix clean = GatherColumns(data.clean_features(), idx);
  std::vector<LossTarget> targets;
  targets.reserve(idx.size());
  for (auto i : idx) targets.push_back(CeTarget(examples[i].y));

  LossAndGradients lg;
  if (supervised_only) {
    lg = MeanLossGradients(params, clean, targets, batch_index);
  } else {
    std::vector<double> weights(idx.size(), 1.0 / static_cast<double>(idx.size()));
    FeatureMatrix features = clean;
    if (lambda != 0.0) {
      std::size_t with_variants = 0;
      std::vector<std::size_t> cols;
      for (auto i : idx) {
        if (data.adv_end(i) > data.adv_begin(i)) ++with_variants;
      }
      for (auto i : idx) {
        const std::size_t v = data.adv_end(i) - data.adv_begin(i);
        for (std::size_t c = data.adv_begin(i); c < data.adv_end(i); ++c) {
          cols.push_back(c);
          targets.push_back(CeTarget(examples[i].y));
          weights.push_back(lambda / (static_cast<double>(with_variants) *
                                      static_cast<double>(v)));
        }
      }
      if (!cols.empty()) {
        const FeatureMatrix adv = GatherColumns(data.adv_features(), cols);
        features.resize(clean.rows(), clean.cols() + adv.cols());
        features << clean, adv;
      }
    }
    lg = ComputeGradients(params, features, targets, weights, batch_index);
  }
  ApplyUpdate(params, lg.gradients, state, opt.lr, opt.momentum);
}

void StudentStep(GuardParams& student, OptimizerState& state, const TrainingSet& data,
                 std::span<const std::size_t> idx,
                 std::span<const PredictionDistribution> teacher_out,
                 const DistillOptions& options, std::size_t batch_index) {
  const auto& examples = data.examples();
  const FeatureMatrix features = GatherColumns(data.clean_features(), idx);
  std::vector<LossTarget> targets;
  targets.reserve(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    targets.push_back({examples[idx[b]].y, teacher_out[b], options.ce_weight,
                       options.kl_weight, options.reward_weight});
  }
  const auto lg = MeanLossGradients(student, features, targets, batch_index);
  ApplyUpdate(student, lg.gradients, state, options.student_opt.lr,
              options.student_opt.momentum);
}

[[noreturn]] void Abort(const NonFiniteError& e, std::size_t epoch) {
  throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + ": " + e.what(),
                        epoch, e.batch_index());
}

TeacherResult TrainTeacher(GuardParams params, const TrainingSet& data, double lambda,
                           bool supervised_only, std::size_t epochs,
                           const OptimizerOptions& opt, const EpochObserver& observer) {
  CheckOptimizer(opt);
  CheckShapes(params, data);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("raft: lambda must be finite and >= 0");
  }
  TeacherResult result;
  result.report.seed = opt.seed;
  OptimizerState state;
  const std::size_t n = data.size();
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = BatchOrder(n, opt.seed, epoch);
    std::size_t batch = 0;
    try {
      for (std::size_t start = 0; start < n; start += opt.batch_size, ++batch) {
        const std::size_t len = std::min(opt.batch_size, n - start);
        TeacherStep(params, state, data, std::span(order).subspan(start, len), lambda,
                    supervised_only, opt, batch);
      }
    } catch (const NonFiniteError& e) {
      Abort(e, epoch);
    }
    const auto losses = ComputeTeacherLosses(params, data);
    EpochRow row;
    row.epoch = epoch;
    row.mode = 0;
    row.l_train = losses.l_train;
    row.l_adv = losses.l_adv;
    row.l_total = supervised_only ? losses.l_train : losses.l_train + lambda * losses.l_adv;
    row.teacher_hash = params.Hash();
    if (!std::isfinite(row.l_total)) {
      throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) +
                                ": non-finite epoch loss",
                            epoch, batch);
    }
    result.report.epochs.push_back(row);
    if (observer) observer(row, params, nullptr);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

std::optional<Label> LabelMapping::Map(std::string_view raw) const {
  const std::string key = NormalizeLabelToken(raw);
  auto it = table.find(key);
  if (it != table.end()) return it->second;
  return ParseLabel(key);
}

void to_json(nlohmann::json& j, const LabelMapping& m) {
  j = nlohmann::json::object();
  for (const auto& [k, v] : m.table) j[k] = LabelName(v);
}

void from_json(const nlohmann::json& j, LabelMapping& m) {
  m.table.clear();
  for (const auto& [k, v] : j.items()) {
    const auto label = ParseLabel(v.get<std::string>());
    if (!label) throw InvalidArgument("label mapping: target must be safe or unsafe");
    m.table[NormalizeLabelToken(k)] = *label;
  }
}

Dataset ParseDataset(std::istream& in, const DatasetOptions& options) {
  Dataset out;
  std::vector<Example> unsplit;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("dataset line " + std::to_string(line_no) + ": malformed JSON", line_no);
    }
    if (!row.is_object() || !row.contains("text") || !row["text"].is_string() ||
        !row.contains("label")) {
      throw DatasetError("dataset line " + std::to_string(line_no) +
                             ": expected an object with text and label",
                         line_no);
    }
    const auto& raw = row["label"];
    const std::string token = raw.is_string() ? raw.get<std::string>() : raw.dump();
    const auto label = options.mapping.Map(token);
    if (!label) {
      throw DatasetError("dataset line " + std::to_string(line_no) + ": unknown label '" +
                             token + "'",
                         line_no);
    }
    Example ex{row["text"].get<std::string>(), *label};
    if (!row.contains("split") || row["split"].is_null()) {
      unsplit.push_back(std::move(ex));
      continue;
    }
    const auto split = row["split"].is_string() ? row["split"].get<std::string>() : "";
    if (split == "train") {
      out.train.push_back(std::move(ex));
    } else if (split == "test") {
      out.test.push_back(std::move(ex));
    } else {
      throw DatasetError("dataset line " + std::to_string(line_no) + ": bad split field",
                         line_no);
    }
  }
  if (!unsplit.empty()) {
    std::vector<std::size_t> order(unsplit.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(options.split_seed);
    Shuffle(order, rng);
    const std::size_t n_test = unsplit.size() / 5;
    for (std::size_t r = 0; r < order.size(); ++r) {
      auto& dst = r < order.size() - n_test ? out.train : out.test;
      dst.push_back(std::move(unsplit[order[r]]));
    }
  }
  return out;
}

Dataset LoadDataset(const std::filesystem::path& path, const DatasetOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  return ParseDataset(in, options);
}

void WriteDataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write dataset " + path.string());
  auto emit = [&out](const std::vector<Example>& rows, const char* split) {
    for (const auto& ex : rows) {
      out << nlohmann::json{{"text", ex.text}, {"label", LabelName(ex.label)}, {"split", split}}
                 .dump()
          << '\n';
    }
  };
  emit(data.train, "train");
  emit(data.test, "test");
}

std::vector<EntryId> InsertExamples(KnowledgeBase& kb, std::span<const Example> examples) {
  std::vector<EntryId> ids;
  ids.reserve(examples.size());
  for (const auto& ex : examples) ids.push_back(kb.Insert(ex.text, ex.label));
  kb.Publish();
  return ids;
}

// ---------------------------------------------------------------------------
// TrainingSet

TrainingSet TrainingSet::Build(std::span<const Example> examples,
                               std::span<const EntryId> self_ids,
                               std::shared_ptr<const KbSnapshot> kb,
                               const RetrievalOptions& retrieval,
                               const PerturbationConfig* perturbation, Attacker* attacker,
                               std::uint64_t seed) {
  if (!self_ids.empty() && self_ids.size() != examples.size()) {
    throw InvalidArgument("training set: self_ids must match examples");
  }
  if (perturbation && !attacker) {
    throw InvalidArgument("training set: perturbation requires an attacker");
  }
  TrainingSet ts;
  ts.kb_ = std::move(kb);
  ts.pool_ = std::make_unique<EntryPool>(ts.kb_->config());
  ts.resolver_ = std::make_unique<ChainedResolver>(*ts.kb_, *ts.pool_);
  ts.layout_ = {ts.kb_->config().dimension, retrieval.k};

  std::unique_ptr<VariantRetriever> variants;
  if (perturbation) {
    perturbation->Validate();
    if (perturbation->encoder_variation) {
      variants = std::make_unique<VariantRetriever>(ts.kb_, perturbation->encoder_variants);
    }
  }

  ts.examples_.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    TrainExample te;
    te.x = examples[i].text;
    te.y = examples[i].label;
    std::span<const EntryId> exclude;
    if (!self_ids.empty() && self_ids[i] != 0) exclude = self_ids.subspan(i, 1);
    const EncodedText q = ts.kb_->EncodeQuery(te.x);
    te.clean_ctx = ts.kb_->RetrieveTopK(q, retrieval.k, retrieval.epsilon, exclude);
    if (perturbation) {
      PerturbationInputs in{te.x, &te.clean_ctx, retrieval.k, exclude};
      te.perturbed_ctx = BuildPerturbedContexts(in, *ts.kb_, variants.get(), *perturbation,
                                                *attacker, *ts.pool_,
                                                DeriveSeed(seed, kPerturbStream, i));
    }
    ts.examples_.push_back(std::move(te));
  }

  const auto rows = static_cast<Eigen::Index>(ts.layout_.size());
  const auto& cfg = ts.kb_->config();
  ts.clean_.resize(rows, static_cast<Eigen::Index>(ts.examples_.size()));
  ts.adv_offsets_.assign(1, 0);
  std::size_t total_adv = 0;
  for (const auto& te : ts.examples_) total_adv += te.perturbed_ctx.size();
  ts.adv_.resize(rows, static_cast<Eigen::Index>(total_adv));
  std::size_t col = 0;
  for (std::size_t i = 0; i < ts.examples_.size(); ++i) {
    const auto& te = ts.examples_[i];
    WriteFeatures(Embed(te.x, cfg), te.clean_ctx, *ts.resolver_, ts.layout_,
                  std::span<double>(ts.clean_.col(static_cast<Eigen::Index>(i)).data(),
                                    ts.layout_.size()));
    for (const auto& pc : te.perturbed_ctx) {
      WriteFeatures(Embed(pc.query, cfg), pc.context, *ts.resolver_, ts.layout_,
                    std::span<double>(ts.adv_.col(static_cast<Eigen::Index>(col)).data(),
                                      ts.layout_.size()));
      ++col;
    }
    if (!te.perturbed_ctx.empty()) ++ts.with_variants_;
    ts.adv_offsets_.push_back(col);
  }
  return ts;
}

void TrainingSet::WriteMaterialized(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  auto items_json = [](const ContextSet& ctx) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& it : ctx.items) a.push_back({{"id", it.id}, {"score", it.score}});
    return a;
  };
  out << nlohmann::json{{"format", "ragguard-perturbations"},
                        {"version", 1},
                        {"examples", examples_.size()},
                        {"generated_entries", pool_->size()},
                        {"kb_epoch", kb_->epoch()}}
             .dump()
      << '\n';
  for (const auto& e : pool_->entries()) {
    out << nlohmann::json{{"entry",
                           {{"id", e->id},
                            {"text", e->text},
                            {"label", LabelName(e->label)},
                            {"source", SourceName(e->meta.source)}}}}
               .dump()
        << '\n';
  }
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const auto& te = examples_[i];
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& pc : te.perturbed_ctx) {
      nlohmann::json v = {{"step", PerturbStepName(pc.step)},
                          {"seed", pc.seed},
                          {"query", pc.query},
                          {"items", items_json(pc.context)}};
      if (pc.strategy) v["strategy"] = StrategyName(*pc.strategy);
      variants.push_back(std::move(v));
    }
    out << nlohmann::json{{"index", i},
                          {"x", te.x},
                          {"y", LabelName(te.y)},
                          {"clean", items_json(te.clean_ctx)},
                          {"variants", std::move(variants)}}
               .dump()
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Schedule and report

Schedule Schedule::Canonical(std::size_t epochs) {
  const std::size_t third = epochs / 3;
  return FromTransitions(epochs, third + 1, 2 * third + 1);
}

Schedule Schedule::FromTransitions(std::size_t epochs, std::size_t t1, std::size_t t2) {
  if (!(1 <= t1 && t1 <= t2 && t2 <= epochs)) {
    throw InvalidArgument("schedule: requires 1 <= T1 <= T2 <= T");
  }
  Schedule s;
  for (std::size_t t = 1; t <= epochs; ++t) s.modes.push_back(t < t1 ? 0 : (t < t2 ? 2 : 1));
  return s;
}

void Schedule::Validate() const {
  if (modes.empty()) throw InvalidArgument("schedule: no epochs");
  for (int m : modes) {
    if (m < 0 || m > 2) throw InvalidArgument("schedule: modes must be 0, 1 or 2");
  }
}

std::optional<std::pair<std::size_t, std::size_t>> Schedule::Transitions() const {
  std::size_t t = 0;
  while (t < modes.size() && modes[t] == 0) ++t;
  const std::size_t t1 = t + 1;
  while (t < modes.size() && modes[t] == 2) ++t;
  const std::size_t t2 = t + 1;
  while (t < modes.size() && modes[t] == 1) ++t;
  if (t != modes.size() || t2 > modes.size()) return std::nullopt;
  return std::make_pair(t1, t2);
}

nlohmann::json TrainReport::ToJson() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : epochs) {
    nlohmann::json row = {{"epoch", r.epoch},
                          {"mode", r.mode},
                          {"l_train", r.l_train},
                          {"l_adv", r.l_adv},
                          {"l_total", r.l_total},
                          {"teacher_hash", HexDigest(r.teacher_hash)}};
    row["l_student"] = r.l_student ? nlohmann::json(*r.l_student) : nlohmann::json(nullptr);
    row["student_hash"] =
        r.student_hash ? nlohmann::json(HexDigest(*r.student_hash)) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  return {{"epochs", std::move(rows)},
          {"final_metrics", final_metrics},
          {"seed", seed},
          {"config_hash", config_hash}};
}

std::string TrainReport::Hash() const { return HexDigest(Fnv1a(ToJson().dump())); }

void to_json(nlohmann::json& j, const OptimizerOptions& o) {
  j = {{"lr", o.lr}, {"momentum", o.momentum}, {"batch_size", o.batch_size}, {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, OptimizerOptions& o) {
  o = OptimizerOptions{};
  if (j.contains("lr")) j.at("lr").get_to(o.lr);
  if (j.contains("momentum")) j.at("momentum").get_to(o.momentum);
  if (j.contains("batch_size")) j.at("batch_size").get_to(o.batch_size);
  if (j.contains("seed")) j.at("seed").get_to(o.seed);
  CheckOptimizer(o);
}

void DistillOptions::Validate() const {
  if (!(kl_weight >= 0.0 && ce_weight >= 0.0 && reward_weight >= 0.0)) {
    throw InvalidArgument("distill: loss weights must be >= 0");
  }
  if (std::abs(kl_weight + ce_weight - 1.0) > 1e-12) {
    throw InvalidArgument("distill: kl_weight + ce_weight must equal 1");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("distill: lambda must be finite and >= 0");
  }
  CheckOptimizer(teacher_opt);
  CheckOptimizer(student_opt);
}

void to_json(nlohmann::json& j, const DistillOptions& o) {
  j = {{"lambda", o.lambda},
       {"kl_weight", o.kl_weight},
       {"ce_weight", o.ce_weight},
       {"reward_weight", o.reward_weight},
       {"teacher_opt", o.teacher_opt},
       {"student_opt", o.student_opt}};
}

void from_json(const nlohmann::json& j, DistillOptions& o) {
  o = DistillOptions{};
  if (j.contains("lambda")) j.at("lambda").get_to(o.lambda);
  if (j.contains("kl_weight")) j.at("kl_weight").get_to(o.kl_weight);
  if (j.contains("ce_weight")) j.at("ce_weight").get_to(o.ce_weight);
  if (j.contains("reward_weight")) j.at("reward_weight").get_to(o.reward_weight);
  if (j.contains("teacher_opt")) j.at("teacher_opt").get_to(o.teacher_opt);
  if (j.contains("student_opt")) j.at("student_opt").get_to(o.student_opt);
  o.Validate();
}

// ---------------------------------------------------------------------------
// Trainers

DatasetLosses ComputeTeacherLosses(const GuardParams& params, const TrainingSet& data) {
  CheckShapes(params, data);
  DatasetLosses out;
  const auto& examples = data.examples();
  if (data.size() == 0) return out;
  const auto clean = ForwardBatch(params, data.clean_features());
  double sum = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) sum += CrossEntropy(clean[i], examples[i].y);
  out.l_train = sum / static_cast<double>(clean.size());

  if (data.examples_with_variants() == 0) return out;
  const auto adv = ForwardBatch(params, data.adv_features());
  double adv_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t b = data.adv_begin(i);
    const std::size_t e = data.adv_end(i);
    if (e == b) continue;
    double s = 0.0;
    for (std::size_t c = b; c < e; ++c) s += CrossEntropy(adv[c], examples[i].y);
    adv_sum += s / static_cast<double>(e - b);
  }
  out.l_adv = adv_sum / static_cast<double>(data.examples_with_variants());
  return out;
}

double ComputeStudentLoss(const GuardParams& teacher, const GuardParams& student,
                          const TrainingSet& data, const DistillOptions& options) {
  CheckShapes(student, data);
  if (data.size() == 0) return 0.0;
  const auto t = ForwardBatch(teacher, data.clean_features());
  const auto s = ForwardBatch(student, data.clean_features());
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sum += ExampleLoss(s[i], {data.examples()[i].y, t[i], options.ce_weight, options.kl_weight,
                              options.reward_weight});
  }
  return sum / static_cast<double>(s.size());
}

TeacherResult SupervisedFinetune(GuardParams init, const TrainingSet& data, std::size_t epochs,
                                 const OptimizerOptions& opt, const EpochObserver& observer) {
  return TrainTeacher(std::move(init), data, 0.0, /*supervised_only=*/true, epochs, opt,
                      observer);
}

TeacherResult RaftTrain(GuardParams init, const TrainingSet& data, double lambda,
                        std::size_t epochs, const OptimizerOptions& opt,
                        const EpochObserver& observer) {
  return TrainTeacher(std::move(init), data, lambda, /*supervised_only=*/false, epochs, opt,
                      observer);
}

DistillResult SkdTrain(GuardParams teacher, GuardParams student, const TrainingSet& data,
                       const Schedule& schedule, const DistillOptions& options,
                       const EpochObserver& observer) {
  schedule.Validate();
  options.Validate();
  CheckShapes(teacher, data);
  CheckShapes(student, data);

  DistillResult result;
  result.report.seed = options.teacher_opt.seed;
  OptimizerState teacher_state;
  OptimizerState student_state;
  const std::size_t n = data.size();
  const std::size_t batch_size = options.teacher_opt.batch_size;

  for (std::size_t e = 0; e < schedule.modes.size(); ++e) {
    const std::size_t epoch = e + 1;
    const int mode = schedule.modes[e];
    const auto order = BatchOrder(n, options.teacher_opt.seed, epoch);
    std::vector<PredictionDistribution> frozen;
    if (mode == 1) frozen = ForwardBatch(teacher, data.clean_features());

    std::size_t batch = 0;
    try {
      for (std::size_t start = 0; start < n; start += batch_size, ++batch) {
        const auto idx = std::span(order).subspan(start, std::min(batch_size, n - start));
        if (mode == 0 || mode == 2) {
          TeacherStep(teacher, teacher_state, data, idx, options.lambda,
                      /*supervised_only=*/false, options.teacher_opt, batch);
        }
        if (mode == 2) {
          const auto out = ForwardBatch(teacher, GatherColumns(data.clean_features(), idx));
          StudentStep(student, student_state, data, idx, out, options, batch);
        } else if (mode == 1) {
          std::vector<PredictionDistribution> out;
          out.reserve(idx.size());
          for (auto i : idx) out.push_back(frozen[i]);
          StudentStep(student, student_state, data, idx, out, options, batch);
        }
      }
    } catch (const NonFiniteError& err) {
      Abort(err, epoch);
    }

    const auto losses = ComputeTeacherLosses(teacher, data);
    EpochRow row;
    row.epoch = epoch;
    row.mode = mode;
    row.l_train = losses.l_train;
    row.l_adv = losses.l_adv;
    row.l_total = losses.l_train + options.lambda * losses.l_adv;
    row.l_student = ComputeStudentLoss(teacher, student, data, options);
    row.teacher_hash = teacher.Hash();
    row.student_hash = student.Hash();
    result.report.epochs.push_back(row);
    if (observer) observer(row, teacher, &student);
  }
  result.teacher = std::move(teacher);
  result.student = std::move(student);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json EvalMetrics::ToJson() const {
  auto cls = [](const ClassMetrics& m) {
    return nlohmann::json{{"precision", m.precision},
                          {"recall", m.recall},
                          {"f1", m.f1},
                          {"support", m.support}};
  };
  return {{"weighted_f1", weighted_f1},
          {"accuracy", accuracy},
          {"count", count},
          {"per_class", {{"safe", cls(safe)}, {"unsafe", cls(unsafe)}}},
          {"confusion",
           {{"safe", {{"safe", confusion[0][0]}, {"unsafe", confusion[0][1]}}},
            {"unsafe", {{"safe", confusion[1][0]}, {"unsafe", confusion[1][1]}}}}}};
}

EvalMetrics ComputeMetrics(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("metrics: truth and prediction counts differ");
  }
  if (truth.empty()) throw InvalidArgument("metrics: empty dataset");
  EvalMetrics m;
  m.count = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[LabelIndex(truth[i])][LabelIndex(predicted[i])];
  }
  auto fill = [&m](int c, ClassMetrics& out) {
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double predicted_c = static_cast<double>(m.confusion[0][c] + m.confusion[1][c]);
    out.support = m.confusion[c][0] + m.confusion[c][1];
    out.precision = predicted_c > 0 ? tp / predicted_c : 0.0;
    out.recall = out.support > 0 ? tp / static_cast<double>(out.support) : 0.0;
    const double pr = out.precision + out.recall;
    out.f1 = pr > 0 ? 2.0 * out.precision * out.recall / pr : 0.0;
  };
  fill(0, m.safe);
  fill(1, m.unsafe);
  const double n = static_cast<double>(m.count);
  m.weighted_f1 = static_cast<double>(m.safe.support) / n * m.safe.f1 +
                  static_cast<double>(m.unsafe.support) / n * m.unsafe.f1;
  m.accuracy = static_cast<double>(m.confusion[0][0] + m.confusion[1][1]) / n;
  return m;
}

std::vector<Label> Predict(const GuardParams& params, std::span<const Example> data,
                           const KbSnapshot& kb, const RetrievalOptions& retrieval) {
  if (params.layout.dimension != kb.config().dimension || params.layout.k != retrieval.k) {
    throw InvalidArgument("predict: model layout does not match retrieval settings");
  }
  FeatureMatrix features(static_cast<Eigen::Index>(params.layout.size()),
                         static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const EncodedText q = kb.EncodeQuery(data[i].text);
    const ContextSet ctx = kb.RetrieveTopK(q, retrieval.k, retrieval.epsilon);
    WriteFeatures(q.embedding, ctx, kb, params.layout,
                  std::span<double>(features.col(static_cast<Eigen::Index>(i)).data(),
                                    params.layout.size()));
  }
  std::vector<Label> out;
  out.reserve(data.size());
  if (data.empty()) return out;
  for (const auto& p : ForwardBatch(params, features)) out.push_back(p.Argmax());
  return out;
}

EvalMetrics Evaluate(const GuardParams& params, std::span<const Example> data,
                     const KbSnapshot& kb, const RetrievalOptions& retrieval) {
  if (data.empty()) throw InvalidArgument("evaluate: empty dataset");
  const auto predicted = Predict(params, data, kb, retrieval);
  std::vector<Label> truth;
  truth.reserve(data.size());
  for (const auto& ex : data) truth.push_back(ex.label);
  return ComputeMetrics(truth, predicted);
}

nlohmann::json ContextDistribution::ToJson() const {
  return {{"both_safe", both_safe},
          {"safe_query_unsafe_context", safe_query_unsafe_context},
          {"unsafe_query_safe_context", unsafe_query_safe_context},
          {"both_unsafe", both_unsafe},
          {"with_context", with_context},
          {"without_context", without_context}};
}

ContextDistribution AnalyzeContextDistribution(std::span<const Example> data,
                                               const KbSnapshot& kb, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InvalidArgument("analyze: threshold must lie in [0, 1]");
  }
  std::size_t grid[2][2] = {{0, 0}, {0, 0}};
  ContextDistribution out;
  for (const auto& ex : data) {
    const auto ctx = kb.index().TopK(kb.EncodeQuery(ex.text), kb.config().metric, 1,
                                     threshold, {});
    if (ctx.empty()) {
      ++out.without_context;
      continue;
    }
    ++out.with_context;
    ++grid[LabelIndex(ex.label)][LabelIndex(kb.Find(ctx.items[0].id)->label)];
  }
  if (out.with_context == 0) return out;
  const double n = static_cast<double>(out.with_context);
  out.both_safe = static_cast<double>(grid[0][0]) / n;
  out.safe_query_unsafe_context = static_cast<double>(grid[0][1]) / n;
  out.unsafe_query_safe_context = static_cast<double>(grid[1][0]) / n;
  out.both_unsafe = static_cast<double>(grid[1][1]) / n;
  return out;
}

double ContextCoverageRatio(std::span<const Example> data, const KbSnapshot& kb,
                            double threshold) {
  if (data.empty()) return 0.0;
  std::size_t covered = 0;
  for (const auto& ex : data) {
    const auto ctx = kb.index().TopK(kb.EncodeQuery(ex.text), kb.config().metric, 1,
                                     threshold, {});
    if (!ctx.empty()) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(data.size());
}

}  // namespace ragguard
