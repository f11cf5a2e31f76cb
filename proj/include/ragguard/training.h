#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ragguard/common.h"
#include "ragguard/guard_model.h"
#include "ragguard/knowledge_base.h"
#include "ragguard/perturbation.h"

namespace ragguard {

// ---------------------------------------------------------------------------
// Datasets

enum class Split { kTrain, kTest };

struct Example {
  std::string text;
  Label label = Label::kSafe;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> test;
};

// Raw label token (trimmed, lowercased) -> binary label. "safe" and "unsafe"
// are always understood.
struct LabelMapping {
  std::map<std::string, Label> table;

  std::optional<Label> Map(std::string_view raw) const;
};

void to_json(nlohmann::json& j, const LabelMapping& m);
void from_json(const nlohmann::json& j, LabelMapping& m);

struct DatasetOptions {
  LabelMapping mapping;
  std::uint64_t split_seed = 0;
};

// Line numbers are 1-based.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// JSONL rows {"text", "label", "split"?}. Rows without a split field are
// shuffled with split_seed and divided 80/20 (n/5 rows, rounded down, go to
// test); rows with a split keep it.
Dataset LoadDataset(const std::filesystem::path& path, const DatasetOptions& options = {});
Dataset ParseDataset(std::istream& in, const DatasetOptions& options = {});
void WriteDataset(const std::filesystem::path& path, const Dataset& data);

// Inserts every example with source=seed and publishes. Returned ids are in
// example order.
std::vector<EntryId> InsertExamples(KnowledgeBase& kb, std::span<const Example> examples);

// ---------------------------------------------------------------------------
// Materialized training data

struct RetrievalOptions {
  std::size_t k = 5;
  double epsilon = 0.4;
};

struct TrainExample {
  std::string x;
  Label y = Label::kSafe;
  ContextSet clean_ctx;
  std::vector<PerturbedContext> perturbed_ctx;
};

// Training examples with contexts retrieved (and optionally perturbed) ahead
// of optimization, plus their feature columns.
class TrainingSet {
 public:
  // self_ids[i], when nonzero, is excluded from example i's retrieval.
  // Pass perturbation = nullptr for clean contexts only.
  static TrainingSet Build(std::span<const Example> examples,
                           std::span<const EntryId> self_ids,
                           std::shared_ptr<const KbSnapshot> kb,
                           const RetrievalOptions& retrieval,
                           const PerturbationConfig* perturbation,
                           Attacker* attacker, std::uint64_t seed);

  std::size_t size() const { return examples_.size(); }
  const std::vector<TrainExample>& examples() const { return examples_; }
  const FeatureLayout& layout() const { return layout_; }
  const KbSnapshot& kb() const { return *kb_; }
  const EntryPool& pool() const { return *pool_; }
  // KB ids first, then generated entries.
  const EntryResolver& resolver() const { return *resolver_; }

  const FeatureMatrix& clean_features() const { return clean_; }
  // Columns of example i's perturbed variants: [adv_begin(i), adv_end(i)).
  const FeatureMatrix& adv_features() const { return adv_; }
  std::size_t adv_begin(std::size_t i) const { return adv_offsets_[i]; }
  std::size_t adv_end(std::size_t i) const { return adv_offsets_[i + 1]; }
  std::size_t examples_with_variants() const { return with_variants_; }

  // One JSON line per example: clean context and every variant with its
  // provenance. Generated entries are listed first.
  void WriteMaterialized(const std::filesystem::path& path) const;

 private:
  std::shared_ptr<const KbSnapshot> kb_;
  std::unique_ptr<EntryPool> pool_;
  std::unique_ptr<ChainedResolver> resolver_;
  std::vector<TrainExample> examples_;
  FeatureLayout layout_;
  FeatureMatrix clean_;
  FeatureMatrix adv_;
  std::vector<std::size_t> adv_offsets_;
  std::size_t with_variants_ = 0;
};

// ---------------------------------------------------------------------------
// Schedules and reports

struct Schedule {
  std::vector<int> modes;  // one per epoch, each in {0, 1, 2}

  // floor(T/3) teacher epochs, floor(T/3) joint epochs, the rest student.
  static Schedule Canonical(std::size_t epochs);
  // Modes 0 for t < t1, 2 for t1 <= t < t2, 1 for t2 <= t <= epochs (1-based).
  static Schedule FromTransitions(std::size_t epochs, std::size_t t1, std::size_t t2);

  void Validate() const;
  // (T1, T2) when modes are a block of 0s, then 2s, then at least one 1.
  std::optional<std::pair<std::size_t, std::size_t>> Transitions() const;
};

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  int mode = 0;
  double l_train = 0.0;
  double l_adv = 0.0;
  double l_total = 0.0;
  std::optional<double> l_student;
  std::uint64_t teacher_hash = 0;
  std::optional<std::uint64_t> student_hash;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  nlohmann::json final_metrics = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json ToJson() const;
  // Digest of ToJson().dump().
  std::string Hash() const;
};

class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct OptimizerOptions {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;  // batch order
};

void to_json(nlohmann::json& j, const OptimizerOptions& o);
void from_json(const nlohmann::json& j, OptimizerOptions& o);

// Called after every epoch with the end-of-epoch parameters.
using EpochObserver =
    std::function<void(const EpochRow&, const GuardParams& teacher, const GuardParams* student)>;

struct TeacherResult {
  GuardParams params;
  TrainReport report;
};

// Mean CE over clean contexts.
TeacherResult SupervisedFinetune(GuardParams init, const TrainingSet& data,
                                 std::size_t epochs, const OptimizerOptions& opt,
                                 const EpochObserver& observer = {});

// L_train + lambda * L_adv. L_adv averages, over examples that have perturbed
// contexts, the mean CE across that example's variants.
TeacherResult RaftTrain(GuardParams init, const TrainingSet& data, double lambda,
                        std::size_t epochs, const OptimizerOptions& opt,
                        const EpochObserver& observer = {});

struct DistillOptions {
  double lambda = 0.5;
  double kl_weight = 0.6;
  double ce_weight = 0.4;
  double reward_weight = 0.0;
  OptimizerOptions teacher_opt;
  OptimizerOptions student_opt;

  void Validate() const;
};

void to_json(nlohmann::json& j, const DistillOptions& o);
void from_json(const nlohmann::json& j, DistillOptions& o);

struct DistillResult {
  GuardParams teacher;
  GuardParams student;
  TrainReport report;
};

// Mode 0 trains the teacher only, mode 2 trains the teacher and then the
// student on each batch against the teacher's updated outputs, mode 1 trains
// the student against the frozen teacher.
DistillResult SkdTrain(GuardParams teacher, GuardParams student, const TrainingSet& data,
                       const Schedule& schedule, const DistillOptions& options,
                       const EpochObserver& observer = {});

// Full-dataset losses at fixed parameters.
struct DatasetLosses {
  double l_train = 0.0;
  double l_adv = 0.0;
};
DatasetLosses ComputeTeacherLosses(const GuardParams& params, const TrainingSet& data);
double ComputeStudentLoss(const GuardParams& teacher, const GuardParams& student,
                          const TrainingSet& data, const DistillOptions& options);

// ---------------------------------------------------------------------------
// Evaluation and diagnostics

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalMetrics {
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  ClassMetrics safe;
  ClassMetrics unsafe;
  std::size_t confusion[2][2] = {{0, 0}, {0, 0}};  // [true][predicted]
  std::size_t count = 0;

  nlohmann::json ToJson() const;
};

// Precision of a never-predicted class is 0, as is F1 when P + R = 0.
EvalMetrics ComputeMetrics(std::span<const Label> truth, std::span<const Label> predicted);

std::vector<Label> Predict(const GuardParams& params, std::span<const Example> data,
                           const KbSnapshot& kb, const RetrievalOptions& retrieval);

EvalMetrics Evaluate(const GuardParams& params, std::span<const Example> data,
                     const KbSnapshot& kb, const RetrievalOptions& retrieval);

struct ContextDistribution {
  double both_safe = 0.0;
  double safe_query_unsafe_context = 0.0;
  double unsafe_query_safe_context = 0.0;
  double both_unsafe = 0.0;
  std::size_t with_context = 0;
  std::size_t without_context = 0;

  double mismatch() const { return safe_query_unsafe_context + unsafe_query_safe_context; }
  nlohmann::json ToJson() const;
};

// Label grid of each query against its top-1 context with sim >= threshold.
ContextDistribution AnalyzeContextDistribution(std::span<const Example> data,
                                               const KbSnapshot& kb, double threshold);

// Fraction of queries with at least one context at sim >= threshold.
double ContextCoverageRatio(std::span<const Example> data, const KbSnapshot& kb,
                            double threshold);

}  // namespace ragguard
