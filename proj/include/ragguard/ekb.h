#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ragguard/common.h"
#include "ragguard/knowledge_base.h"
#include "ragguard/random.h"
#include "ragguard/training.h"

namespace ragguard {

enum class FeedbackSource { kEndUser, kOperator, kGraderModel };
enum class RecordStatus { kPending, kAccepted, kRejected };

std::string_view FeedbackSourceName(FeedbackSource source);
std::optional<FeedbackSource> ParseFeedbackSource(std::string_view name);
std::string_view RecordStatusName(RecordStatus status);

struct LabelEvent {
  Label label = Label::kSafe;
  FeedbackSource source = FeedbackSource::kEndUser;
  std::int64_t timestamp_ms = 0;

  bool operator==(const LabelEvent&) const = default;
};

struct FeedbackRecord {
  std::string key;         // normalized query text
  std::string query_text;  // as first submitted
  std::vector<LabelEvent> labels;
  RecordStatus status = RecordStatus::kPending;
  std::optional<EntryId> entry_id;  // set once accepted
};

nlohmann::json RecordToJson(const FeedbackRecord& record, std::size_t k);

// Lowercased with runs of whitespace collapsed to one space and trimmed.
std::string NormalizeQueryKey(std::string_view text);

// 1[all labels equal] * 1[n >= k]; false for no labels.
bool Confidence(std::span<const Label> labels, std::size_t k);
bool Confidence(const FeedbackRecord& record, std::size_t k);

// Stored on promoted entries: n / (n + k).
double PromotionConfidence(std::size_t n, std::size_t k);

struct PolicySpec {
  std::string policy_id;
  Label target_label = Label::kUnsafe;
  std::string prompt_text;
  std::vector<std::string> few_shot_examples;

  void Validate() const;
};

void to_json(nlohmann::json& j, const PolicySpec& p);
void from_json(const nlohmann::json& j, PolicySpec& p);
PolicySpec LoadPolicy(const std::filesystem::path& path);

class GeneratorError : public Error {
 public:
  GeneratorError(const std::string& what, std::string policy_id)
      : Error(what), policy_id_(std::move(policy_id)) {}
  const std::string& policy_id() const { return policy_id_; }

 private:
  std::string policy_id_;
};

// Produces query texts for a policy. The label is always the policy's.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::vector<std::string> Generate(const PolicySpec& policy, std::size_t n,
                                            Rng& rng) = 0;
};

// Slot-fills request frames with phrases taken from the few-shot examples
// and the policy prompt.
class TemplateGenerator : public Generator {
 public:
  std::vector<std::string> Generate(const PolicySpec& policy, std::size_t n,
                                    Rng& rng) override;
};

std::vector<Example> SynthGenerate(const PolicySpec& policy, Generator& generator,
                                   std::size_t n, Rng& rng);

using Clock = std::function<std::int64_t()>;  // epoch milliseconds

Clock SystemClock();

// Feedback aggregation, the confidence gate, and staged KB growth.
class EvolvingKb {
 public:
  struct Options {
    std::size_t k = 3;
    std::optional<std::filesystem::path> feedback_log;
    Clock clock;
  };

  EvolvingKb(KnowledgeBase& kb, Options options);

  std::size_t k() const { return options_.k; }
  KnowledgeBase& kb() { return kb_; }

  FeedbackRecord SubmitFeedback(std::string_view query_text, Label label,
                                FeedbackSource source);

  std::optional<FeedbackRecord> Find(std::string_view query_text) const;
  std::vector<FeedbackRecord> Records(std::optional<RecordStatus> status = std::nullopt) const;

  // Inserts the record into the KB (visible after the next refresh) and marks
  // it accepted. Throws Conflict when the record is not confident or has
  // already left the pending state, InvalidArgument when it does not exist.
  KbEntry Promote(std::string_view query_text);

  // Operator action; pending -> rejected.
  FeedbackRecord Reject(std::string_view query_text);

  // Generates n examples for the policy and stages them for the next refresh.
  std::vector<Example> StageSynthetic(const PolicySpec& policy, Generator& generator,
                                      std::size_t n, std::uint64_t seed);

  std::size_t staged_synthetic() const;

  // Inserts staged synthetic entries and publishes a new snapshot.
  std::uint64_t Refresh();

 private:
  KnowledgeBase& kb_;
  Options options_;

  mutable std::mutex mu_;
  std::map<std::string, FeedbackRecord> records_;
  std::vector<Example> staged_;
  std::ofstream log_;
};

}  // namespace ragguard
