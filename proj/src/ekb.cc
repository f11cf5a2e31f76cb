#include "ragguard/ekb.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <set>

namespace ragguard {
namespace {

constexpr std::array<std::string_view, 6> kOpeners = {
    "", "can you", "please", "i need to", "show me how to", "is there a way to",
};

constexpr std::array<std::string_view, 6> kClosers = {
    "", "right now", "tonight", "step by step", "for me", "quickly",
};

template <std::size_t N>
std::string_view Pick(const std::array<std::string_view, N>& items, Rng& rng) {
  return items[UniformIndex(rng, N)];
}

}  // namespace

std::string_view FeedbackSourceName(FeedbackSource source) {
  switch (source) {
    case FeedbackSource::kEndUser: return "end_user";
    case FeedbackSource::kOperator: return "operator";
    case FeedbackSource::kGraderModel: return "grader_model";
  }
  return "end_user";
}

std::optional<FeedbackSource> ParseFeedbackSource(std::string_view name) {
  if (name == "end_user") return FeedbackSource::kEndUser;
  if (name == "operator") return FeedbackSource::kOperator;
  if (name == "grader_model") return FeedbackSource::kGraderModel;
  return std::nullopt;
}

std::string_view RecordStatusName(RecordStatus status) {
  switch (status) {
    case RecordStatus::kPending: return "pending";
    case RecordStatus::kAccepted: return "accepted";
    case RecordStatus::kRejected: return "rejected";
  }
  return "pending";
}

std::string NormalizeQueryKey(std::string_view text) {
  std::string out;
  bool space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

bool Confidence(std::span<const Label> labels, std::size_t k) {
  if (k < 1) throw InvalidArgument("confidence: k must be >= 1");
  if (labels.empty()) return false;
  const bool unanimous =
      std::all_of(labels.begin(), labels.end(), [&](Label l) { return l == labels.front(); });
  return unanimous && labels.size() >= k;
}

bool Confidence(const FeedbackRecord& record, std::size_t k) {
  std::vector<Label> labels;
  labels.reserve(record.labels.size());
  for (const auto& e : record.labels) labels.push_back(e.label);
  return Confidence(labels, k);
}

double PromotionConfidence(std::size_t n, std::size_t k) {
  return static_cast<double>(n) / static_cast<double>(n + k);
}

nlohmann::json RecordToJson(const FeedbackRecord& record, std::size_t k) {
  nlohmann::json labels = nlohmann::json::array();
  bool unanimous = true;
  for (const auto& e : record.labels) {
    labels.push_back({{"label", LabelName(e.label)},
                      {"source", FeedbackSourceName(e.source)},
                      {"timestamp", e.timestamp_ms}});
    unanimous = unanimous && e.label == record.labels.front().label;
  }
  const std::size_t n = record.labels.size();
  nlohmann::json j = {{"query_text", record.query_text},
                      {"key", record.key},
                      {"labels", std::move(labels)},
                      {"count", n},
                      {"status", RecordStatusName(record.status)},
                      {"confident", Confidence(record, k)}};
  // Labels still needed before promotion; null once the labels disagree.
  j["labels_needed"] = unanimous ? nlohmann::json(n >= k ? 0 : k - n) : nlohmann::json(nullptr);
  j["entry_id"] = record.entry_id ? nlohmann::json(*record.entry_id) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Policies and generation

void PolicySpec::Validate() const {
  if (policy_id.empty()) throw InvalidArgument("policy: policy_id must be nonempty");
  if (Tokenize(prompt_text).empty()) throw InvalidArgument("policy: prompt_text must be nonempty");
}

void to_json(nlohmann::json& j, const PolicySpec& p) {
  j = {{"policy_id", p.policy_id},
       {"target_label", LabelName(p.target_label)},
       {"prompt_text", p.prompt_text},
       {"few_shot_examples", p.few_shot_examples}};
}

void from_json(const nlohmann::json& j, PolicySpec& p) {
  p = PolicySpec{};
  j.at("policy_id").get_to(p.policy_id);
  const auto label = ParseLabel(j.at("target_label").get<std::string>());
  if (!label) throw InvalidArgument("policy: target_label must be safe or unsafe");
  p.target_label = *label;
  j.at("prompt_text").get_to(p.prompt_text);
  if (j.contains("few_shot_examples")) j.at("few_shot_examples").get_to(p.few_shot_examples);
  p.Validate();
}

PolicySpec LoadPolicy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy " + path.string());
  try {
    return nlohmann::json::parse(in).get<PolicySpec>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("policy " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> TemplateGenerator::Generate(const PolicySpec& policy, std::size_t n,
                                                     Rng& rng) {
  std::vector<std::string> phrases;
  for (const auto& ex : policy.few_shot_examples) {
    auto t = Tokenize(ex);
    if (!t.empty()) phrases.push_back(ex);
  }
  // The prompt alone is enough when there are no usable examples.
  {
    std::string p;
    for (const auto& t : Tokenize(policy.prompt_text)) {
      if (!p.empty()) p.push_back(' ');
      p += t;
    }
    phrases.push_back(std::move(p));
  }

  std::vector<std::string> out;
  std::set<std::string> seen;
  // Distinct outputs while the slot space allows, repeats after that.
  for (std::size_t attempt = 0; out.size() < n; ++attempt) {
    std::string text;
    const auto opener = Pick(kOpeners, rng);
    const auto& phrase = phrases[UniformIndex(rng, phrases.size())];
    const auto closer = Pick(kClosers, rng);
    if (!opener.empty()) text.append(opener).push_back(' ');
    text += NormalizeQueryKey(phrase);
    if (!closer.empty()) text.append(" ").append(closer);
    if (seen.insert(text).second || attempt > 64 * n) out.push_back(std::move(text));
  }
  return out;
}

std::vector<Example> SynthGenerate(const PolicySpec& policy, Generator& generator,
                                   std::size_t n, Rng& rng) {
  if (n < 1) throw InvalidArgument("synth: n must be >= 1");
  policy.Validate();
  std::vector<std::string> texts;
  try {
    texts = generator.Generate(policy, n, rng);
  } catch (const std::exception& e) {
    throw GeneratorError("generator failed for policy " + policy.policy_id + ": " + e.what(),
                         policy.policy_id);
  }
  if (texts.size() != n) {
    throw GeneratorError("generator returned " + std::to_string(texts.size()) + " of " +
                             std::to_string(n) + " texts for policy " + policy.policy_id,
                         policy.policy_id);
  }
  std::vector<Example> out;
  out.reserve(n);
  for (auto& t : texts) {
    if (Tokenize(t).empty()) {
      throw GeneratorError("generator produced empty text for policy " + policy.policy_id,
                           policy.policy_id);
    }
    out.push_back({std::move(t), policy.target_label});
  }
  return out;
}

Clock SystemClock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

// ---------------------------------------------------------------------------
// EvolvingKb

EvolvingKb::EvolvingKb(KnowledgeBase& kb, Options options)
    : kb_(kb), options_(std::move(options)) {
  if (options_.k < 1) throw InvalidArgument("ekb: k must be >= 1");
  if (!options_.clock) options_.clock = SystemClock();
  if (options_.feedback_log) {
    log_.open(*options_.feedback_log, std::ios::app);
    if (!log_) throw Error("ekb: cannot open feedback log " + options_.feedback_log->string());
  }
}

FeedbackRecord EvolvingKb::SubmitFeedback(std::string_view query_text, Label label,
                                          FeedbackSource source) {
  std::string key = NormalizeQueryKey(query_text);
  if (key.empty()) throw InvalidArgument("feedback: empty query text");
  const LabelEvent event{label, source, options_.clock()};

  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = records_.try_emplace(key);
  FeedbackRecord& rec = it->second;
  if (inserted) {
    rec.key = key;
    rec.query_text = std::string(query_text);
  }
  rec.labels.push_back(event);
  if (log_.is_open()) {
    log_ << nlohmann::json{{"query_hash", HexDigest(Fnv1a(key))},
                           {"label", LabelName(event.label)},
                           {"source", FeedbackSourceName(event.source)},
                           {"timestamp", event.timestamp_ms}}
                .dump()
         << '\n';
    log_.flush();
  }
  return rec;
}

std::optional<FeedbackRecord> EvolvingKb::Find(std::string_view query_text) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = records_.find(NormalizeQueryKey(query_text));
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::vector<FeedbackRecord> EvolvingKb::Records(std::optional<RecordStatus> status) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<FeedbackRecord> out;
  for (const auto& [key, rec] : records_) {
    if (!status || rec.status == *status) out.push_back(rec);
  }
  return out;
}

KbEntry EvolvingKb::Promote(std::string_view query_text) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = records_.find(NormalizeQueryKey(query_text));
  if (it == records_.end()) {
    throw InvalidArgument("promote: no feedback record for query");
  }
  FeedbackRecord& rec = it->second;
  if (rec.status != RecordStatus::kPending) {
    throw Conflict("promote: record is already " + std::string(RecordStatusName(rec.status)));
  }
  if (!Confidence(rec, options_.k)) {
    throw Conflict("promote: record does not pass the confidence gate (k=" +
                   std::to_string(options_.k) + ")");
  }
  EntryMeta meta;
  meta.source = Source::kFeedback;
  meta.timestamp_ms = options_.clock();
  meta.confidence = PromotionConfidence(rec.labels.size(), options_.k);
  const EntryId id = kb_.Insert(rec.query_text, rec.labels.front().label, meta);
  rec.status = RecordStatus::kAccepted;
  rec.entry_id = id;
  return *kb_.Lookup(id);
}

FeedbackRecord EvolvingKb::Reject(std::string_view query_text) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = records_.find(NormalizeQueryKey(query_text));
  if (it == records_.end()) throw InvalidArgument("reject: no feedback record for query");
  if (it->second.status != RecordStatus::kPending) {
    throw Conflict("reject: record is already " +
                   std::string(RecordStatusName(it->second.status)));
  }
  it->second.status = RecordStatus::kRejected;
  return it->second;
}

std::vector<Example> EvolvingKb::StageSynthetic(const PolicySpec& policy, Generator& generator,
                                                std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto generated = SynthGenerate(policy, generator, n, rng);
  std::lock_guard<std::mutex> lock(mu_);
  staged_.insert(staged_.end(), generated.begin(), generated.end());
  return generated;
}

std::size_t EvolvingKb::staged_synthetic() const {
  std::lock_guard<std::mutex> lock(mu_);
  return staged_.size();
}

std::uint64_t EvolvingKb::Refresh() {
  std::vector<Example> staged;
  {
    std::lock_guard<std::mutex> lock(mu_);
    staged.swap(staged_);
  }
  const std::int64_t now = options_.clock();
  for (auto& ex : staged) {
    EntryMeta meta;
    meta.source = Source::kSynthetic;
    meta.timestamp_ms = now;
    kb_.Insert(std::move(ex.text), ex.label, meta);
  }
  return kb_.Publish();
}

}  // namespace ragguard
