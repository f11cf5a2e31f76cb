#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragguard/common.h"
#include "ragguard/encoder.h"

namespace ragguard {

enum class Source { kSeed, kFeedback, kSynthetic, kAdversarial };

std::string_view SourceName(Source source);
Source ParseSource(std::string_view name);

struct EntryMeta {
  Source source = Source::kSeed;
  std::int64_t timestamp_ms = 0;
  double confidence = 1.0;

  bool operator==(const EntryMeta&) const = default;
};

struct KbEntry {
  EntryId id = 0;
  std::string text;
  Label label = Label::kSafe;
  EmbeddingVector embedding;
  TokenSet tokens;
  EntryMeta meta;
};

struct ScoredEntry {
  EntryId id = 0;
  double score = 0.0;

  bool operator==(const ScoredEntry&) const = default;
};

// Total retrieval order: higher score first, ties by ascending id.
inline bool RanksBefore(const ScoredEntry& a, const ScoredEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

struct ContextSet {
  std::vector<ScoredEntry> items;
  std::size_t k_requested = 0;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
  bool operator==(const ContextSet&) const = default;
};

class EntryResolver {
 public:
  virtual ~EntryResolver() = default;
  // nullptr when the id is unknown.
  virtual const KbEntry* Find(EntryId id) const = 0;
};

// Exact-scan scoring over a fixed entry set under one encoder configuration.
// Embeddings are stored dimension-major so a query only touches the columns
// where it is nonzero; per-entry accumulation order matches Dot() exactly.
class ScoringIndex {
 public:
  ScoringIndex() = default;
  // With reembed set, entry texts are embedded afresh under cfg (used for
  // encoder variants); otherwise the stored embeddings are indexed.
  ScoringIndex(std::span<const std::shared_ptr<const KbEntry>> entries,
               EncoderConfig cfg, bool reembed);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t size() const { return ids_.size(); }

  // Scores of every entry, in index order.
  void ScoreAll(const EncodedText& query, Metric metric,
                std::vector<double>& scores) const;

  // Entries with score >= min_score (all entries when min_score is unset),
  // ordered by RanksBefore and truncated to k.
  ContextSet TopK(const EncodedText& query, Metric metric, std::size_t k,
                  std::optional<double> min_score,
                  std::span<const EntryId> exclude) const;

  // Every entry with lo <= score <= hi, ordered by RanksBefore.
  ContextSet Band(const EncodedText& query, Metric metric, double lo, double hi,
                  std::span<const EntryId> exclude) const;

  double BestScore(const EncodedText& query, Metric metric) const;

 private:
  EncoderConfig cfg_;
  std::vector<EntryId> ids_;
  std::vector<float> columns_;  // columns_[dim * size + row]
  std::vector<double> norms_;
  std::vector<const TokenSet*> token_sets_;
  std::vector<std::shared_ptr<const KbEntry>> keep_alive_;
};

// An immutable published view of the knowledge base.
class KbSnapshot : public EntryResolver {
 public:
  KbSnapshot(std::uint64_t epoch, EncoderConfig cfg,
             std::vector<std::shared_ptr<const KbEntry>> entries);

  std::uint64_t epoch() const { return epoch_; }
  std::size_t size() const { return entries_.size(); }
  const EncoderConfig& config() const { return index_.config(); }
  const ScoringIndex& index() const { return index_; }
  std::span<const std::shared_ptr<const KbEntry>> entries() const {
    return entries_;
  }

  const KbEntry* Find(EntryId id) const override;

  EncodedText EncodeQuery(std::string_view x) const {
    return Encode(x, index_.config());
  }

  // Up to k entries with sim >= 1 - epsilon. Entries whose ids appear in
  // exclude are skipped (training self-retrieval).
  ContextSet RetrieveTopK(std::string_view x, std::size_t k, double epsilon,
                          std::span<const EntryId> exclude = {}) const;
  ContextSet RetrieveTopK(const EncodedText& query, std::size_t k,
                          double epsilon,
                          std::span<const EntryId> exclude = {}) const;

  // Every entry with delta <= sim <= 1 - epsilon. Requires delta < epsilon.
  ContextSet RetrieveRelaxed(std::string_view x, double delta, double epsilon,
                             std::span<const EntryId> exclude = {}) const;
  ContextSet RetrieveRelaxed(const EncodedText& query, double delta,
                             double epsilon,
                             std::span<const EntryId> exclude = {}) const;

 private:
  std::uint64_t epoch_;
  std::vector<std::shared_ptr<const KbEntry>> entries_;  // sorted by id
  ScoringIndex index_;
};

// Raised by KnowledgeBase::Load. record_index is the zero-based index of the
// offending record, or unset when the header itself is bad.
class LoadError : public Error {
 public:
  LoadError(const std::string& what, std::optional<std::size_t> record_index)
      : Error(what), record_index_(record_index) {}
  std::optional<std::size_t> record_index() const { return record_index_; }

 private:
  std::optional<std::size_t> record_index_;
};

// Single-writer store. Inserts are staged until Publish() swaps in a new
// snapshot; readers holding an older snapshot are unaffected.
class KnowledgeBase {
 public:
  static constexpr int kFormatVersion = 1;

  explicit KnowledgeBase(EncoderConfig cfg);
  KnowledgeBase(const KnowledgeBase&) = delete;
  KnowledgeBase& operator=(const KnowledgeBase&) = delete;

  const EncoderConfig& config() const { return cfg_; }

  EntryId Insert(std::string text, Label label, EntryMeta meta = {});
  std::optional<KbEntry> Lookup(EntryId id) const;

  std::uint64_t Publish();
  std::shared_ptr<const KbSnapshot> Snapshot() const;

  std::size_t size() const;
  std::size_t pending() const;

  void Persist(const std::filesystem::path& path) const;
  static std::unique_ptr<KnowledgeBase> Load(const std::filesystem::path& path,
                                             const EncoderConfig& cfg);

 private:
  EncoderConfig cfg_;

  mutable std::mutex write_mu_;
  std::map<EntryId, std::shared_ptr<const KbEntry>> entries_;
  std::size_t pending_ = 0;
  EntryId next_id_ = 1;
  std::uint64_t next_epoch_ = 0;

  mutable std::mutex snapshot_mu_;
  std::shared_ptr<const KbSnapshot> snapshot_;
};

}  // namespace ragguard
