#include "ragguard/knowledge_base.h"

#include <algorithm>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace ragguard {
namespace {

constexpr std::size_t kBlock = 1024;

bool Excluded(std::span<const EntryId> exclude, EntryId id) {
  return std::find(exclude.begin(), exclude.end(), id) != exclude.end();
}

void CheckEpsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw InvalidArgument("retrieval: epsilon must lie in [0, 1]");
  }
}

}  // namespace

std::string_view SourceName(Source source) {
  switch (source) {
    case Source::kSeed: return "seed";
    case Source::kFeedback: return "feedback";
    case Source::kSynthetic: return "synthetic";
    case Source::kAdversarial: return "adversarial";
  }
  return "seed";
}

Source ParseSource(std::string_view name) {
  if (name == "seed") return Source::kSeed;
  if (name == "feedback") return Source::kFeedback;
  if (name == "synthetic") return Source::kSynthetic;
  if (name == "adversarial") return Source::kAdversarial;
  throw InvalidArgument("unknown entry source: " + std::string(name));
}

// ---------------------------------------------------------------------------
// ScoringIndex

ScoringIndex::ScoringIndex(std::span<const std::shared_ptr<const KbEntry>> entries,
                           EncoderConfig cfg, bool reembed)
    : cfg_(std::move(cfg)), keep_alive_(entries.begin(), entries.end()) {
  const std::size_t n = entries.size();
  const std::size_t d = cfg_.dimension;
  ids_.reserve(n);
  norms_.reserve(n);
  token_sets_.reserve(n);
  columns_.assign(d * n, 0.0f);
  for (std::size_t row = 0; row < n; ++row) {
    const KbEntry& e = *entries[row];
    ids_.push_back(e.id);
    token_sets_.push_back(&e.tokens);
    EmbeddingVector reembedded;
    const EmbeddingVector* emb = &e.embedding;
    if (reembed) {
      reembedded = Embed(e.text, cfg_);
      emb = &reembedded;
    }
    if (emb->dimension() != d) {
      throw InvalidArgument("index: entry embedding dimension mismatch");
    }
    norms_.push_back(emb->Norm());
    for (std::size_t j = 0; j < d; ++j) columns_[j * n + row] = emb->values[j];
  }
}

void ScoringIndex::ScoreAll(const EncodedText& query, Metric metric,
                            std::vector<double>& scores) const {
  const std::size_t n = ids_.size();
  scores.assign(n, 0.0);
  if (n == 0) return;

  if (metric == Metric::kLexical) {
    for (std::size_t row = 0; row < n; ++row) {
      scores[row] = LexicalSimilarity(query.tokens, *token_sets_[row]);
    }
    return;
  }

  const auto& q = query.embedding.values;
  if (q.size() != cfg_.dimension) {
    throw InvalidArgument("similarity: dimension mismatch (" +
                          std::to_string(q.size()) + " vs " +
                          std::to_string(cfg_.dimension) + ")");
  }
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (q[j] != 0.0f) active.push_back(j);
  }

  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t len = std::min(kBlock, n - start);
    double* acc = scores.data() + start;
    for (std::size_t j : active) {
      const double qj = q[j];
      const float* col = columns_.data() + j * n + start;
      for (std::size_t i = 0; i < len; ++i) {
        acc[i] += qj * static_cast<double>(col[i]);
      }
    }
  }

  if (metric == Metric::kCosine) {
    const double qn = query.embedding.Norm();
    for (std::size_t row = 0; row < n; ++row) {
      const double en = norms_[row];
      scores[row] = (qn == 0.0 || en == 0.0) ? 0.0 : scores[row] / (qn * en);
    }
  }
}

ContextSet ScoringIndex::TopK(const EncodedText& query, Metric metric,
                              std::size_t k, std::optional<double> min_score,
                              std::span<const EntryId> exclude) const {
  ContextSet out;
  out.k_requested = k;
  if (k == 0 || ids_.empty()) return out;

  std::vector<double> scores;
  ScoreAll(query, metric, scores);
  std::vector<ScoredEntry> candidates;
  for (std::size_t row = 0; row < scores.size(); ++row) {
    if (min_score && !(scores[row] >= *min_score)) continue;
    if (!exclude.empty() && Excluded(exclude, ids_[row])) continue;
    candidates.push_back({ids_[row], scores[row]});
  }
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + keep,
                    candidates.end(), RanksBefore);
  candidates.resize(keep);
  out.items = std::move(candidates);
  return out;
}

ContextSet ScoringIndex::Band(const EncodedText& query, Metric metric, double lo,
                              double hi, std::span<const EntryId> exclude) const {
  ContextSet out;
  std::vector<double> scores;
  ScoreAll(query, metric, scores);
  for (std::size_t row = 0; row < scores.size(); ++row) {
    if (!(scores[row] >= lo && scores[row] <= hi)) continue;
    if (!exclude.empty() && Excluded(exclude, ids_[row])) continue;
    out.items.push_back({ids_[row], scores[row]});
  }
  std::sort(out.items.begin(), out.items.end(), RanksBefore);
  out.k_requested = out.items.size();
  return out;
}

double ScoringIndex::BestScore(const EncodedText& query, Metric metric) const {
  std::vector<double> scores;
  ScoreAll(query, metric, scores);
  double best = -std::numeric_limits<double>::infinity();
  for (double s : scores) best = std::max(best, s);
  return best;
}

// ---------------------------------------------------------------------------
// KbSnapshot

KbSnapshot::KbSnapshot(std::uint64_t epoch, EncoderConfig cfg,
                       std::vector<std::shared_ptr<const KbEntry>> entries)
    : epoch_(epoch),
      entries_(std::move(entries)),
      index_(entries_, std::move(cfg), /*reembed=*/false) {}

const KbEntry* KbSnapshot::Find(EntryId id) const {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), id,
      [](const std::shared_ptr<const KbEntry>& e, EntryId v) { return e->id < v; });
  if (it == entries_.end() || (*it)->id != id) return nullptr;
  return it->get();
}

ContextSet KbSnapshot::RetrieveTopK(std::string_view x, std::size_t k,
                                    double epsilon,
                                    std::span<const EntryId> exclude) const {
  return RetrieveTopK(EncodeQuery(x), k, epsilon, exclude);
}

ContextSet KbSnapshot::RetrieveTopK(const EncodedText& query, std::size_t k,
                                    double epsilon,
                                    std::span<const EntryId> exclude) const {
  CheckEpsilon(epsilon);
  return index_.TopK(query, config().metric, k, 1.0 - epsilon, exclude);
}

ContextSet KbSnapshot::RetrieveRelaxed(std::string_view x, double delta,
                                       double epsilon,
                                       std::span<const EntryId> exclude) const {
  return RetrieveRelaxed(EncodeQuery(x), delta, epsilon, exclude);
}

ContextSet KbSnapshot::RetrieveRelaxed(const EncodedText& query, double delta,
                                       double epsilon,
                                       std::span<const EntryId> exclude) const {
  CheckEpsilon(epsilon);
  if (!(delta >= 0.0)) throw InvalidArgument("retrieval: delta must be >= 0");
  if (!(delta < epsilon)) {
    throw InvalidArgument("retrieval: relaxed band requires delta < epsilon");
  }
  return index_.Band(query, config().metric, delta, 1.0 - epsilon, exclude);
}

// ---------------------------------------------------------------------------
// KnowledgeBase

KnowledgeBase::KnowledgeBase(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.Validate();
  Publish();
}

EntryId KnowledgeBase::Insert(std::string text, Label label, EntryMeta meta) {
  auto tokens = Tokenize(text);
  if (tokens.empty()) throw InvalidArgument("kb insert: empty text");
  if (!(meta.confidence >= 0.0 && meta.confidence <= 1.0)) {
    throw InvalidArgument("kb insert: confidence must lie in [0, 1]");
  }
  auto entry = std::make_shared<KbEntry>();
  entry->text = std::move(text);
  entry->label = label;
  entry->embedding = Embed(tokens, cfg_);
  entry->tokens = MakeTokenSet(tokens);
  entry->meta = meta;

  std::lock_guard<std::mutex> lock(write_mu_);
  entry->id = next_id_++;
  const EntryId id = entry->id;
  entries_.emplace(id, std::move(entry));
  ++pending_;
  return id;
}

std::optional<KbEntry> KnowledgeBase::Lookup(EntryId id) const {
  std::lock_guard<std::mutex> lock(write_mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return *it->second;
}

std::uint64_t KnowledgeBase::Publish() {
  std::lock_guard<std::mutex> lock(write_mu_);
  std::vector<std::shared_ptr<const KbEntry>> all;
  all.reserve(entries_.size());
  for (const auto& [id, e] : entries_) all.push_back(e);
  const std::uint64_t epoch = next_epoch_++;
  auto snap = std::make_shared<const KbSnapshot>(epoch, cfg_, std::move(all));
  pending_ = 0;
  {
    std::lock_guard<std::mutex> snap_lock(snapshot_mu_);
    snapshot_ = std::move(snap);
  }
  return epoch;
}

std::shared_ptr<const KbSnapshot> KnowledgeBase::Snapshot() const {
  std::lock_guard<std::mutex> lock(snapshot_mu_);
  return snapshot_;
}

std::size_t KnowledgeBase::size() const {
  std::lock_guard<std::mutex> lock(write_mu_);
  return entries_.size();
}

std::size_t KnowledgeBase::pending() const {
  std::lock_guard<std::mutex> lock(write_mu_);
  return pending_;
}

void KnowledgeBase::Persist(const std::filesystem::path& path) const {
  std::lock_guard<std::mutex> lock(write_mu_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("kb persist: cannot open " + path.string());
  nlohmann::json header = {{"format", "ragguard-kb"},
                           {"version", kFormatVersion},
                           {"encoder_hash", HexDigest(cfg_.Hash())},
                           {"count", entries_.size()}};
  out << header.dump() << '\n';
  for (const auto& [id, e] : entries_) {
    nlohmann::json rec = {{"id", e->id},
                          {"text", e->text},
                          {"label", LabelName(e->label)},
                          {"source", SourceName(e->meta.source)},
                          {"timestamp", e->meta.timestamp_ms},
                          {"confidence", e->meta.confidence}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error("kb persist: write failed for " + path.string());
}

std::unique_ptr<KnowledgeBase> KnowledgeBase::Load(const std::filesystem::path& path,
                                                   const EncoderConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("kb load: cannot open " + path.string(), std::nullopt);

  std::string line;
  if (!std::getline(in, line)) {
    throw LoadError("kb load: missing header", std::nullopt);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("kb load: malformed header: ") + e.what(), std::nullopt);
  }
  if (!header.is_object() || header.value("format", "") != "ragguard-kb") {
    throw LoadError("kb load: not a ragguard KB file", std::nullopt);
  }
  if (header.value("version", -1) != kFormatVersion) {
    throw LoadError("kb load: unsupported format version", std::nullopt);
  }
  const std::string expected = HexDigest(cfg.Hash());
  if (header.value("encoder_hash", "") != expected) {
    throw LoadError("kb load: encoder config hash mismatch (file " +
                        header.value("encoder_hash", std::string("?")) +
                        ", expected " + expected + ")",
                    std::nullopt);
  }
  const auto count = header.value("count", std::size_t{0});

  auto kb = std::make_unique<KnowledgeBase>(cfg);
  std::size_t index = 0;
  for (; index < count; ++index) {
    if (!std::getline(in, line)) {
      throw LoadError("kb load: truncated file, missing record " + std::to_string(index),
                      index);
    }
    auto entry = std::make_shared<KbEntry>();
    try {
      const auto rec = nlohmann::json::parse(line);
      entry->id = rec.at("id").get<EntryId>();
      entry->text = rec.at("text").get<std::string>();
      const auto label = ParseLabel(rec.at("label").get<std::string>());
      if (!label) throw InvalidArgument("bad label");
      entry->label = *label;
      entry->meta.source = ParseSource(rec.at("source").get<std::string>());
      entry->meta.timestamp_ms = rec.at("timestamp").get<std::int64_t>();
      entry->meta.confidence = rec.at("confidence").get<double>();
    } catch (const std::exception& e) {
      throw LoadError("kb load: malformed record " + std::to_string(index) + ": " + e.what(),
                      index);
    }
    auto tokens = Tokenize(entry->text);
    if (tokens.empty()) {
      throw LoadError("kb load: empty text in record " + std::to_string(index), index);
    }
    entry->embedding = Embed(tokens, cfg);
    entry->tokens = MakeTokenSet(tokens);
    if (kb->entries_.count(entry->id)) {
      throw LoadError("kb load: duplicate id in record " + std::to_string(index), index);
    }
    kb->next_id_ = std::max(kb->next_id_, entry->id + 1);
    kb->entries_.emplace(entry->id, std::move(entry));
  }
  while (std::getline(in, line)) {
    if (!line.empty()) {
      throw LoadError("kb load: more records than header count at record " +
                          std::to_string(index),
                      index);
    }
  }
  kb->Publish();
  return kb;
}

}  // namespace ragguard
