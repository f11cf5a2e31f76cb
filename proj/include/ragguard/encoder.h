#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ragguard/common.h"

namespace ragguard {

enum class Metric { kCosine, kDot, kLexical };
enum class NormMode { kUnit, kRaw };

std::string_view MetricName(Metric metric);
Metric ParseMetric(std::string_view name);

struct EncoderConfig {
  std::vector<int> ngram_orders{1, 2};
  std::uint64_t hash_buckets = 1ULL << 18;
  std::uint64_t hash_seed = 0x5eed;
  std::size_t dimension = 64;
  Metric metric = Metric::kCosine;
  NormMode norm_mode = NormMode::kUnit;

  // Throws InvalidArgument when an invariant is violated.
  void Validate() const;
  // Stable fingerprint of every field; stored in KB file headers.
  std::uint64_t Hash() const;

  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& cfg);
void from_json(const nlohmann::json& j, EncoderConfig& cfg);

using TokenSequence = std::vector<std::string>;
// Sorted, deduplicated tokens. Carried next to embeddings for lexical scoring.
using TokenSet = std::vector<std::string>;

struct EmbeddingVector {
  std::vector<float> values;
  NormMode norm_mode = NormMode::kRaw;

  std::size_t dimension() const { return values.size(); }
  bool IsZero() const;
  double Norm() const;
};

// Lowercases ASCII, splits on whitespace and ASCII punctuation, drops the
// punctuation. Bytes >= 0x80 are kept as word characters.
TokenSequence Tokenize(std::string_view text);

TokenSet MakeTokenSet(const TokenSequence& tokens);

// Hashed bag of n-grams folded into cfg.dimension signed buckets.
EmbeddingVector Embed(std::string_view text, const EncoderConfig& cfg);
EmbeddingVector Embed(const TokenSequence& tokens, const EncoderConfig& cfg);

// Dot product accumulated in double, in dimension order.
double Dot(std::span<const float> a, std::span<const float> b);

// Cosine or dot similarity. Cosine of a zero vector is 0. Lexical is not
// defined on vectors alone and raises InvalidArgument; use the overload with
// token sets. Dimension mismatch raises InvalidArgument.
double Similarity(const EmbeddingVector& a, const EmbeddingVector& b,
                  Metric metric);

// Jaccard overlap |a ∩ b| / |a ∪ b|; 0 when both are empty.
double LexicalSimilarity(const TokenSet& a, const TokenSet& b);

// An embedding together with the token set it was computed from.
struct EncodedText {
  EmbeddingVector embedding;
  TokenSet tokens;
};

EncodedText Encode(std::string_view text, const EncoderConfig& cfg);

double Similarity(const EncodedText& a, const EncodedText& b, Metric metric);

}  // namespace ragguard
