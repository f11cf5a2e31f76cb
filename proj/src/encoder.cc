#include "ragguard/encoder.h"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace ragguard {
namespace {

bool IsBoundary(unsigned char c) {
  if (c >= 0x80) return false;
  return std::isspace(c) || std::ispunct(c) || std::iscntrl(c);
}

}  // namespace

std::string_view MetricName(Metric metric) {
  switch (metric) {
    case Metric::kCosine: return "cosine";
    case Metric::kDot: return "dot";
    case Metric::kLexical: return "lexical";
  }
  return "cosine";
}

Metric ParseMetric(std::string_view name) {
  if (name == "cosine") return Metric::kCosine;
  if (name == "dot") return Metric::kDot;
  if (name == "lexical") return Metric::kLexical;
  throw InvalidArgument("unknown metric: " + std::string(name));
}

void EncoderConfig::Validate() const {
  if (ngram_orders.empty()) {
    throw InvalidArgument("encoder: ngram_orders must be nonempty");
  }
  for (int n : ngram_orders) {
    if (n < 1) throw InvalidArgument("encoder: ngram order must be >= 1");
  }
  if (dimension == 0) throw InvalidArgument("encoder: dimension must be > 0");
  if (hash_buckets < dimension) {
    throw InvalidArgument("encoder: hash_buckets must be >= dimension");
  }
}

std::uint64_t EncoderConfig::Hash() const {
  std::uint64_t h = kFnvOffset;
  auto feed = [&h](std::uint64_t v) { h = Fnv1a(&v, sizeof(v), h); };
  feed(ngram_orders.size());
  for (int n : ngram_orders) feed(static_cast<std::uint64_t>(n));
  feed(hash_buckets);
  feed(hash_seed);
  feed(dimension);
  feed(static_cast<std::uint64_t>(metric));
  feed(static_cast<std::uint64_t>(norm_mode));
  return h;
}

void to_json(nlohmann::json& j, const EncoderConfig& cfg) {
  j = nlohmann::json{{"ngram_orders", cfg.ngram_orders},
                     {"hash_buckets", cfg.hash_buckets},
                     {"hash_seed", cfg.hash_seed},
                     {"dimension", cfg.dimension},
                     {"metric", MetricName(cfg.metric)},
                     {"norm_mode", cfg.norm_mode == NormMode::kUnit ? "unit" : "raw"}};
}

void from_json(const nlohmann::json& j, EncoderConfig& cfg) {
  cfg = EncoderConfig{};
  if (j.contains("ngram_orders")) j.at("ngram_orders").get_to(cfg.ngram_orders);
  if (j.contains("hash_buckets")) j.at("hash_buckets").get_to(cfg.hash_buckets);
  if (j.contains("hash_seed")) j.at("hash_seed").get_to(cfg.hash_seed);
  if (j.contains("dimension")) j.at("dimension").get_to(cfg.dimension);
  if (j.contains("metric")) cfg.metric = ParseMetric(j.at("metric").get<std::string>());
  if (j.contains("norm_mode")) {
    const auto mode = j.at("norm_mode").get<std::string>();
    if (mode == "unit") {
      cfg.norm_mode = NormMode::kUnit;
    } else if (mode == "raw") {
      cfg.norm_mode = NormMode::kRaw;
    } else {
      throw InvalidArgument("encoder: unknown norm_mode " + mode);
    }
  }
  cfg.Validate();
}

bool EmbeddingVector::IsZero() const {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return v == 0.0f; });
}

double EmbeddingVector::Norm() const { return std::sqrt(Dot(values, values)); }

TokenSequence Tokenize(std::string_view text) {
  TokenSequence tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (IsBoundary(c)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      continue;
    }
    current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

TokenSet MakeTokenSet(const TokenSequence& tokens) {
  TokenSet set(tokens.begin(), tokens.end());
  std::sort(set.begin(), set.end());
  set.erase(std::unique(set.begin(), set.end()), set.end());
  return set;
}

EmbeddingVector Embed(std::string_view text, const EncoderConfig& cfg) {
  return Embed(Tokenize(text), cfg);
}

EmbeddingVector Embed(const TokenSequence& tokens, const EncoderConfig& cfg) {
  EmbeddingVector out;
  out.values.assign(cfg.dimension, 0.0f);
  out.norm_mode = NormMode::kRaw;
  if (tokens.empty()) return out;

  // Integer counts first so the result does not depend on accumulation order.
  std::vector<std::int64_t> counts(cfg.dimension, 0);
  std::string gram;
  for (int order : cfg.ngram_orders) {
    const auto n = static_cast<std::size_t>(order);
    if (tokens.size() < n) continue;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      gram.clear();
      for (std::size_t k = 0; k < n; ++k) {
        if (k) gram.push_back(' ');
        gram += tokens[i + k];
      }
      const std::uint64_t h = Mix64(Fnv1a(gram, kFnvOffset ^ Mix64(cfg.hash_seed)));
      const std::uint64_t bucket = h % cfg.hash_buckets;
      const std::size_t dim = bucket % cfg.dimension;
      counts[dim] += (h >> 63) ? -1 : 1;
    }
  }

  double norm_sq = 0.0;
  for (auto c : counts) norm_sq += static_cast<double>(c) * static_cast<double>(c);
  if (norm_sq == 0.0) return out;

  const double scale = cfg.norm_mode == NormMode::kUnit ? 1.0 / std::sqrt(norm_sq) : 1.0;
  for (std::size_t i = 0; i < cfg.dimension; ++i) {
    out.values[i] = static_cast<float>(static_cast<double>(counts[i]) * scale);
  }
  out.norm_mode = cfg.norm_mode;
  return out;
}

double Dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

double Similarity(const EmbeddingVector& a, const EmbeddingVector& b,
                  Metric metric) {
  if (a.dimension() != b.dimension()) {
    throw InvalidArgument("similarity: dimension mismatch (" +
                          std::to_string(a.dimension()) + " vs " +
                          std::to_string(b.dimension()) + ")");
  }
  switch (metric) {
    case Metric::kDot:
      return Dot(a.values, b.values);
    case Metric::kCosine: {
      const double na = a.Norm();
      const double nb = b.Norm();
      if (na == 0.0 || nb == 0.0) return 0.0;
      return Dot(a.values, b.values) / (na * nb);
    }
    case Metric::kLexical:
      break;
  }
  throw InvalidArgument("similarity: lexical metric needs token sets");
}

double LexicalSimilarity(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

EncodedText Encode(std::string_view text, const EncoderConfig& cfg) {
  auto tokens = Tokenize(text);
  EncodedText out;
  out.embedding = Embed(tokens, cfg);
  out.tokens = MakeTokenSet(tokens);
  return out;
}

double Similarity(const EncodedText& a, const EncodedText& b, Metric metric) {
  if (metric == Metric::kLexical) return LexicalSimilarity(a.tokens, b.tokens);
  return Similarity(a.embedding, b.embedding, metric);
}

}  // namespace ragguard
