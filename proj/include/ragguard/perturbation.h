#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ragguard/common.h"
#include "ragguard/encoder.h"
#include "ragguard/guard_model.h"
#include "ragguard/knowledge_base.h"
#include "ragguard/random.h"

namespace ragguard {

enum class Strategy { kLabelContradiction, kAmbiguityInjection, kLexicalOverlap };

std::string_view StrategyName(Strategy strategy);
Strategy ParseStrategy(std::string_view name);

struct AdversarialEntry {
  EntryId derived_from = 0;
  std::string text;
  Label intended_label = Label::kSafe;
  Strategy strategy = Strategy::kLabelContradiction;

  bool operator==(const AdversarialEntry&) const = default;
};

class AttackerError : public Error {
 public:
  AttackerError(const std::string& what, EntryId entry_id)
      : Error(what), entry_id_(entry_id) {}
  EntryId entry_id() const { return entry_id_; }

 private:
  EntryId entry_id_;
};

// Produces one adversarial variant of `source` per call. Implementations
// may throw; GenerateAdversarialEntries wraps failures in AttackerError.
class Attacker {
 public:
  virtual ~Attacker() = default;
  virtual AdversarialEntry Draw(const KbEntry& source, Rng& rng) = 0;
};

// Rule-based attacker. Each draw picks one of the three strategies
// uniformly at random.
class TemplateAttacker : public Attacker {
 public:
  AdversarialEntry Draw(const KbEntry& source, Rng& rng) override;

  // Individual strategies, exposed for tests.
  static AdversarialEntry LabelContradiction(const KbEntry& source, Rng& rng);
  static AdversarialEntry AmbiguityInjection(const KbEntry& source, Rng& rng);
  static AdversarialEntry LexicalOverlap(const KbEntry& source, Rng& rng);
};

std::vector<AdversarialEntry> GenerateAdversarialEntries(const KbEntry& entry,
                                                         Attacker& attacker,
                                                         std::size_t n, Rng& rng);

// 1[y_hat != y_star] * (1 - s[y_star]).
double AttackReward(const PredictionDistribution& guard_dist, Label y_star,
                    Label y_hat);

// Whitespace-token character edits followed by adjacent word swaps. At most
// ceil((char_edit_rate + word_swap_rate) * tokens) + 1 token positions change.
std::string PerturbText(std::string_view text, double char_edit_rate,
                        double word_swap_rate, Rng& rng);

std::size_t PerturbEditBudget(std::size_t token_count, double char_edit_rate,
                              double word_swap_rate);

struct PerturbationConfig {
  double lambda = 0.5;
  double delta = 0.2;
  double epsilon = 0.4;
  double char_edit_rate = 0.05;
  double word_swap_rate = 0.05;
  std::vector<EncoderConfig> encoder_variants;
  std::uint64_t rng_seed = 0;
  std::size_t adversarial_variants = 1;

  bool adversarial_kb = true;
  bool encoder_variation = true;
  bool threshold_relaxing = true;
  bool sampling = true;

  void Validate() const;
};

void to_json(nlohmann::json& j, const PerturbationConfig& cfg);
void from_json(const nlohmann::json& j, PerturbationConfig& cfg);

// Dot, lexical, and a reseeded trigram encoder, all derived from `base`.
std::vector<EncoderConfig> DefaultEncoderVariants(const EncoderConfig& base);

// Entries that exist only inside perturbed contexts (adversarial variants and
// text-perturbed copies). Ids start at kFirstId so they never collide with KB ids.
class EntryPool : public EntryResolver {
 public:
  static constexpr EntryId kFirstId = EntryId{1} << 40;

  explicit EntryPool(EncoderConfig cfg) : cfg_(std::move(cfg)) {}

  EntryId Add(std::string text, Label label, Source source);
  const KbEntry* Find(EntryId id) const override;
  std::size_t size() const { return entries_.size(); }
  std::span<const std::unique_ptr<KbEntry>> entries() const { return entries_; }

 private:
  EncoderConfig cfg_;
  std::vector<std::unique_ptr<KbEntry>> entries_;
};

// Looks ids up in `first`, then `second`.
class ChainedResolver : public EntryResolver {
 public:
  ChainedResolver(const EntryResolver& first, const EntryResolver& second)
      : first_(first), second_(second) {}
  const KbEntry* Find(EntryId id) const override {
    const KbEntry* e = first_.Find(id);
    return e ? e : second_.Find(id);
  }

 private:
  const EntryResolver& first_;
  const EntryResolver& second_;
};

// Retrieval over one snapshot under alternative encoders and similarity
// functions.
class VariantRetriever {
 public:
  VariantRetriever(std::shared_ptr<const KbSnapshot> snapshot,
                   std::vector<EncoderConfig> variants);

  std::size_t size() const { return indexes_.size(); }
  const EncoderConfig& variant(std::size_t i) const { return indexes_[i].config(); }

  // Top-k under variant i. Without min_score this is plain top-k.
  ContextSet Retrieve(std::size_t i, std::string_view x, std::size_t k,
                      std::optional<double> min_score = std::nullopt,
                      std::span<const EntryId> exclude = {}) const;

 private:
  std::shared_ptr<const KbSnapshot> snapshot_;
  std::vector<ScoringIndex> indexes_;
};

// Retrieval under a variant drawn uniformly from `retriever`.
ContextSet PerturbRetrieval(std::string_view x, const VariantRetriever& retriever,
                            std::size_t k, Rng& rng,
                            std::optional<double> min_score = std::nullopt,
                            std::span<const EntryId> exclude = {});

enum class PerturbStep { kAdversarialKb, kEncoderVariation, kThresholdRelaxing, kSampling };

std::string_view PerturbStepName(PerturbStep step);

struct PerturbedContext {
  std::string query;  // differs from x only for the sampling step
  ContextSet context;
  PerturbStep step = PerturbStep::kAdversarialKb;
  std::uint64_t seed = 0;
  std::optional<Strategy> strategy;  // adversarial step only
};

struct PerturbationInputs {
  std::string_view x;
  const ContextSet* clean = nullptr;
  std::size_t k = 5;
  std::span<const EntryId> exclude;
};

// All perturbed context sets for one query. New entries land in `pool`.
// Each step draws from its own stream derived from `seed`.
std::vector<PerturbedContext> BuildPerturbedContexts(
    const PerturbationInputs& in, const KbSnapshot& kb,
    const VariantRetriever* variants, const PerturbationConfig& cfg,
    Attacker& attacker, EntryPool& pool, std::uint64_t seed);

}  // namespace ragguard
