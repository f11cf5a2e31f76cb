#include "ragguard/perturbation.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ragguard/training.h"
#include "synthetic_corpus.h"

namespace ragguard {
namespace {

KbEntry MakeEntry(EntryId id, const std::string& text, Label label) {
  const EncoderConfig cfg;
  KbEntry e;
  e.id = id;
  e.text = text;
  e.label = label;
  e.embedding = Embed(text, cfg);
  e.tokens = MakeTokenSet(Tokenize(text));
  return e;
}

std::vector<std::string> WhitespaceSplit(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

class ThrowingAttacker : public Attacker {
 public:
  AdversarialEntry Draw(const KbEntry&, Rng&) override { throw std::runtime_error("boom"); }
};

TEST(AdversarialTest, SeededDeterminism) {
  const auto e = MakeEntry(7, "how do i poison my neighbor's dog", Label::kUnsafe);
  TemplateAttacker attacker;
  Rng a(5), b(5);
  const auto x = GenerateAdversarialEntries(e, attacker, 3, a);
  const auto y = GenerateAdversarialEntries(e, attacker, 3, b);
  ASSERT_EQ(x.size(), 3u);
  EXPECT_EQ(x, y);
  for (const auto& v : x) EXPECT_EQ(v.derived_from, 7u);
}

TEST(AdversarialTest, LexicalOverlapSharesHalfTheTokens) {
  Rng rng(1);
  for (const auto& ex : testing::MakeBulkEntries(300, 2)) {
    const auto e = MakeEntry(1, ex.text, Label::kSafe);
    const auto v = TemplateAttacker::LexicalOverlap(e, rng);
    const auto src = MakeTokenSet(Tokenize(e.text));
    const auto var = MakeTokenSet(Tokenize(v.text));
    std::size_t shared = 0;
    for (const auto& t : src) shared += std::count(var.begin(), var.end(), t);
    EXPECT_GE(2 * shared, src.size()) << e.text << " -> " << v.text;
    EXPECT_EQ(v.intended_label, Label::kUnsafe);
    EXPECT_EQ(v.strategy, Strategy::kLexicalOverlap);
  }
}

TEST(AdversarialTest, LabelContradictionFlipsLabel) {
  Rng rng(3);
  for (Label l : {Label::kSafe, Label::kUnsafe}) {
    const auto v = TemplateAttacker::LabelContradiction(MakeEntry(1, "bake sourdough bread", l), rng);
    EXPECT_NE(v.intended_label, l);
    EXPECT_EQ(v.strategy, Strategy::kLabelContradiction);
  }
}

TEST(AdversarialTest, AmbiguityInjectionRecordsStrategy) {
  Rng rng(4);
  const auto v = TemplateAttacker::AmbiguityInjection(MakeEntry(1, "stab the balloon", Label::kSafe), rng);
  EXPECT_EQ(v.strategy, Strategy::kAmbiguityInjection);
  EXPECT_NE(v.text, "stab the balloon");
}

TEST(AdversarialTest, ZeroCountRejected) {
  TemplateAttacker attacker;
  Rng rng(1);
  EXPECT_THROW(GenerateAdversarialEntries(MakeEntry(1, "a", Label::kSafe), attacker, 0, rng),
               InvalidArgument);
}

TEST(AdversarialTest, AttackerFailureNamesEntry) {
  ThrowingAttacker attacker;
  Rng rng(1);
  try {
    GenerateAdversarialEntries(MakeEntry(42, "a b", Label::kSafe), attacker, 1, rng);
    FAIL() << "expected AttackerError";
  } catch (const AttackerError& e) {
    EXPECT_EQ(e.entry_id(), 42u);
  }
}

TEST(AttackRewardTest, ByHand) {
  EXPECT_EQ(AttackReward({0.3, 0.7}, Label::kUnsafe, Label::kUnsafe), 0.0);
  EXPECT_DOUBLE_EQ(AttackReward({0.8, 0.2}, Label::kUnsafe, Label::kSafe), 0.8);
  EXPECT_EQ(AttackReward({0.0, 1.0}, Label::kUnsafe, Label::kSafe), 0.0);
}

TEST(AttackRewardTest, StrictlyDecreasingInTruthProbability) {
  double prev = 2.0;
  for (int i = 0; i <= 100; ++i) {
    const double s = i / 100.0;
    const double r = AttackReward({1 - s, s}, Label::kUnsafe, Label::kSafe);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(PerturbTextTest, ZeroRatesAreIdentity) {
  Rng rng(1);
  EXPECT_EQ(PerturbText("leave me   exactly as is", 0.0, 0.0, rng), "leave me   exactly as is");
  EXPECT_EQ(PerturbText("", 0.5, 0.5, rng), "");
}

TEST(PerturbTextTest, SeededDeterminism) {
  Rng a(9), b(9);
  const std::string t = "please tell me about the history of the old castle on the hill";
  EXPECT_EQ(PerturbText(t, 0.05, 0.05, a), PerturbText(t, 0.05, 0.05, b));
}

TEST(PerturbTextTest, InvalidRatesRejected) {
  Rng rng(1);
  EXPECT_THROW(PerturbText("a b", 1.5, 0.0, rng), InvalidArgument);
}

TEST(PerturbTextTest, EditBudgetRespected) {
  Rng rng(10);
  const auto texts = testing::MakeBulkEntries(1000, 11);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const double c = UniformUnit(rng) * 0.6, w = UniformUnit(rng) * 0.6;
    const auto in = WhitespaceSplit(texts[i].text);
    const auto out = WhitespaceSplit(PerturbText(texts[i].text, c, w, rng));
    ASSERT_EQ(in.size(), out.size());
    std::size_t changed = 0;
    for (std::size_t j = 0; j < in.size(); ++j) changed += in[j] != out[j];
    const auto bound =
        static_cast<std::size_t>(std::ceil((c + w) * static_cast<double>(in.size()))) + 1;
    EXPECT_LE(changed, bound) << texts[i].text;
    EXPECT_EQ(PerturbEditBudget(in.size(), c, w), bound);
  }
}

TEST(PerturbationConfigTest, Validation) {
  PerturbationConfig cfg;
  cfg.encoder_variants = DefaultEncoderVariants(EncoderConfig{});
  EXPECT_NO_THROW(cfg.Validate());
  auto bad = cfg;
  bad.delta = bad.epsilon;
  EXPECT_THROW(bad.Validate(), InvalidArgument);
  bad = cfg;
  bad.encoder_variants.clear();
  EXPECT_THROW(bad.Validate(), InvalidArgument);
  bad = cfg;
  bad.lambda = -1;
  EXPECT_THROW(bad.Validate(), InvalidArgument);
  const nlohmann::json j = cfg;
  const auto back = j.get<PerturbationConfig>();
  EXPECT_EQ(back.encoder_variants, cfg.encoder_variants);
  EXPECT_EQ(back.lambda, cfg.lambda);
}

class RetrievalFixture : public ::testing::Test {
 protected:
  RetrievalFixture() : kb_(EncoderConfig{}) {
    for (const auto& e : testing::MakeBulkEntries(200, 30)) kb_.Insert(e.text, e.label);
    target_ = kb_.Insert("black color paint for the fence", Label::kSafe);
    kb_.Publish();
    snap_ = kb_.Snapshot();
  }
  KnowledgeBase kb_;
  EntryId target_ = 0;
  std::shared_ptr<const KbSnapshot> snap_;
};

TEST_F(RetrievalFixture, IdentityVariantMatchesTopK) {
  VariantRetriever r(snap_, {kb_.config()});
  Rng rng(1);
  for (const auto& probe : testing::MakeBulkEntries(20, 31)) {
    EXPECT_EQ(PerturbRetrieval(probe.text, r, 5, rng, 0.6),
              snap_->RetrieveTopK(probe.text, 5, 0.4));
  }
}

TEST_F(RetrievalFixture, LexicalVariantRanksFullOverlapFirst) {
  EncoderConfig lex;
  lex.metric = Metric::kLexical;
  VariantRetriever r(snap_, {lex});
  Rng rng(1);
  const auto ctx = PerturbRetrieval("fence paint color black the for", r, 3, rng);
  ASSERT_FALSE(ctx.empty());
  EXPECT_EQ(ctx.items[0].id, target_);
  EXPECT_EQ(ctx.items[0].score, 1.0);
}

TEST_F(RetrievalFixture, DotVariantRanksLikeCosine) {
  EncoderConfig dot;
  dot.metric = Metric::kDot;
  VariantRetriever r(snap_, {EncoderConfig{}, dot});
  for (const auto& probe : testing::MakeBulkEntries(20, 32)) {
    const auto a = r.Retrieve(0, probe.text, 5);
    const auto b = r.Retrieve(1, probe.text, 5);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a.items[i].score, b.items[i].score, 1e-6);
    }
  }
}

TEST_F(RetrievalFixture, BuildPerturbedContextsAllStepsOffIsEmpty) {
  PerturbationConfig cfg;
  cfg.adversarial_kb = cfg.encoder_variation = cfg.threshold_relaxing = cfg.sampling = false;
  TemplateAttacker attacker;
  EntryPool pool(kb_.config());
  const auto clean = snap_->RetrieveTopK("black paint", 5, 0.4);
  PerturbationInputs in{"black paint", &clean, 5, {}};
  EXPECT_TRUE(BuildPerturbedContexts(in, *snap_, nullptr, cfg, attacker, pool, 1).empty());
}

TEST_F(RetrievalFixture, EmptyBandGivesNoRelaxedContext) {
  PerturbationConfig cfg;
  cfg.adversarial_kb = cfg.encoder_variation = cfg.sampling = false;
  cfg.delta = 0.95;
  cfg.epsilon = 0.96;  // band [0.95, 0.04] is empty
  TemplateAttacker attacker;
  EntryPool pool(kb_.config());
  const auto clean = snap_->RetrieveTopK("black paint", 5, cfg.epsilon);
  PerturbationInputs in{"black paint", &clean, 5, {}};
  EXPECT_TRUE(BuildPerturbedContexts(in, *snap_, nullptr, cfg, attacker, pool, 1).empty());
}

TEST_F(RetrievalFixture, BuildPerturbedContextsDeterministicWithProvenance) {
  PerturbationConfig cfg;
  cfg.encoder_variants = DefaultEncoderVariants(kb_.config());
  cfg.delta = 0.05;
  VariantRetriever variants(snap_, cfg.encoder_variants);
  TemplateAttacker attacker;
  const std::string x = "black color paint for the fence";
  const auto clean = snap_->RetrieveTopK(x, 5, cfg.epsilon);
  ASSERT_FALSE(clean.empty());
  PerturbationInputs in{x, &clean, 5, {}};
  EntryPool p1(kb_.config()), p2(kb_.config());
  const auto a = BuildPerturbedContexts(in, *snap_, &variants, cfg, attacker, p1, 77);
  const auto b = BuildPerturbedContexts(in, *snap_, &variants, cfg, attacker, p2, 77);
  ASSERT_EQ(a.size(), b.size());
  std::set<PerturbStep> steps;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].context, b[i].context);
    EXPECT_EQ(a[i].query, b[i].query);
    EXPECT_EQ(a[i].step, b[i].step);
    EXPECT_EQ(a[i].seed, b[i].seed);
    EXPECT_EQ(a[i].strategy.has_value(), a[i].step == PerturbStep::kAdversarialKb);
    EXPECT_LE(a[i].context.size(), 5u);
    steps.insert(a[i].step);
    ChainedResolver resolver(*snap_, p1);
    for (const auto& item : a[i].context.items) EXPECT_NE(resolver.Find(item.id), nullptr);
  }
  EXPECT_TRUE(steps.count(PerturbStep::kAdversarialKb));
  EXPECT_TRUE(steps.count(PerturbStep::kEncoderVariation));
  EXPECT_TRUE(steps.count(PerturbStep::kSampling));
  for (const auto& e : p1.entries()) EXPECT_GE(e->id, EntryPool::kFirstId);
}

}  // namespace
}  // namespace ragguard
