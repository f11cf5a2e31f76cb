#include "ragguard/knowledge_base.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.h"
#include "ragguard/random.h"
#include "synthetic_corpus.h"

namespace ragguard {
namespace {

namespace fs = std::filesystem;

fs::path TempPath(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ragguard_kb_test";
  fs::create_directories(dir);
  return dir / name;
}

void Fill(KnowledgeBase& kb, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& e : testing::MakeBulkEntries(n, seed)) {
    kb.Insert(e.text, Bernoulli(rng, 0.5) ? Label::kUnsafe : Label::kSafe);
  }
  kb.Publish();
}

TEST(KnowledgeBaseTest, InsertAndLookupDefaultsToSeedSource) {
  KnowledgeBase kb{EncoderConfig{}};
  const auto id = kb.Insert("free offer", Label::kSafe);
  const auto e = kb.Lookup(id);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->text, "free offer");
  EXPECT_EQ(e->label, Label::kSafe);
  EXPECT_EQ(e->meta.source, Source::kSeed);
  EXPECT_EQ(e->embedding.values, Embed("free offer", kb.config()).values);
}

TEST(KnowledgeBaseTest, InsertsGetDistinctIds) {
  KnowledgeBase kb{EncoderConfig{}};
  EXPECT_NE(kb.Insert("a", Label::kSafe), kb.Insert("a", Label::kSafe));
}

TEST(KnowledgeBaseTest, EmptyTextRejected) {
  KnowledgeBase kb{EncoderConfig{}};
  EXPECT_THROW(kb.Insert("", Label::kSafe), InvalidArgument);
}

TEST(KnowledgeBaseTest, EmptyKbRetrievesNothing) {
  KnowledgeBase kb{EncoderConfig{}};
  kb.Publish();
  EXPECT_TRUE(kb.Snapshot()->RetrieveTopK("anything", 5, 0.4).empty());
}

TEST(KnowledgeBaseTest, ExactTextRanksFirstWithScoreOne) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 50, 2);
  const auto id = kb.Insert("how to poison a dog", Label::kUnsafe);
  kb.Publish();
  const auto ctx = kb.Snapshot()->RetrieveTopK("how to poison a dog", 3, 0.1);
  ASSERT_FALSE(ctx.empty());
  EXPECT_EQ(ctx.items[0].id, id);
  EXPECT_NEAR(ctx.items[0].score, 1.0, 1e-9);
}

TEST(KnowledgeBaseTest, ExcludedIdIsSkipped) {
  KnowledgeBase kb{EncoderConfig{}};
  const auto id = kb.Insert("exact duplicate text", Label::kUnsafe);
  kb.Publish();
  const EntryId ex[] = {id};
  EXPECT_TRUE(kb.Snapshot()->RetrieveTopK("exact duplicate text", 3, 0.1, ex).empty());
}

TEST(KnowledgeBaseTest, TopKMatchesBruteForce) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 10, 5);
  const auto snap = kb.Snapshot();
  for (const auto& probe : testing::MakeBulkEntries(20, 77)) {
    const auto q = snap->EncodeQuery(probe.text);
    const auto got = snap->RetrieveTopK(q, 3, 0.5);
    EXPECT_EQ(testing::CompareContexts(testing::OracleTopK(*snap, q, 3, 0.5), got, 1e-9), "");
    EXPECT_EQ(got.k_requested, 3u);
  }
}

TEST(KnowledgeBaseTest, RelaxedBandMatchesBruteForce) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 300, 6);
  const auto snap = kb.Snapshot();
  for (const auto& probe : testing::MakeBulkEntries(30, 8)) {
    const auto q = snap->EncodeQuery(probe.text);
    const auto got = snap->RetrieveRelaxed(q, 0.1, 0.15);
    EXPECT_EQ(testing::CompareContexts(testing::OracleBand(*snap, q, 0.1, 0.15), got, 1e-9),
              "");
  }
}

TEST(KnowledgeBaseTest, RelaxedRejectsDeltaNotBelowEpsilon) {
  KnowledgeBase kb{EncoderConfig{}};
  kb.Publish();
  EXPECT_THROW(kb.Snapshot()->RetrieveRelaxed("x", 0.5, 0.5), InvalidArgument);
}

TEST(KnowledgeBaseTest, DegenerateBandHoldsOnlyZeroScores) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 100, 12);
  const auto snap = kb.Snapshot();
  for (const auto& s : snap->RetrieveRelaxed("zzz qqq", 0.0, 1.0).items) {
    EXPECT_EQ(s.score, 0.0);
  }
}

TEST(KnowledgeBaseTest, BandUnionAcceptRegionCoversEverythingAboveDelta) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 400, 13);
  const auto snap = kb.Snapshot();
  const double delta = 0.1, eps = 0.6;
  for (const auto& probe : testing::MakeBulkEntries(20, 14)) {
    const auto q = snap->EncodeQuery(probe.text);
    std::set<EntryId> got;
    for (const auto& s : snap->RetrieveRelaxed(q, delta, eps).items) got.insert(s.id);
    for (const auto& s : snap->RetrieveTopK(q, snap->size(), eps).items) got.insert(s.id);
    std::set<EntryId> want;
    for (const auto& s : testing::OracleScan(*snap, q, Metric::kCosine)) {
      if (s.score >= delta) want.insert(s.id);
    }
    EXPECT_EQ(got, want);
  }
}

TEST(KnowledgeBaseTest, AcceptedSetMonotoneInEpsilon) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 300, 15);
  const auto snap = kb.Snapshot();
  for (const auto& probe : testing::MakeBulkEntries(10, 16)) {
    const auto small = snap->RetrieveTopK(probe.text, snap->size(), 0.5);
    const auto large = snap->RetrieveTopK(probe.text, snap->size(), 0.8);
    std::set<EntryId> big;
    for (const auto& s : large.items) big.insert(s.id);
    for (const auto& s : small.items) EXPECT_TRUE(big.count(s.id));
  }
}

TEST(KnowledgeBaseTest, RepeatedCallsIdentical) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 200, 17);
  const auto snap = kb.Snapshot();
  EXPECT_EQ(snap->RetrieveTopK("please find some song", 5, 0.9),
            snap->RetrieveTopK("please find some song", 5, 0.9));
}

TEST(KnowledgeBaseTest, PublishIsMonotoneAndSnapshotsAreImmutable) {
  KnowledgeBase kb{EncoderConfig{}};
  const auto e1 = kb.Publish();
  const auto old = kb.Snapshot();
  const auto id = kb.Insert("brand new entry", Label::kSafe);
  EXPECT_EQ(kb.pending(), 1u);
  const auto e2 = kb.Publish();
  EXPECT_EQ(e2, e1 + 1);
  EXPECT_EQ(old->Find(id), nullptr);
  EXPECT_TRUE(old->RetrieveTopK("brand new entry", 5, 0.4).empty());
  const auto now = kb.Snapshot();
  ASSERT_NE(now->Find(id), nullptr);
  EXPECT_EQ(now->RetrieveTopK("brand new entry", 5, 0.4).items.at(0).id, id);
}

TEST(KnowledgeBaseTest, PersistLoadRoundTrip) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 1000, 18);
  kb.Insert("feedback row", Label::kUnsafe, {Source::kFeedback, 1234, 0.75});
  kb.Publish();
  const auto path = TempPath("roundtrip.jsonl");
  kb.Persist(path);
  const auto loaded = KnowledgeBase::Load(path, kb.config());
  ASSERT_EQ(loaded->size(), kb.size());
  const auto a = kb.Snapshot();
  const auto b = loaded->Snapshot();
  for (const auto& e : a->entries()) {
    const auto* other = b->Find(e->id);
    ASSERT_NE(other, nullptr);
    EXPECT_EQ(other->text, e->text);
    EXPECT_EQ(other->label, e->label);
    EXPECT_EQ(other->meta, e->meta);
    EXPECT_EQ(other->embedding.values, e->embedding.values);
  }
  for (const auto& probe : testing::MakeBulkEntries(100, 19)) {
    EXPECT_EQ(a->RetrieveTopK(probe.text, 5, 0.7), b->RetrieveTopK(probe.text, 5, 0.7));
  }
  // New ids continue after the loaded ones.
  EXPECT_GT(loaded->Insert("next", Label::kSafe), a->entries().back()->id);
}

TEST(KnowledgeBaseTest, TruncatedFileNamesRecordIndex) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 10, 20);
  const auto path = TempPath("truncated.jsonl");
  kb.Persist(path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::string kept;
  for (int i = 0; i < 6 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(path, std::ios::trunc) << header << "\n" << kept;
  try {
    KnowledgeBase::Load(path, kb.config());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    ASSERT_TRUE(e.record_index().has_value());
    EXPECT_EQ(*e.record_index(), 6u);
  }
}

TEST(KnowledgeBaseTest, CorruptRecordNamesRecordIndex) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 5, 21);
  const auto path = TempPath("corrupt.jsonl");
  kb.Persist(path);
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  lines[3] = "{not json";
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << "\n";
  out.close();
  try {
    KnowledgeBase::Load(path, kb.config());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.record_index(), std::optional<std::size_t>(2));
  }
}

TEST(KnowledgeBaseTest, MismatchedEncoderConfigRejected) {
  KnowledgeBase kb{EncoderConfig{}};
  Fill(kb, 5, 22);
  const auto path = TempPath("mismatch.jsonl");
  kb.Persist(path);
  EncoderConfig other;
  other.hash_seed = 99;
  try {
    KnowledgeBase::Load(path, other);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_FALSE(e.record_index().has_value());
  }
}

TEST(KnowledgeBaseTest, LexicalMetricUsesTokenSets) {
  EncoderConfig cfg;
  cfg.metric = Metric::kLexical;
  KnowledgeBase kb(cfg);
  const auto a = kb.Insert("black color paint", Label::kSafe);
  kb.Insert("black cat", Label::kSafe);
  kb.Publish();
  const auto ctx = kb.Snapshot()->RetrieveTopK("paint color black", 2, 1.0);
  ASSERT_EQ(ctx.size(), 2u);
  EXPECT_EQ(ctx.items[0].id, a);
  EXPECT_DOUBLE_EQ(ctx.items[0].score, 1.0);
  EXPECT_DOUBLE_EQ(ctx.items[1].score, 0.25);
}

}  // namespace
}  // namespace ragguard
