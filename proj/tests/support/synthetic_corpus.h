#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ragguard/training.h"

namespace ragguard::testing {

// Topic clusters with a fixed label per cluster. A query names a few of its
// cluster's topic words plus filler, and carries an intent word of its label
// with probability intent_prob.
struct CorpusOptions {
  std::size_t train = 2000;
  std::size_t test = 500;
  std::size_t clusters = 120;
  std::size_t topic_words = 6;
  std::size_t words_per_query = 3;
  double intent_prob = 0.5;
  std::uint64_t seed = 1;
};

struct Corpus {
  Dataset data;
  // Near-duplicates of a test query with the opposite label; `per_query`
  // entries for each poisoned test query.
  std::vector<Example> distractors;
  std::vector<std::size_t> poisoned;  // indices into data.test
};

Corpus MakeCorpus(const CorpusOptions& options);

// Adds `per_query` opposite-label near-duplicates for round(fraction * n)
// test queries chosen by seed.
void PlantDistractors(Corpus& corpus, double fraction, std::size_t per_query,
                      std::uint64_t seed);

// Pronounceable pseudo-word; distinct indices give distinct words.
std::string PseudoWord(std::uint64_t index);

// Queries whose top-1 KB neighbor is an exact duplicate; exactly
// round(mismatch * n) of those duplicates carry the opposite label.
struct PlantedNeighbors {
  std::vector<Example> queries;
  std::vector<Example> kb;
};
PlantedNeighbors MakeMismatchSet(std::size_t n, double mismatch, std::uint64_t seed);

// round(covered * n) queries have an exact duplicate in the KB; the rest only
// share no words with any KB entry.
PlantedNeighbors MakeCoverageSet(std::size_t n, double covered, std::uint64_t seed);

// n distinct short queries for large-KB latency runs.
std::vector<Example> MakeBulkEntries(std::size_t n, std::uint64_t seed);

}  // namespace ragguard::testing
