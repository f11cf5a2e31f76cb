#include "synthetic_corpus.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "ragguard/random.h"

namespace ragguard::testing {
namespace {

constexpr std::array<const char*, 16> kConsonants = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                     "p", "r", "s", "t", "v", "z", "ch", "sh"};
constexpr std::array<const char*, 5> kVowels = {"a", "e", "i", "o", "u"};

constexpr std::array<const char*, 10> kFillers = {"please", "tell", "me", "about", "some",
                                                  "can", "you", "find", "any", "now"};
constexpr std::array<const char*, 8> kUnsafeIntent = {"kill",  "poison",  "steal", "attack",
                                                      "hurt",  "threaten", "stab", "bomb"};
constexpr std::array<const char*, 8> kSafeIntent = {"recipe", "song", "lyrics", "history",
                                                    "movie",  "book", "learn",  "game"};

const char* IntentWord(Label label, Rng& rng) {
  return label == Label::kUnsafe ? kUnsafeIntent[UniformIndex(rng, kUnsafeIntent.size())]
                                 : kSafeIntent[UniformIndex(rng, kSafeIntent.size())];
}

bool IsIntentWord(const std::string& w) {
  for (const char* s : kUnsafeIntent) {
    if (w == s) return true;
  }
  for (const char* s : kSafeIntent) {
    if (w == s) return true;
  }
  return false;
}

std::string Join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::vector<std::string> Words(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto j = text.find(' ', i);
    const auto end = j == std::string::npos ? text.size() : j;
    if (end > i) out.push_back(text.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

struct Cluster {
  std::vector<std::string> phrase;
  Label label;
};

std::string MakeQuery(const Cluster& c, double intent_prob, Rng& rng) {
  std::vector<std::string> words = c.phrase;
  if (Bernoulli(rng, 0.3)) {
    words.erase(words.begin() + static_cast<std::ptrdiff_t>(UniformIndex(rng, words.size())));
  }
  if (Bernoulli(rng, 0.7)) {
    const auto pos = UniformIndex(rng, words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos),
                 kFillers[UniformIndex(rng, kFillers.size())]);
  }
  if (Bernoulli(rng, intent_prob)) {
    const auto pos = UniformIndex(rng, words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), IntentWord(c.label, rng));
  }
  return Join(words);
}

}  // namespace

std::string PseudoWord(std::uint64_t index) {
  constexpr std::uint64_t kSyllables = kConsonants.size() * kVowels.size();
  std::string out;
  // Three syllables minimum; more for large indices.
  std::uint64_t v = index;
  for (int i = 0; i < 3 || v > 0; ++i) {
    const auto s = v % kSyllables;
    v /= kSyllables;
    out += kConsonants[s / kVowels.size()];
    out += kVowels[s % kVowels.size()];
  }
  return out;
}

Corpus MakeCorpus(const CorpusOptions& options) {
  Rng rng(options.seed);
  std::vector<Cluster> clusters;
  // Word indices are shuffled so cluster phrases do not share syllable patterns.
  std::vector<std::uint64_t> word_ids(options.clusters * options.topic_words);
  for (std::size_t i = 0; i < word_ids.size(); ++i) word_ids[i] = 1000 + i * 7;
  Shuffle(word_ids, rng);
  for (std::size_t c = 0; c < options.clusters; ++c) {
    Cluster cl;
    for (std::size_t j = 0; j < options.topic_words; ++j) {
      cl.phrase.push_back(PseudoWord(word_ids[c * options.topic_words + j]));
    }
    cl.phrase.resize(std::min(options.words_per_query + 1, cl.phrase.size()));
    cl.label = c % 2 ? Label::kUnsafe : Label::kSafe;
    clusters.push_back(std::move(cl));
  }

  Corpus corpus;
  std::set<std::string> seen;
  auto draw = [&](std::vector<Example>& out, std::size_t n) {
    while (out.size() < n) {
      const auto& c = clusters[UniformIndex(rng, clusters.size())];
      std::string q = MakeQuery(c, options.intent_prob, rng);
      if (!seen.insert(q).second) continue;
      out.push_back({std::move(q), c.label});
    }
  };
  draw(corpus.data.train, options.train);
  draw(corpus.data.test, options.test);
  return corpus;
}

void PlantDistractors(Corpus& corpus, double fraction, std::size_t per_query,
                      std::uint64_t seed) {
  Rng rng(seed);
  const auto& test = corpus.data.test;
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(test.size())));
  corpus.poisoned = SampleIndices(test.size(), n, rng);
  std::sort(corpus.poisoned.begin(), corpus.poisoned.end());
  for (auto i : corpus.poisoned) {
    const Label target = Opposite(test[i].label);
    std::vector<std::string> base;
    for (auto& w : Words(test[i].text)) {
      if (!IsIntentWord(w)) base.push_back(w);
    }
    std::set<std::string> made;
    for (std::size_t attempt = 0; made.size() < per_query && attempt < 100 * per_query; ++attempt) {
      auto words = base;
      const auto pos = UniformIndex(rng, words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), IntentWord(target, rng));
      if (Bernoulli(rng, 0.5)) {
        words.push_back(kFillers[UniformIndex(rng, kFillers.size())]);
      }
      std::string text = Join(words);
      if (made.insert(text).second) corpus.distractors.push_back({std::move(text), target});
    }
  }
}

PlantedNeighbors MakeMismatchSet(std::size_t n, double mismatch, std::uint64_t seed) {
  Rng rng(seed);
  PlantedNeighbors out;
  const auto n_mismatch = static_cast<std::size_t>(std::llround(mismatch * static_cast<double>(n)));
  auto flip = SampleIndices(n, n_mismatch, rng);
  std::vector<bool> flipped(n, false);
  for (auto i : flip) flipped[i] = true;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text = PseudoWord(50000 + 4 * i) + " " + PseudoWord(50001 + 4 * i) + " " +
                       PseudoWord(50002 + 4 * i);
    const Label y = Bernoulli(rng, 0.5) ? Label::kUnsafe : Label::kSafe;
    out.queries.push_back({text, y});
    out.kb.push_back({text, flipped[i] ? Opposite(y) : y});
  }
  return out;
}

PlantedNeighbors MakeCoverageSet(std::size_t n, double covered, std::uint64_t seed) {
  Rng rng(seed);
  PlantedNeighbors out;
  const auto n_cov = static_cast<std::size_t>(std::llround(covered * static_cast<double>(n)));
  auto pick = SampleIndices(n, n_cov, rng);
  std::vector<bool> has(n, false);
  for (auto i : pick) has[i] = true;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text = PseudoWord(90000 + 4 * i) + " " + PseudoWord(90001 + 4 * i) + " " +
                       PseudoWord(90002 + 4 * i);
    const Label y = Bernoulli(rng, 0.5) ? Label::kUnsafe : Label::kSafe;
    out.queries.push_back({text, y});
    if (has[i]) {
      out.kb.push_back({text, y});
    } else {
      out.kb.push_back({PseudoWord(300000 + 4 * i) + " " + PseudoWord(300001 + 4 * i), y});
    }
  }
  return out;
}

std::vector<Example> MakeBulkEntries(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(n);
  std::set<std::string> seen;
  constexpr std::uint64_t kVocab = 20000;
  while (out.size() < n) {
    const auto len = 3 + UniformIndex(rng, 5);
    std::vector<std::string> words;
    for (std::uint64_t j = 0; j < len; ++j) words.push_back(PseudoWord(UniformIndex(rng, kVocab)));
    std::string text = Join(words);
    if (!seen.insert(text).second) continue;
    out.push_back({std::move(text), Bernoulli(rng, 0.5) ? Label::kUnsafe : Label::kSafe});
  }
  return out;
}

}  // namespace ragguard::testing
