#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "wordlearn/corpus.hpp"
#include "wordlearn/rng.hpp"

namespace wordlearn {

/// Parameters of the synthetic topic corpus used when no real corpus is at
/// hand. Articles are runs of sentences on one topic; content slots draw
/// from the article's topic with probability `purity`.
struct SynthConfig {
  std::size_t topics = 20;
  std::size_t nouns = 15;  // per topic
  std::size_t verbs = 8;
  std::size_t adjectives = 6;
  std::size_t train_articles = 2250;
  std::size_t test_articles = 100;
  std::size_t min_sentences = 8;  // per article
  std::size_t max_sentences = 15;
  std::size_t rare_words = 20;
  std::size_t rare_occurrences = 20;  // sentences per rare word, all in train
  double purity = 0.95;
  double compound = 0.3;   // a noun slot becomes a two-noun compound
  double modifier = 0.2;   // an adjective is inserted before a noun slot
  std::uint64_t seed = 1;
};

struct SynthCorpus {
  std::vector<Sentence> train;
  std::vector<Sentence> test;
  std::vector<std::string> roster;             // the rare words
  std::map<std::string, std::size_t> topic_of;  // content word -> topic
};

namespace detail {

enum class Slot { noun, verb, adjective };

struct Template {
  std::vector<std::string> parts;  // "N", "V", "A" or a literal function word
};

inline const std::vector<Template>& synth_templates() {
  static const std::vector<Template> t = {
      {{"the", "A", "N", "V", "the", "N"}},
      {{"a", "N", "V", "in", "the", "A", "N"}},
      {{"the", "N", "of", "the", "N", "V", "with", "a", "N"}},
      {{"the", "N", "V", "to", "the", "N", "and", "the", "N"}},
      {{"it", "V", "the", "A", "N", "on", "the", "N"}},
      {{"the", "A", "N", "was", "A"}},
      {{"a", "N", "and", "a", "N", "V", "for", "the", "N"}},
      {{"the", "N", "that", "V", "the", "N", "is", "A"}},
      {{"in", "the", "N", "the", "N", "V", "a", "A", "N"}},
      {{"the", "N", "V"}},
      {{"some", "A", "N", "V", "from", "the", "N"}},
      {{"we", "V", "a", "N", "at", "the", "A", "N"}},
  };
  return t;
}

// Pronounceable distinct pseudo-words.
inline std::vector<std::string> make_words(std::size_t n, Rng& rng, std::set<std::string>& used) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static const char* codas[] = {"", "", "n", "r", "s", "l", "k"};
  std::vector<std::string> out;
  while (out.size() < n) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

// Index in [0, n) with probability proportional to 1 / (i + 1).
inline std::size_t zipf_index(std::size_t n, Rng& rng) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += 1.0 / static_cast<double>(i + 1);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= 1.0 / static_cast<double>(i + 1);
    if (u < 0) return i;
  }
  return n - 1;
}

struct TaggedSentence {
  Sentence tokens;
  std::vector<char> slots;  // 'N', 'V', 'A' or 0 per token
  std::size_t topic = 0;
  bool rare = false;
};

}  // namespace detail

/// Deterministic synthetic corpus. The first test article is on topic 0 and
/// no rare word belongs to topic 0, so the leading test sentences form an
/// irrelevant set for every rare word. Rare words never occur in the test
/// corpus; each sits in exactly `rare_occurrences` training sentences of its
/// topic, never as the first token.
inline SynthCorpus generate_synth(const SynthConfig& cfg) {
  if (cfg.topics < 2) throw UsageError("synth: need at least two topics");
  if (cfg.nouns == 0 || cfg.verbs == 0 || cfg.adjectives == 0) throw UsageError("synth: empty word class");
  if (cfg.min_sentences == 0 || cfg.max_sentences < cfg.min_sentences) throw UsageError("synth: bad article length");
  for (double q : {cfg.purity, cfg.compound, cfg.modifier})
    if (!(q >= 0 && q <= 1)) throw UsageError("synth: probabilities must lie in [0, 1]");
  Rng rng(derive_seed(cfg.seed, "synth"));

  std::set<std::string> used;
  for (const auto& t : detail::synth_templates())
    for (const auto& p : t.parts)
      if (p.size() > 1) used.insert(p);
  used.insert({"a", "N", "V", "A"});

  SynthCorpus out;
  std::vector<std::map<char, std::vector<std::string>>> lexicon(cfg.topics);
  for (std::size_t t = 0; t < cfg.topics; ++t) {
    lexicon[t]['N'] = detail::make_words(cfg.nouns, rng, used);
    lexicon[t]['V'] = detail::make_words(cfg.verbs, rng, used);
    lexicon[t]['A'] = detail::make_words(cfg.adjectives, rng, used);
    for (const auto& [c, words] : lexicon[t])
      for (const auto& w : words) out.topic_of[w] = t;
  }

  auto sentence = [&](std::size_t topic) {
    const auto& tpl = detail::synth_templates()[rng.below(detail::synth_templates().size())];
    detail::TaggedSentence s;
    s.topic = topic;
    auto content = [&](char cls) {
      const std::size_t t = rng.bernoulli(cfg.purity) ? topic : rng.below(cfg.topics);
      const auto& words = lexicon[t][cls];
      s.tokens.push_back(words[detail::zipf_index(words.size(), rng)]);
      s.slots.push_back(cls);
    };
    for (const auto& p : tpl.parts) {
      if (p == "N") {
        if (rng.bernoulli(cfg.modifier)) content('A');
        if (rng.bernoulli(cfg.compound)) content('N');
        content('N');
      } else if (p == "V" || p == "A") {
        content(p[0]);
      } else {
        s.tokens.push_back(p);
        s.slots.push_back(0);
      }
    }
    return s;
  };
  auto articles = [&](std::size_t count, bool first_topic_zero) {
    std::vector<detail::TaggedSentence> sents;
    for (std::size_t a = 0; a < count; ++a) {
      const std::size_t topic = (a == 0 && first_topic_zero) ? 0 : rng.below(cfg.topics);
      const std::size_t len = cfg.min_sentences + rng.below(cfg.max_sentences - cfg.min_sentences + 1);
      for (std::size_t i = 0; i < len; ++i) sents.push_back(sentence(topic));
    }
    return sents;
  };
  std::vector<detail::TaggedSentence> train = articles(cfg.train_articles, false);
  std::vector<detail::TaggedSentence> test = articles(cfg.test_articles, true);

  // Rare words: topics 1.., classes cycling noun, noun, verb, noun, adjective.
  static const char kClasses[] = {'N', 'N', 'V', 'N', 'A'};
  const std::vector<std::string> rare = detail::make_words(cfg.rare_words, rng, used);
  for (std::size_t r = 0; r < rare.size(); ++r) {
    const std::size_t topic = 1 + r % (cfg.topics - 1);
    const char cls = kClasses[r % std::size(kClasses)];
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& s = train[i];
      if (s.rare || s.topic != topic) continue;
      for (std::size_t j = 1; j < s.slots.size(); ++j)
        if (s.slots[j] == cls) {
          candidates.push_back(i);
          break;
        }
    }
    if (candidates.size() < cfg.rare_occurrences)
      throw DataError("synth: not enough sentences on topic " + std::to_string(topic) + " for rare word '" + rare[r] + "'");
    for (std::size_t c : rng.sample_without_replacement(candidates.size(), cfg.rare_occurrences)) {
      auto& s = train[candidates[c]];
      std::vector<std::size_t> slots;
      for (std::size_t j = 1; j < s.slots.size(); ++j)
        if (s.slots[j] == cls) slots.push_back(j);
      s.tokens[slots[rng.below(slots.size())]] = rare[r];
      s.rare = true;
    }
    out.roster.push_back(rare[r]);
    out.topic_of[rare[r]] = topic;
  }

  for (auto& s : train) {
    s.tokens.emplace_back(kEos);
    out.train.push_back(std::move(s.tokens));
  }
  for (auto& s : test) {
    s.tokens.emplace_back(kEos);
    out.test.push_back(std::move(s.tokens));
  }
  return out;
}

}  // namespace wordlearn
