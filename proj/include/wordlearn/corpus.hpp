#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wordlearn/rng.hpp"
#include "wordlearn/tensor.hpp"

namespace wordlearn {

inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kReservedPrefix = "<unused";

// A sentence is its whitespace tokens followed by <eos>.
using Sentence = std::vector<std::string>;
using TokenIds = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Loading

/// One sentence per non-empty line, tokens split on whitespace, <eos>
/// appended. No case folding or re-tokenization is applied.
inline std::vector<Sentence> parse_corpus(std::istream& in) {
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    Sentence s;
    for (std::string tok; ls >> tok;) s.push_back(std::move(tok));
    if (s.empty()) continue;
    s.emplace_back(kEos);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sentence> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus '" + path.string() + "'");
  auto out = parse_corpus(in);
  if (out.empty()) throw DataError("corpus '" + path.string() + "' is empty");
  return out;
}

// Stream view: sentences concatenated in file order.
inline std::vector<std::string> flatten(const std::vector<Sentence>& corpus) {
  std::vector<std::string> out;
  for (const auto& s : corpus) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Writes sentences back in the one-per-line format, dropping the <eos> marker.
inline void write_corpus(const std::filesystem::path& path, const std::vector<Sentence>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& s : corpus) {
    bool first = true;
    for (const auto& tok : s) {
      if (tok == kEos) continue;
      out << (first ? "" : " ") << tok;
      first = false;
    }
    out << '\n';
  }
}

inline bool contains_word(const Sentence& s, const std::string& word) {
  return std::find(s.begin(), s.end(), word) != s.end();
}

inline std::size_t count_word(const std::vector<Sentence>& corpus, const std::string& word) {
  std::size_t n = 0;
  for (const auto& s : corpus) n += static_cast<std::size_t>(std::count(s.begin(), s.end(), word));
  return n;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct VocabOptions {
  std::size_t min_count = 1;
  // Upper bound on vocabulary size including specials; 0 means unbounded.
  std::size_t max_size = 0;
  // Softmax slots that are never trained (used for the unused-token init).
  std::size_t reserved = 1;
  // Words kept regardless of frequency and size limits.
  std::vector<std::string> keep;
};

/// Token <-> index map. Index 0 is <eos>, 1 is <unk>, then the reserved
/// never-trained slots, then corpus words by descending count (ties broken
/// lexicographically).
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{std::string(kEos), std::string(kUnk)}, 0) {}

  static Vocabulary build(const std::vector<Sentence>& corpus, const VocabOptions& opts = {}) {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : corpus)
      for (const auto& tok : s)
        if (tok != kEos && tok != kUnk) ++counts[tok];

    std::set<std::string> keep(opts.keep.begin(), opts.keep.end());
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (const auto& [tok, n] : counts)
      if (keep.count(tok) == 0 && n >= opts.min_count) ranked.emplace_back(tok, n);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });

    std::vector<std::string> tokens{std::string(kEos), std::string(kUnk)};
    for (std::size_t i = 0; i < opts.reserved; ++i) tokens.push_back(std::string(kReservedPrefix) + std::to_string(i) + ">");
    std::vector<std::string> kept;
    for (const auto& w : keep) {
      if (counts.count(w) == 0) throw DataError("vocabulary: word '" + w + "' does not occur in the corpus");
      kept.push_back(w);
    }
    std::sort(kept.begin(), kept.end(), [&](const auto& a, const auto& b) {
      return counts[a] != counts[b] ? counts[a] > counts[b] : a < b;
    });
    std::size_t budget = ranked.size();
    if (opts.max_size > 0) {
      const std::size_t fixed = tokens.size() + kept.size();
      if (fixed > opts.max_size) throw UsageError("vocabulary: max_size smaller than specials + kept words");
      budget = std::min(budget, opts.max_size - fixed);
    }
    // Kept words are merged into frequency order so indices stay rank-like.
    std::vector<std::pair<std::string, std::size_t>> merged(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(budget));
    for (const auto& w : kept) merged.emplace_back(w, counts[w]);
    std::sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (auto& [tok, n] : merged) tokens.push_back(tok);
    return Vocabulary(std::move(tokens), opts.reserved);
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t eos() const { return 0; }
  std::size_t unk() const { return 1; }
  const std::vector<std::size_t>& reserved() const { return reserved_; }
  bool is_reserved(std::size_t i) const { return i >= 2 && i < 2 + reserved_.size(); }

  std::optional<std::size_t> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw DataError("word '" + token + "' is not in the vocabulary");
    return it->second;
  }

  std::size_t index_or_unk(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk() : it->second;
  }

  const std::string& token(std::size_t i) const {
    if (i >= tokens_.size()) throw UsageError("vocabulary: index out of range");
    return tokens_[i];
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const Sentence& s) const {
    TokenIds ids;
    ids.reserve(s.size());
    for (const auto& tok : s) ids.push_back(index_or_unk(tok));
    return ids;
  }

  std::vector<TokenIds> encode(const std::vector<Sentence>& corpus) const {
    std::vector<TokenIds> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back(encode(s));
    return out;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"tokens", tokens_}, {"reserved", reserved_.size()}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    auto tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto reserved = j.at("reserved").get<std::size_t>();
    if (tokens.size() < 2 + reserved || tokens[0] != kEos || tokens[1] != kUnk) {
      throw DataError("vocabulary: malformed token list");
    }
    return Vocabulary(std::move(tokens), reserved);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.reserved_ == b.reserved_;
  }

 private:
  Vocabulary(std::vector<std::string> tokens, std::size_t reserved) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < reserved; ++i) reserved_.push_back(2 + i);
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }

  std::vector<std::string> tokens_;
  std::vector<std::size_t> reserved_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Holdout

/// Sentences of one held-out word, split into train and test.
struct HoldoutSet {
  std::string word;
  std::vector<Sentence> train;
  std::vector<Sentence> test;
  // Corpus with every sentence containing the word (or, for a roster, any
  // roster word) removed. Shared between the words of one roster.
  std::shared_ptr<const std::vector<Sentence>> without_word_corpus;
};

struct RosterHoldout {
  std::shared_ptr<const std::vector<Sentence>> without_words;
  std::vector<HoldoutSet> words;
};

namespace detail {

inline void split_sentences(const std::vector<Sentence>& corpus, HoldoutSet& set, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (contains_word(corpus[i], set.word)) hits.push_back(i);
  if (hits.empty()) throw DataError("word '" + set.word + "' does not occur in the corpus");
  if (hits.size() < 2 * k) {
    throw DataError("word '" + set.word + "' occurs in " + std::to_string(hits.size()) + " sentences, need " +
                    std::to_string(2 * k));
  }
  Rng rng(derive_seed(seed, "split:" + set.word));
  rng.shuffle(hits);
  for (std::size_t i = 0; i < k; ++i) set.train.push_back(corpus[hits[i]]);
  for (std::size_t i = k; i < 2 * k; ++i) set.test.push_back(corpus[hits[i]]);
}

}  // namespace detail

/// Removes every sentence containing any roster word and splits each word's
/// sentences (seeded shuffle) into k train and k test sentences.
inline RosterHoldout hold_out_roster(const std::vector<Sentence>& corpus, const std::vector<std::string>& words,
                                     std::size_t k = 10, std::uint64_t seed = 0) {
  if (words.empty()) throw UsageError("hold_out: empty word roster");
  if (k == 0) throw UsageError("hold_out: split size must be positive");
  std::set<std::string> roster(words.begin(), words.end());
  if (roster.size() != words.size()) throw UsageError("hold_out: roster contains duplicate words");

  RosterHoldout out;
  for (const auto& w : words) {
    HoldoutSet set;
    set.word = w;
    detail::split_sentences(corpus, set, k, seed);
    out.words.push_back(std::move(set));
  }
  auto without = std::make_shared<std::vector<Sentence>>();
  for (const auto& s : corpus) {
    bool hit = false;
    for (const auto& tok : s) hit = hit || roster.count(tok) != 0;
    if (!hit) without->push_back(s);
  }
  out.without_words = without;
  for (auto& set : out.words) set.without_word_corpus = without;
  return out;
}

inline HoldoutSet hold_out(const std::vector<Sentence>& corpus, const std::string& word, std::size_t k = 10,
                           std::uint64_t seed = 0) {
  return std::move(hold_out_roster(corpus, {word}, k, seed).words.front());
}

// ---------------------------------------------------------------------------
// Balanced Latin square (Williams design)

struct PermutationSchedule {
  std::vector<std::vector<std::size_t>> rows;

  std::size_t order() const { return rows.empty() ? 0 : rows.front().size(); }
};

/// Row i is [i, i+1, i-1, i+2, i-2, ...] mod n. For odd n the reversed rows
/// are appended, giving 2n rows.
inline PermutationSchedule latin_square(std::size_t n) {
  if (n == 0) throw UsageError("latin_square: n must be positive");
  std::vector<std::size_t> base;
  base.push_back(0);
  for (std::size_t j = 1; base.size() < n; ++j) {
    base.push_back(j % n);
    if (base.size() < n) base.push_back((n - j % n) % n);
  }
  PermutationSchedule sched;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> row(n);
    for (std::size_t p = 0; p < n; ++p) row[p] = (base[p] + i) % n;
    sched.rows.push_back(std::move(row));
  }
  if (n % 2 == 1 && n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = sched.rows[i];
      std::reverse(row.begin(), row.end());
      sched.rows.push_back(std::move(row));
    }
  }
  return sched;
}

// ---------------------------------------------------------------------------
// Batching

/// Time-major block of token indices: ids[t * batch + b].
struct TokenBlock {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> ids;

  std::size_t at(std::size_t t, std::size_t b) const { return ids[t * batch + b]; }
};

/// Truncated-unroll batching of a token stream.
///
/// The stream is cut into `batch` contiguous lanes of S = steps * B tokens
/// each, where B = floor((len - 1) / (batch * steps)); lane j reads inputs
/// [jS, jS + S) and targets shifted by one. Block i covers steps
/// [i * steps, (i + 1) * steps) of every lane, so hidden state carried from
/// block i to i + 1 continues each lane. Targets yielded per epoch:
/// batch * steps * B.
class BatchStream {
 public:
  BatchStream(TokenIds tokens, std::size_t batch, std::size_t steps)
      : tokens_(std::move(tokens)), batch_(batch), steps_(steps) {
    if (batch == 0 || steps == 0) throw UsageError("batch_stream: batch and steps must be positive");
    blocks_ = tokens_.size() < 2 ? 0 : (tokens_.size() - 1) / (batch * steps);
    if (blocks_ == 0) {
      throw DataError("batch_stream: corpus of " + std::to_string(tokens_.size()) + " tokens is too small for batch " +
                      std::to_string(batch) + " x steps " + std::to_string(steps));
    }
  }

  std::size_t num_blocks() const { return blocks_; }
  std::size_t batch() const { return batch_; }
  std::size_t steps() const { return steps_; }

  std::pair<TokenBlock, TokenBlock> block(std::size_t i) const {
    if (i >= blocks_) throw UsageError("batch_stream: block index out of range");
    const std::size_t lane = steps_ * blocks_;
    TokenBlock in{steps_, batch_, std::vector<std::size_t>(steps_ * batch_)};
    TokenBlock out = in;
    for (std::size_t t = 0; t < steps_; ++t) {
      for (std::size_t b = 0; b < batch_; ++b) {
        const std::size_t pos = b * lane + i * steps_ + t;
        in.ids[t * batch_ + b] = tokens_[pos];
        out.ids[t * batch_ + b] = tokens_[pos + 1];
      }
    }
    return {std::move(in), std::move(out)};
  }

 private:
  TokenIds tokens_;
  std::size_t batch_;
  std::size_t steps_;
  std::size_t blocks_ = 0;
};

inline BatchStream batch_stream(TokenIds tokens, std::size_t batch, std::size_t steps) {
  return BatchStream(std::move(tokens), batch, steps);
}

inline TokenIds concatenate(const std::vector<TokenIds>& sentences) {
  TokenIds out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

/// Padded per-sentence batch. Sentence b predicts ids[1..] from ids[..n-1];
/// padding positions have mask 0.
struct PaddedBatch {
  TokenBlock inputs;
  TokenBlock targets;
  std::vector<Real> mask;  // time-major, like the blocks
  std::vector<std::size_t> lengths;  // predictions per sentence
};

inline PaddedBatch sentence_batch(const std::vector<TokenIds>& sentences, std::size_t pad = 0) {
  if (sentences.empty()) throw UsageError("sentence_batch: no sentences");
  std::size_t steps = 0;
  for (const auto& s : sentences) {
    if (s.size() < 2) throw DataError("sentence_batch: sentence has no prediction positions");
    steps = std::max(steps, s.size() - 1);
  }
  const std::size_t batch = sentences.size();
  PaddedBatch out;
  out.inputs = TokenBlock{steps, batch, std::vector<std::size_t>(steps * batch, pad)};
  out.targets = out.inputs;
  out.mask.assign(steps * batch, Real(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& s = sentences[b];
    out.lengths.push_back(s.size() - 1);
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      out.inputs.ids[t * batch + b] = s[t];
      out.targets.ids[t * batch + b] = s[t + 1];
      out.mask[t * batch + b] = Real(1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Default experiment roster: the hundred held-out words.

inline const std::vector<std::string>& hundred_word_roster() {
  static const std::vector<std::string> words = {
      "ab", "absolutely", "agricultural", "aim", "animals", "announcing", "arguments", "assist", "averaged", "bass",
      "bullish", "calculations", "carefully", "claiming", "compare", "conceded", "congressman", "consortium",
      "contest", "creation", "cumulative", "danger", "darman", "die", "discrimination", "disney", "dominant",
      "dorrance", "edwards", "efficiency", "elderly", "enable", "encouraging", "entry", "environmentalists",
      "execution", "expenditures", "facts", "formula", "gaf", "geneva", "globe", "golf", "healthcare", "homeless",
      "honor", "horse", "incest", "informed", "investigators", "iron", "jackson", "judgment", "knight", "lake",
      "lend", "louisville", "lowest", "lucrative", "maturing", "minute", "mississippi", "motorola", "museum",
      "nabisco", "netherlands", "nigel", "nine-month", "owning", "petrochemical", "pioneer", "prepare", "print",
      "pro-choice", "recognized", "referred", "regarded", "rejection", "requests", "resorts", "responsibilities",
      "rolled", "sansui", "serving", "setback", "similarly", "somewhere", "sounds", "staffers", "stolen",
      "treasurys", "treat", "truth", "utah", "vulnerable", "ward", "warsaw", "wedtech", "wheat", "wisconsin"};
  return words;
}

// One word per line; blank lines and lines starting with '#' are ignored.
inline std::vector<std::string> load_roster(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read word roster '" + path.string() + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string w;
    if (!(ls >> w) || w.front() == '#') continue;
    out.push_back(w);
  }
  if (out.empty()) throw DataError("word roster '" + path.string() + "' is empty");
  return out;
}

}  // namespace wordlearn
