#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "wordlearn/checkpoint.hpp"
#include "wordlearn/new_word.hpp"
#include "wordlearn/stats.hpp"

namespace wordlearn {

/// 100 * (after - before) / before. Improvements are negative.
inline double pct_change(double before, double after) {
  if (!(before > 0)) throw UsageError("pct_change: 'before' must be positive");
  return 100.0 * (after - before) / before;
}

// ---------------------------------------------------------------------------
// Log-probability breakdown

/// Mean natural-log probability the model assigns to the word at three kinds
/// of positions.
struct LogProbBreakdown {
  double target = 0;      // positions where the word is the next token
  double insentence = 0;  // other positions of sentences containing it
  double irrelevant = 0;  // every position of sentences without it
};

namespace detail {

struct WordSums {
  double nll = 0;
  std::size_t positions = 0;
  double lp_target = 0;
  std::size_t n_target = 0;
  double lp_other = 0;
  std::size_t n_other = 0;

  void add(double nll_i, double word_lp, bool is_target) {
    nll += nll_i;
    ++positions;
    if (is_target) {
      lp_target += word_lp;
      ++n_target;
    } else {
      lp_other += word_lp;
      ++n_other;
    }
  }
};

inline WordSums word_sums_direct(const ParamSet& params, const ModelConfig& config,
                                 const std::vector<TokenIds>& sentences, EvalMode mode, std::size_t word) {
  WordSums s;
  visit_positions(params, config, sentences, mode, [&](const Position& p) {
    s.add(-log_softmax_at(p.logits, p.target), log_softmax_at(p.logits, word), p.target == word);
  });
  return s;
}

inline WordSums word_sums_cached(const WordPositionCache& cache, const NewWordParams& np) {
  WordSums s;
  for (std::size_t i = 0; i < cache.size(); ++i) s.add(cache.nll(i, np), cache.word_log_prob(i, np), cache.target[i] == cache.word);
  return s;
}

inline bool any_contains(const std::vector<TokenIds>& sentences, std::size_t word) {
  for (const auto& s : sentences)
    if (contains_index(s, word)) return true;
  return false;
}

inline double mean_of(double sum, std::size_t n) {
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

}  // namespace detail

/// Sentence-mode breakdown. Test sentences must contain the word and the
/// irrelevant sentences must not.
inline LogProbBreakdown logprob_breakdown(const ParamSet& params, const ModelConfig& config, std::size_t word,
                                          const std::vector<TokenIds>& test, const std::vector<TokenIds>& irrelevant) {
  for (const auto& s : test)
    if (!contains_index(s, word)) throw DataError("logprob_breakdown: a test sentence lacks the word");
  if (detail::any_contains(irrelevant, word)) throw DataError("logprob_breakdown: word occurs in the irrelevant set");
  const auto t = detail::word_sums_direct(params, config, test, EvalMode::sentence, word);
  if (t.n_target == 0) throw DataError("logprob_breakdown: the word is never a prediction target in the test set");
  const auto r = detail::word_sums_direct(params, config, irrelevant, EvalMode::sentence, word);
  return {t.lp_target / static_cast<double>(t.n_target), detail::mean_of(t.lp_other, t.n_other),
          r.lp_other / static_cast<double>(r.n_other)};
}

inline LogProbBreakdown logprob_breakdown(const Checkpoint& ck, const std::string& word,
                                          const std::vector<Sentence>& test, const std::vector<Sentence>& irrelevant) {
  return logprob_breakdown(ck.params, ck.config, ck.vocab.index(word), ck.vocab.encode(test), ck.vocab.encode(irrelevant));
}

/// Default irrelevant set: the leading sentences of the test corpus.
inline std::vector<Sentence> default_irrelevant_set(const std::vector<Sentence>& test_corpus, std::size_t n = 10) {
  if (test_corpus.size() < n) throw DataError("irrelevant set: test corpus has fewer than " + std::to_string(n) + " sentences");
  return {test_corpus.begin(), test_corpus.begin() + static_cast<std::ptrdiff_t>(n)};
}

// ---------------------------------------------------------------------------
// Per-word evaluation with cached frozen activations

struct WordMetrics {
  double ppl_new = 0;
  double ppl_full = std::numeric_limits<double>::quiet_NaN();
  LogProbBreakdown lp;
};

/// Evaluates models that differ from a base model only in one word's rows.
///
/// For each evaluation set a WordPositionCache is built once from the base
/// parameters. A cache stays exact as long as the word's input row is
/// unchanged or the word never appears as an input in that set; otherwise
/// the set is re-run through the network.
class WordEvaluator {
 public:
  WordEvaluator(const ParamSet& base, const ModelConfig& config, std::size_t word, std::vector<TokenIds> test,
                std::vector<TokenIds> full, std::vector<TokenIds> irrelevant)
      : config_(config), word_(word), test_(std::move(test)), full_(std::move(full)), irrelevant_(std::move(irrelevant)) {
    if (test_.empty()) throw DataError("evaluation: no test sentences for the word");
    for (const auto& s : test_)
      if (!contains_index(s, word_)) throw DataError("evaluation: a test sentence lacks the word");
    if (detail::any_contains(irrelevant_, word_)) throw DataError("evaluation: word occurs in the irrelevant set");
    base_input_ = extract_word(base, word_).input_row;
    test_cache_ = build_word_cache(base, config_, test_, EvalMode::sentence, word_);
    if (!full_.empty()) {
      const TokenIds stream = concatenate(full_);
      full_has_input_ = stream.size() > 1 && std::find(stream.begin(), stream.end() - 1, word_) != stream.end() - 1;
      full_cache_ = build_word_cache(base, config_, full_, EvalMode::stream, word_);
    }
    if (!irrelevant_.empty()) irrelevant_cache_ = build_word_cache(base, config_, irrelevant_, EvalMode::sentence, word_);
  }

  std::size_t word() const { return word_; }

  WordMetrics evaluate(const ParamSet& params) const {
    const NewWordParams np = extract_word(params, word_);
    const bool input_same = np.input_row == base_input_;
    WordMetrics m;
    const detail::WordSums t = input_same ? detail::word_sums_cached(test_cache_, np)
                                          : detail::word_sums_direct(params, config_, test_, EvalMode::sentence, word_);
    m.ppl_new = std::exp(t.nll / static_cast<double>(t.positions));
    m.lp.target = detail::mean_of(t.lp_target, t.n_target);
    m.lp.insentence = detail::mean_of(t.lp_other, t.n_other);
    if (!full_.empty()) {
      const detail::WordSums f = (input_same || !full_has_input_)
                                     ? detail::word_sums_cached(full_cache_, np)
                                     : detail::word_sums_direct(params, config_, full_, EvalMode::stream, word_);
      m.ppl_full = std::exp(f.nll / static_cast<double>(f.positions));
    }
    m.lp.irrelevant = std::numeric_limits<double>::quiet_NaN();
    if (!irrelevant_.empty()) {
      const detail::WordSums r = detail::word_sums_cached(irrelevant_cache_, np);
      m.lp.irrelevant = detail::mean_of(r.lp_other, r.n_other);
    }
    return m;
  }

 private:
  ModelConfig config_;
  std::size_t word_;
  std::vector<TokenIds> test_, full_, irrelevant_;
  std::vector<Real> base_input_;
  bool full_has_input_ = false;
  WordPositionCache test_cache_, full_cache_, irrelevant_cache_;
};

// ---------------------------------------------------------------------------
// Similarity maps

struct SimilarityMap {
  std::size_t word = 0;
  std::vector<std::size_t> indices;  // compared words, ascending
  std::vector<double> values;        // dot products with the word's output row
};

/// The word itself, <eos>, <unk> and the reserved slots.
inline std::vector<std::size_t> default_exclusions(const Vocabulary& vocab, std::size_t word) {
  std::vector<std::size_t> ex{word, vocab.eos(), vocab.unk()};
  ex.insert(ex.end(), vocab.reserved().begin(), vocab.reserved().end());
  return ex;
}

inline SimilarityMap similarity_map(const ParamSet& params, std::size_t word, const std::vector<std::size_t>& excluded) {
  const Tensor& w = params[names::softmax_w];
  if (word >= w.rows()) throw UsageError("similarity_map: word index out of range");
  std::vector<bool> skip(w.rows(), false);
  skip[word] = true;
  for (std::size_t e : excluded)
    if (e < skip.size()) skip[e] = true;
  SimilarityMap m;
  m.word = word;
  const auto u = w.row(word);
  for (std::size_t j = 0; j < w.rows(); ++j) {
    if (skip[j]) continue;
    const auto r = w.row(j);
    double d = 0;
    for (std::size_t c = 0; c < u.size(); ++c) d += u[c] * r[c];
    m.indices.push_back(j);
    m.values.push_back(d);
  }
  return m;
}

enum class Correlation { pearson, spearman };

inline double map_correlation(const SimilarityMap& a, const SimilarityMap& b, Correlation method = Correlation::pearson) {
  if (a.indices != b.indices) throw UsageError("map_correlation: maps cover different index sets");
  return method == Correlation::pearson ? stats::pearson(a.values, b.values) : stats::spearman(a.values, b.values);
}

// ---------------------------------------------------------------------------
// Run results

struct RunResult {
  std::string word;
  std::string strategy;
  std::string init;
  std::string mode;
  std::size_t k = 0;
  std::size_t perm = 0;
  double ppl_new_before = 0;
  double ppl_new_after = 0;
  double pct_new = 0;
  double ppl_full_before = 0;
  double ppl_full_after = 0;
  double pct_full = 0;
  double lp_target = 0;
  double lp_insentence = 0;
  double lp_irrelevant = 0;
  std::uint64_t seed = 0;
  // Not part of the CSV.
  std::vector<double> loss_log;
  std::uint64_t base_hash = 0;
  std::optional<SimilarityMap> similarity;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"word",           "strategy",      "init",          "mode",
                                             "k",              "perm",          "ppl_new_before", "ppl_new_after",
                                             "pct_new",        "ppl_full_before", "ppl_full_after", "pct_full",
                                             "lp_target",      "lp_insentence", "lp_irrelevant", "seed"};
  return cols;
}

// Shortest text that reads back to the same double.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_real(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError("results: bad number '" + s + "'");
  return v;
}

inline std::vector<std::string> result_fields(const RunResult& r) {
  return {r.word,
          r.strategy,
          r.init,
          r.mode,
          std::to_string(r.k),
          std::to_string(r.perm),
          format_real(r.ppl_new_before),
          format_real(r.ppl_new_after),
          format_real(r.pct_new),
          format_real(r.ppl_full_before),
          format_real(r.ppl_full_after),
          format_real(r.pct_full),
          format_real(r.lp_target),
          format_real(r.lp_insentence),
          format_real(r.lp_irrelevant),
          std::to_string(r.seed)};
}

inline std::string join(const std::vector<std::string>& parts, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

/// CSV with an optional leading "# plan=<fingerprint>" comment line.
inline std::string results_csv(const std::vector<RunResult>& results, const std::string& fingerprint = "") {
  std::string out;
  if (!fingerprint.empty()) out += "# plan=" + fingerprint + "\n";
  out += join(result_columns()) + "\n";
  for (const auto& r : results) out += join(result_fields(r)) + "\n";
  return out;
}

inline nlohmann::json results_json(const std::vector<RunResult>& results, const std::string& fingerprint = "") {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    const auto f = result_fields(r);
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t i = 0; i < f.size(); ++i) row[result_columns()[i]] = f[i];
    row["k"] = r.k;
    row["perm"] = r.perm;
    row["seed"] = r.seed;
    rows.push_back(std::move(row));
  }
  nlohmann::json j = {{"columns", result_columns()}, {"log_base", "e"}, {"runs", rows}};
  if (!fingerprint.empty()) j["fingerprint"] = fingerprint;
  return j;
}

inline std::vector<RunResult> parse_results_csv(std::istream& in) {
  std::vector<RunResult> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line);
    if (!header) {
      if (f != result_columns()) throw DataError("results: unexpected CSV header");
      header = true;
      continue;
    }
    if (f.size() != result_columns().size()) throw DataError("results: row has " + std::to_string(f.size()) + " fields");
    RunResult r;
    r.word = f[0];
    r.strategy = f[1];
    r.init = f[2];
    r.mode = f[3];
    r.k = std::stoul(f[4]);
    r.perm = std::stoul(f[5]);
    r.ppl_new_before = parse_real(f[6]);
    r.ppl_new_after = parse_real(f[7]);
    r.pct_new = parse_real(f[8]);
    r.ppl_full_before = parse_real(f[9]);
    r.ppl_full_after = parse_real(f[10]);
    r.pct_full = parse_real(f[11]);
    r.lp_target = parse_real(f[12]);
    r.lp_insentence = parse_real(f[13]);
    r.lp_irrelevant = parse_real(f[14]);
    r.seed = std::stoull(f[15]);
    out.push_back(std::move(r));
  }
  if (!header) throw DataError("results: missing CSV header");
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Runs sharing word, strategy, init, mode and k.
struct CurvePoint {
  std::string word, strategy, init, mode;
  std::size_t k = 0;
  std::vector<double> pct_new;  // per run, input order
  std::vector<double> pct_full;
  double mean_pct_new = 0;
  double mean_pct_full = 0;
  double mean_lp_target = 0;
  double mean_lp_insentence = 0;
  double mean_lp_irrelevant = 0;
};

/// One word of the strategy comparison: mean pct_new of each arm at the
/// largest k both arms reached.
struct ScatterPoint {
  std::string word;
  std::size_t k = 0;
  double optimize = 0;
  double centroid = 0;
};

struct Report {
  std::vector<CurvePoint> curves;
  std::vector<ScatterPoint> scatter;
  std::optional<stats::TTest> strategy_test;  // optimize vs centroid, paired by word
};

inline std::string condition_label(const std::string& strategy, const std::string& init, const std::string& mode) {
  return strategy + "/" + init + "/" + mode;
}

/// Groups results into mean curves and compares the optimize arm (centroid
/// init, both embeddings) with the centroid arm word by word.
inline Report aggregate_report(const std::vector<RunResult>& results) {
  if (results.empty()) throw DataError("aggregate_report: no results");
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::size_t>;
  std::map<Key, std::vector<const RunResult*>> groups;
  for (const auto& r : results) groups[{r.word, r.strategy, r.init, r.mode, r.k}].push_back(&r);

  Report rep;
  for (const auto& [key, runs] : groups) {
    CurvePoint c;
    std::tie(c.word, c.strategy, c.init, c.mode, c.k) = key;
    double lt = 0, li = 0, lr = 0;
    for (const RunResult* r : runs) {
      c.pct_new.push_back(r->pct_new);
      c.pct_full.push_back(r->pct_full);
      lt += r->lp_target;
      li += r->lp_insentence;
      lr += r->lp_irrelevant;
    }
    const double n = static_cast<double>(runs.size());
    c.mean_pct_new = stats::mean(c.pct_new);
    c.mean_pct_full = stats::mean(c.pct_full);
    c.mean_lp_target = lt / n;
    c.mean_lp_insentence = li / n;
    c.mean_lp_irrelevant = lr / n;
    rep.curves.push_back(std::move(c));
  }

  std::map<std::string, std::map<std::size_t, double>> opt, cen;
  for (const auto& c : rep.curves) {
    if (c.strategy == "optimize" && c.init == "centroid" && c.mode == "both") opt[c.word][c.k] = c.mean_pct_new;
    if (c.strategy == "centroid" && c.mode == "both") cen[c.word][c.k] = c.mean_pct_new;
  }
  for (const auto& [word, ok] : opt) {
    auto it = cen.find(word);
    if (it == cen.end()) continue;
    for (auto k = ok.rbegin(); k != ok.rend(); ++k) {
      auto ck = it->second.find(k->first);
      if (ck == it->second.end()) continue;
      rep.scatter.push_back({word, k->first, k->second, ck->second});
      break;
    }
  }
  if (rep.scatter.size() >= 2) {
    std::vector<double> a, b;
    for (const auto& s : rep.scatter) {
      a.push_back(s.optimize);
      b.push_back(s.centroid);
    }
    rep.strategy_test = stats::paired_t_test(a, b);
  }
  return rep;
}

inline std::string curves_csv(const Report& rep, const std::string& fingerprint = "") {
  std::string out;
  if (!fingerprint.empty()) out += "# plan=" + fingerprint + "\n";
  out += "word,strategy,init,mode,k,runs,mean_pct_new,mean_pct_full,pct_new_runs\n";
  for (const auto& c : rep.curves) {
    std::vector<std::string> runs;
    for (double v : c.pct_new) runs.push_back(format_real(v));
    out += join({c.word, c.strategy, c.init, c.mode, std::to_string(c.k), std::to_string(c.pct_new.size()),
                 format_real(c.mean_pct_new), format_real(c.mean_pct_full), join(runs, ';')}) +
           "\n";
  }
  return out;
}

inline std::string scatter_csv(const Report& rep, const std::string& fingerprint = "") {
  std::string out;
  if (!fingerprint.empty()) out += "# plan=" + fingerprint + "\n";
  out += "word,k,pct_new_optimize,pct_new_centroid\n";
  for (const auto& s : rep.scatter)
    out += join({s.word, std::to_string(s.k), format_real(s.optimize), format_real(s.centroid)}) + "\n";
  return out;
}

/// Table of mean natural-log probabilities per condition and k.
inline std::string breakdown_csv(const Report& rep, const std::string& fingerprint = "") {
  using Key = std::tuple<std::string, std::string, std::string, std::size_t>;
  std::map<Key, std::tuple<double, double, double, std::size_t>> acc;
  for (const auto& c : rep.curves) {
    auto& [t, i, r, n] = acc[{c.strategy, c.init, c.mode, c.k}];
    t += c.mean_lp_target;
    i += c.mean_lp_insentence;
    r += c.mean_lp_irrelevant;
    ++n;
  }
  std::string out;
  if (!fingerprint.empty()) out += "# plan=" + fingerprint + "\n";
  out += "strategy,init,mode,k,words,ln_p_target,ln_p_insentence,ln_p_irrelevant\n";
  for (const auto& [key, v] : acc) {
    const auto& [s, in, m, k] = key;
    const auto& [t, i, r, n] = v;
    const double d = static_cast<double>(n);
    out += join({s, in, m, std::to_string(k), std::to_string(n), format_real(t / d), format_real(i / d),
                 format_real(r / d)}) +
           "\n";
  }
  return out;
}

}  // namespace wordlearn
