#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "wordlearn/lm.hpp"

namespace wordlearn {

/// The parameters that belong to a single word: its input embedding row,
/// its output (softmax) row and its softmax bias.
struct NewWordParams {
  std::vector<Real> input_row;
  std::vector<Real> output_row;
  Real output_bias = 0;

  bool finite() const {
    for (Real v : input_row)
      if (!std::isfinite(v)) return false;
    for (Real v : output_row)
      if (!std::isfinite(v)) return false;
    return std::isfinite(output_bias);
  }

  static NewWordParams zeros(std::size_t hidden) {
    return NewWordParams{std::vector<Real>(hidden, 0), std::vector<Real>(hidden, 0), 0};
  }
};

inline NewWordParams extract_word(const ParamSet& params, std::size_t index) {
  const Tensor& e = params[names::embedding];
  const Tensor& w = params[names::softmax_w];
  if (index >= e.rows()) throw UsageError("extract_word: index out of range");
  NewWordParams p;
  p.input_row.assign(e.row(index).begin(), e.row(index).end());
  p.output_row.assign(w.row(index).begin(), w.row(index).end());
  p.output_bias = params[names::softmax_b][index];
  return p;
}

inline void assign_input(ParamSet& params, std::size_t index, const NewWordParams& p) {
  auto row = params[names::embedding].row(index);
  if (row.size() != p.input_row.size()) throw UsageError("assign_word: input row width mismatch");
  std::copy(p.input_row.begin(), p.input_row.end(), row.begin());
}

inline void assign_output(ParamSet& params, std::size_t index, const NewWordParams& p) {
  auto row = params[names::softmax_w].row(index);
  if (row.size() != p.output_row.size()) throw UsageError("assign_word: output row width mismatch");
  std::copy(p.output_row.begin(), p.output_row.end(), row.begin());
  params[names::softmax_b][index] = p.output_bias;
}

inline void assign_word(ParamSet& params, std::size_t index, const NewWordParams& p) {
  assign_input(params, index, p);
  assign_output(params, index, p);
}

inline bool contains_index(const TokenIds& s, std::size_t word) {
  return std::find(s.begin(), s.end(), word) != s.end();
}

// True when `word` is an input token of the sentence (any position but the last).
inline bool word_is_input(const TokenIds& s, std::size_t word) {
  return s.size() > 1 && std::find(s.begin(), s.end() - 1, word) != s.end() - 1;
}

inline Real log_add_exp(Real a, Real b) {
  const Real mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

/// Per-position summary of a frozen network's predictions with one word's
/// output parameters factored out.
///
/// With every parameter except one word's rows frozen, a position whose
/// input history does not involve that word's input embedding has a fixed
/// top hidden state h, fixed logits for every other word, and therefore a
/// fixed log-normaliser over the other words, lse_others. The word's own
/// logit is z = u.h + b for its output row u and bias b, so
///   log p(word)   = z - logaddexp(lse_others, z)
///   log p(target) = logit_target - logaddexp(lse_others, z)
/// is exact for any (u, b) at O(hidden) cost per position.
struct WordPositionCache {
  std::size_t word = 0;
  std::size_t hidden = 0;
  MatrixR top;                        // positions x hidden
  std::vector<Real> lse_others;       // log-sum-exp over logits of all words but `word`
  std::vector<Real> target_logit;     // logit of the target (unused when target == word)
  std::vector<std::size_t> target;
  std::vector<std::size_t> sentence;  // owning sentence of each position
  std::size_t sentences = 0;

  std::size_t size() const { return target.size(); }

  Real word_logit(std::size_t i, const NewWordParams& p) const {
    Real z = p.output_bias;
    const Real* h = top.data() + i * hidden;
    for (std::size_t c = 0; c < hidden; ++c) z += p.output_row[c] * h[c];
    return z;
  }

  // log p(word) at position i.
  Real word_log_prob(std::size_t i, const NewWordParams& p) const {
    const Real z = word_logit(i, p);
    return z - log_add_exp(lse_others[i], z);
  }

  // -log p(target) at position i.
  Real nll(std::size_t i, const NewWordParams& p) const {
    const Real z = word_logit(i, p);
    const Real lse = log_add_exp(lse_others[i], z);
    return lse - (target[i] == word ? z : target_logit[i]);
  }

  LossTotal loss(const NewWordParams& p) const {
    LossTotal t;
    for (std::size_t i = 0; i < size(); ++i) t.sum += nll(i, p);
    t.count = size();
    return t;
  }
};

/// Builds the cache from one inference pass with the given parameters. Valid
/// for any later parameters that differ from these only in `word`'s output
/// row and bias, plus its input row when `word` never occurs as an input.
inline WordPositionCache build_word_cache(const ParamSet& params, const ModelConfig& config,
                                          const std::vector<TokenIds>& sentences, EvalMode mode, std::size_t word) {
  WordPositionCache cache;
  cache.word = word;
  cache.hidden = config.hidden_size;
  cache.sentences = sentences.size();
  std::vector<Real> tops;
  visit_positions(params, config, sentences, mode, [&](const Position& p) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < p.logits.size(); ++j)
      if (j != word) mx = std::max(mx, p.logits[j]);
    Real z = 0;
    for (std::size_t j = 0; j < p.logits.size(); ++j)
      if (j != word) z += std::exp(p.logits[j] - mx);
    cache.lse_others.push_back(mx + std::log(z));
    cache.target_logit.push_back(p.target == word ? Real(0) : p.logits[p.target]);
    cache.target.push_back(p.target);
    cache.sentence.push_back(p.sentence);
    tops.insert(tops.end(), p.top.begin(), p.top.end());
  });
  cache.top = ConstMatMap(tops.data(), static_cast<Eigen::Index>(cache.target.size()),
                          static_cast<Eigen::Index>(config.hidden_size));
  return cache;
}

}  // namespace wordlearn
