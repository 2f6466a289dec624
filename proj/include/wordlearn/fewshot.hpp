#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "wordlearn/checkpoint.hpp"
#include "wordlearn/corpus.hpp"
#include "wordlearn/dropout.hpp"
#include "wordlearn/eval.hpp"
#include "wordlearn/new_word.hpp"

namespace wordlearn {

enum class Strategy { centroid, optimize };
enum class Init { centroid, zeros, unused_token };
enum class TrainMode { both, input_only, output_only };
enum class Penalty { norm, squared_norm };
enum class Engine { cached, full };

inline const char* to_string(Strategy s) { return s == Strategy::centroid ? "centroid" : "optimize"; }
inline const char* to_string(Init i) {
  switch (i) {
    case Init::centroid: return "centroid";
    case Init::zeros: return "zeros";
    default: return "unused_token";
  }
}
inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::both: return "both";
    case TrainMode::input_only: return "input_only";
    default: return "output_only";
  }
}
inline const char* to_string(Penalty p) { return p == Penalty::norm ? "norm" : "squared_norm"; }
inline const char* to_string(Engine e) { return e == Engine::cached ? "cached" : "full"; }

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> values, const char* what) {
  for (E v : values)
    if (s == to_string(v)) return v;
  std::string opts;
  for (E v : values) opts += std::string(opts.empty() ? "" : ", ") + to_string(v);
  throw UsageError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + opts + ")");
}

inline Strategy parse_strategy(const std::string& s) {
  return parse_enum(s, {Strategy::centroid, Strategy::optimize}, "strategy");
}
inline Init parse_init(const std::string& s) { return parse_enum(s, {Init::centroid, Init::zeros, Init::unused_token}, "init"); }
inline TrainMode parse_mode(const std::string& s) {
  return parse_enum(s, {TrainMode::both, TrainMode::input_only, TrainMode::output_only}, "mode");
}
inline Penalty parse_penalty(const std::string& s) { return parse_enum(s, {Penalty::norm, Penalty::squared_norm}, "penalty"); }
inline Engine parse_engine(const std::string& s) { return parse_enum(s, {Engine::cached, Engine::full}, "engine"); }

inline bool trains_input(TrainMode m) { return m != TrainMode::output_only; }
inline bool trains_output(TrainMode m) { return m != TrainMode::input_only; }

inline constexpr const char* kBatchPolicy = "shuffle(positives+replay) per epoch, batch = #positives";

struct FewShotConfig {
  Strategy strategy = Strategy::optimize;
  Init init = Init::centroid;
  TrainMode mode = TrainMode::both;
  std::size_t epochs = 100;
  Real lr = 0.01;
  Real l2_coeff = 0.01;
  Penalty penalty = Penalty::norm;
  std::size_t replay_size = 100;
  bool clip = false;
  Real clip_norm = 10;
  bool dropout = false;  // uses the model's p_keep when on
  Engine engine = Engine::cached;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw UsageError("fewshot: lr must be positive");
    if (!(l2_coeff >= 0)) throw UsageError("fewshot: l2_coeff must be non-negative");
    if (clip && !(clip_norm > 0)) throw UsageError("fewshot: clip_norm must be positive");
  }
};

inline void to_json(nlohmann::json& j, const FewShotConfig& c) {
  j = {{"strategy", to_string(c.strategy)},
       {"init", to_string(c.init)},
       {"mode", to_string(c.mode)},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"l2_coeff", c.l2_coeff},
       {"penalty", to_string(c.penalty)},
       {"replay_size", c.replay_size},
       {"clip", c.clip},
       {"clip_norm", c.clip_norm},
       {"dropout", c.dropout},
       {"engine", to_string(c.engine)},
       {"seed", c.seed},
       {"batch_policy", kBatchPolicy}};
}

// ---------------------------------------------------------------------------
// Initialisation

/// Mean of the context tokens' parameters over every occurrence in the
/// sentences (the word itself and <eos> excluded). Input rows average input
/// embeddings, output rows and bias average the softmax layer.
inline NewWordParams centroid_params(const std::vector<TokenIds>& sentences, const ParamSet& params, std::size_t word,
                                     std::size_t eos) {
  if (sentences.empty()) throw UsageError("centroid: no sentences");
  const Tensor& e = params[names::embedding];
  const Tensor& w = params[names::softmax_w];
  const Tensor& b = params[names::softmax_b];
  const std::size_t h = e.cols();
  NewWordParams p = NewWordParams::zeros(h);
  std::size_t n = 0;
  for (const auto& s : sentences) {
    if (!contains_index(s, word)) throw DataError("centroid: a sentence does not contain the word");
    std::size_t context = 0;
    for (std::size_t tok : s) {
      if (tok == word || tok == eos) continue;
      const auto er = e.row(tok);
      const auto wr = w.row(tok);
      for (std::size_t c = 0; c < h; ++c) {
        p.input_row[c] += er[c];
        p.output_row[c] += wr[c];
      }
      p.output_bias += b[tok];
      ++context;
    }
    if (context == 0) throw DataError("centroid: a sentence has no context words");
    n += context;
  }
  const Real inv = Real(1) / static_cast<Real>(n);
  for (std::size_t c = 0; c < h; ++c) {
    p.input_row[c] *= inv;
    p.output_row[c] *= inv;
  }
  p.output_bias *= inv;
  return p;
}

inline NewWordParams centroid_params(const std::vector<Sentence>& sentences, const ParamSet& params,
                                     const Vocabulary& vocab, const std::string& word) {
  return centroid_params(vocab.encode(sentences), params, vocab.index(word), vocab.eos());
}

inline NewWordParams init_new_word(Init init, const std::vector<TokenIds>& sentences, const ParamSet& params,
                                   const Vocabulary& vocab, std::size_t word) {
  switch (init) {
    case Init::centroid: return centroid_params(sentences, params, word, vocab.eos());
    case Init::zeros: return NewWordParams::zeros(params[names::embedding].cols());
    case Init::unused_token:
      if (vocab.reserved().empty()) throw UsageError("init unused_token: the vocabulary has no reserved slot");
      return extract_word(params, vocab.reserved().front());
  }
  throw UsageError("init: unknown strategy");
}

// Writes the parts of `p` that `mode` trains.
inline void assign_trainable(ParamSet& params, std::size_t word, const NewWordParams& p, TrainMode mode) {
  if (trains_input(mode)) assign_input(params, word, p);
  if (trains_output(mode)) assign_output(params, word, p);
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayBuffer {
  std::vector<std::size_t> ids;  // indices into the source corpus
  std::vector<TokenIds> sentences;
  std::uint64_t seed = 0;

  std::uint64_t hash() const {
    std::string bytes;
    for (std::size_t id : ids) bytes += std::to_string(id) + ",";
    return detail::fnv1a(bytes);
  }
};

/// Uniform sample without replacement from the sentences that do not
/// contain `word` (pass npos to skip the filter).
inline ReplayBuffer build_replay(const std::vector<TokenIds>& corpus, std::size_t size, std::uint64_t seed,
                                 std::size_t word = static_cast<std::size_t>(-1)) {
  ReplayBuffer buf;
  buf.seed = seed;
  if (size == 0) return buf;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].size() >= 2 && !contains_index(corpus[i], word)) candidates.push_back(i);
  if (candidates.size() < size) {
    throw DataError("replay: corpus has " + std::to_string(candidates.size()) + " usable sentences, need " +
                    std::to_string(size));
  }
  Rng rng(seed);
  for (std::size_t j : rng.sample_without_replacement(candidates.size(), size)) {
    buf.ids.push_back(candidates[j]);
    buf.sentences.push_back(corpus[candidates[j]]);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Training

struct TrainLog {
  std::vector<double> loss;                 // positive-sentence mean cross-entropy, before and after each epoch
  std::vector<std::uint64_t> replay_hashes;  // replay ids seen per epoch
  std::size_t steps = 0;
};

namespace detail {

inline std::uint64_t hash_ids(std::vector<std::size_t> ids) {
  std::sort(ids.begin(), ids.end());
  std::string bytes;
  for (std::size_t id : ids) bytes += std::to_string(id) + ",";
  return fnv1a(bytes);
}

/// State for training one word's rows with every other parameter frozen.
class WordTrainer {
 public:
  WordTrainer(ParamSet& params, const ModelConfig& config, std::size_t word, const std::vector<TokenIds>& positives,
              const std::vector<TokenIds>& replay, const FewShotConfig& cfg)
      : params_(params), config_(config), word_(word), cfg_(cfg), k_(positives.size()),
        tin_(trains_input(cfg.mode)), tout_(trains_output(cfg.mode)) {
    items_ = positives;
    items_.insert(items_.end(), replay.begin(), replay.end());
    const bool all_tape = cfg.engine == Engine::full || (cfg.dropout && config.p_keep < Real(1));
    on_tape_.assign(items_.size(), all_tape);
    if (!all_tape)
      for (std::size_t i = 0; i < k_; ++i) on_tape_[i] = tin_ && word_is_input(items_[i], word_);

    params_.freeze_all();
    if (tin_) params_.set_mask(names::embedding, RowMask::only(params_[names::embedding].rows(), {word_}));
    if (tout_) {
      params_.set_mask(names::softmax_w, RowMask::only(params_[names::softmax_w].rows(), {word_}));
      params_.set_mask(names::softmax_b, RowMask::only(params_[names::softmax_b].rows(), {word_}));
    }

    std::vector<TokenIds> cached;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (on_tape_[i]) continue;
      cache_slot_.push_back(i);
      cached.push_back(items_[i]);
    }
    span_.assign(items_.size(), {0, 0});
    if (!cached.empty()) {
      cache_ = build_word_cache(params_, config_, cached, EvalMode::sentence, word_);
      for (std::size_t p = 0; p < cache_.size(); ++p) {
        auto& s = span_[cache_slot_[cache_.sentence[p]]];
        if (s.second == 0) s.first = p;
        s.second = p + 1;
      }
    }
    theta_ = extract_word(params_, word_);
  }

  ~WordTrainer() { params_.clear_masks(); }

  std::size_t items() const { return items_.size(); }

  // Mean cross-entropy of the positive sentences at the current parameters.
  double positive_loss() const {
    double sum = 0;
    std::size_t n = 0;
    std::vector<TokenIds> direct;
    for (std::size_t i = 0; i < k_; ++i) {
      if (on_tape_[i]) {
        direct.push_back(items_[i]);
        continue;
      }
      for (std::size_t p = span_[i].first; p < span_[i].second; ++p) {
        sum += cache_.nll(p, theta_);
        ++n;
      }
    }
    if (!direct.empty()) {
      const LossTotal t = evaluate_loss(params_, config_, direct, EvalMode::sentence);
      sum += t.sum;
      n += t.count;
    }
    return sum / static_cast<double>(n);
  }

  /// One SGD step on the batch of item indices.
  void step(const std::vector<std::size_t>& batch, Rng& drop_rng) {
    const std::size_t h = config_.hidden_size;
    std::vector<double> g_in(h, 0), g_out(h, 0);
    double g_bias = 0;
    double count = 0;

    std::vector<TokenIds> tape_sentences;
    for (std::size_t i : batch) {
      if (on_tape_[i]) {
        tape_sentences.push_back(items_[i]);
        continue;
      }
      if (!tout_) {
        count += static_cast<double>(span_[i].second - span_[i].first);
        continue;
      }
      for (std::size_t p = span_[i].first; p < span_[i].second; ++p) {
        const Real z = cache_.word_logit(p, theta_);
        const Real lse = log_add_exp(cache_.lse_others[p], z);
        const double dz = std::exp(z - lse) - (cache_.target[p] == word_ ? 1.0 : 0.0);
        const Real* hp = cache_.top.data() + p * h;
        for (std::size_t c = 0; c < h; ++c) g_out[c] += dz * hp[c];
        g_bias += dz;
        count += 1;
      }
    }
    if (!tape_sentences.empty()) {
      PaddedBatch pb = sentence_batch(tape_sentences);
      Tape tape;
      ModelVars vars = bind(tape, params_, config_);
      const bool drop = cfg_.dropout && config_.p_keep < Real(1);
      ForwardOutput out =
          forward(tape, vars, config_, pb.inputs, LstmState::zeros(config_, pb.inputs.batch), drop, &drop_rng);
      Var loss = ops::softmax_cross_entropy(out.logits, pb.targets.ids, pb.mask, ops::Reduction::sum);
      GradMap grads = tape.gradients(loss);
      if (tin_) {
        const auto r = grads.at(names::embedding).row(word_);
        for (std::size_t c = 0; c < h; ++c) g_in[c] += r[c];
      }
      if (tout_) {
        const auto r = grads.at(names::softmax_w).row(word_);
        for (std::size_t c = 0; c < h; ++c) g_out[c] += r[c];
        g_bias += grads.at(names::softmax_b)[word_];
      }
      for (Real m : pb.mask) count += m;
    }
    const double inv = 1.0 / count;
    for (std::size_t c = 0; c < h; ++c) {
      g_in[c] *= inv;
      g_out[c] *= inv;
    }
    g_bias *= inv;

    if (cfg_.l2_coeff > 0) {
      double sq = 0;
      if (tin_)
        for (Real v : theta_.input_row) sq += v * v;
      if (tout_) {
        for (Real v : theta_.output_row) sq += v * v;
        sq += theta_.output_bias * theta_.output_bias;
      }
      // d/dθ of c‖θ‖ is cθ/‖θ‖ (0 at the origin); of c‖θ‖² it is 2cθ.
      double k = 0;
      if (cfg_.penalty == Penalty::squared_norm) k = 2 * cfg_.l2_coeff;
      else if (sq > 0) k = cfg_.l2_coeff / std::sqrt(sq);
      for (std::size_t c = 0; c < h; ++c) {
        if (tin_) g_in[c] += k * theta_.input_row[c];
        if (tout_) g_out[c] += k * theta_.output_row[c];
      }
      if (tout_) g_bias += k * theta_.output_bias;
    }

    if (cfg_.clip) {
      double sq = g_bias * g_bias;
      for (std::size_t c = 0; c < h; ++c) sq += g_in[c] * g_in[c] + g_out[c] * g_out[c];
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) {
        const double s = cfg_.clip_norm / norm;
        for (std::size_t c = 0; c < h; ++c) {
          g_in[c] *= s;
          g_out[c] *= s;
        }
        g_bias *= s;
      }
    }

    for (std::size_t c = 0; c < h; ++c) {
      if (tin_) theta_.input_row[c] -= cfg_.lr * g_in[c];
      if (tout_) theta_.output_row[c] -= cfg_.lr * g_out[c];
    }
    if (tout_) theta_.output_bias -= cfg_.lr * g_bias;
    if (!theta_.finite()) throw NumericalError("fewshot: new-word parameters became non-finite");
    assign_trainable(params_, word_, theta_, cfg_.mode);
  }

 private:
  ParamSet& params_;
  const ModelConfig& config_;
  std::size_t word_;
  const FewShotConfig& cfg_;
  std::size_t k_;
  bool tin_, tout_;
  std::vector<TokenIds> items_;
  std::vector<bool> on_tape_;
  std::vector<std::size_t> cache_slot_;                    // cache sentence -> item
  std::vector<std::pair<std::size_t, std::size_t>> span_;  // item -> cache positions
  WordPositionCache cache_;
  NewWordParams theta_;
};

}  // namespace detail

/// Trains the word's selected rows in place by SGD, everything else frozen.
/// Each epoch shuffles positives and replay together (seeded) and takes
/// mini-batches of as many sentences as there are positives. The loss is
/// mean cross-entropy plus the l2 penalty on the trainable new-word
/// parameters. Starts from whatever the word's rows hold.
inline TrainLog train_new_word(ParamSet& params, const ModelConfig& config, std::size_t word,
                               const std::vector<TokenIds>& positives, const ReplayBuffer& replay,
                               const FewShotConfig& cfg) {
  cfg.validate();
  if (positives.empty()) throw UsageError("fewshot: no training sentences");
  if (word >= config.vocab_size) throw UsageError("fewshot: word index out of range");
  for (const auto& s : positives)
    if (!contains_index(s, word)) throw DataError("fewshot: a training sentence lacks the word");
  for (const auto& s : replay.sentences)
    if (contains_index(s, word)) throw DataError("fewshot: a replay sentence contains the word");

  detail::WordTrainer trainer(params, config, word, positives, replay.sentences, cfg);
  TrainLog log;
  log.loss.push_back(trainer.positive_loss());
  Rng order_rng(derive_seed(cfg.seed, "order"));
  Rng drop_rng(derive_seed(cfg.seed, "dropout"));
  const std::size_t k = positives.size();
  std::vector<std::size_t> order(trainer.items());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    std::vector<std::size_t> seen;
    for (std::size_t start = 0; start < order.size(); start += k) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + k)));
      for (std::size_t i : batch)
        if (i >= k) seen.push_back(replay.ids[i - k]);
      trainer.step(batch, drop_rng);
      ++log.steps;
    }
    log.replay_hashes.push_back(detail::hash_ids(seen));
    log.loss.push_back(trainer.positive_loss());
  }
  return log;
}

struct FewShotOutcome {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Copy of the checkpoint with the word trained on the sentences.
inline FewShotOutcome fewshot_train(const Checkpoint& ck, const std::string& word, const std::vector<Sentence>& train,
                                    const FewShotConfig& cfg, const ReplayBuffer& replay = {}) {
  const std::size_t w = ck.vocab.index(word);
  for (const auto& s : train)
    if (!contains_word(s, word)) throw DataError("fewshot: a training sentence lacks '" + word + "'");
  FewShotOutcome out{ck, {}};
  out.log = train_new_word(out.checkpoint.params, ck.config, w, ck.vocab.encode(train), replay, cfg);
  out.checkpoint.metadata["fewshot"] = {{"word", word},
                                        {"config", cfg},
                                        {"train_sentences", train.size()},
                                        {"replay_hash", detail::hex64(replay.hash())},
                                        {"loss_log", out.log.loss}};
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

/// Hash of the parameter payload, used to show every run starts from the
/// same base.
inline std::uint64_t params_hash(const ParamSet& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& [name, t] : params.tensors()) {
    h = detail::fnv1a(name, h);
    h = detail::fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(Real)), h);
  }
  return h;
}

struct SweepOptions {
  std::vector<std::size_t> shots;  // k values; empty means 1..n
  std::vector<std::size_t> rows;   // schedule rows; empty means all
  std::size_t jobs = 1;
  bool similarity = false;
  std::vector<std::size_t> similarity_exclude;  // beyond the defaults
};

/// Shared inputs of a sweep over one held-out word.
struct SweepData {
  const Checkpoint* base = nullptr;
  const HoldoutSet* holdout = nullptr;
  std::vector<Sentence> full_test;   // stream-mode evaluation corpus
  std::vector<Sentence> irrelevant;  // sentences without the word
};

inline std::uint64_t run_seed(std::uint64_t seed, const std::string& word, std::size_t k, std::size_t row) {
  return derive_seed(seed, "run:" + word + ":" + std::to_string(k) + ":" + std::to_string(row));
}

/// For every k and schedule row, learns the word from the first k sentences
/// of that row on a fresh copy of the base checkpoint and evaluates it.
/// Results come back ordered by (k, row) whatever the job count.
inline std::vector<RunResult> run_shot_sweep(const SweepData& data, const FewShotConfig& cfg,
                                             const PermutationSchedule& schedule, const SweepOptions& opt = {}) {
  cfg.validate();
  const Checkpoint& base = *data.base;
  const HoldoutSet& hs = *data.holdout;
  const std::size_t n = hs.train.size();
  if (schedule.order() != n) throw UsageError("sweep: schedule order does not match the number of train sentences");
  const std::size_t word = base.vocab.index(hs.word);
  const std::vector<TokenIds> train = base.vocab.encode(hs.train);

  std::vector<std::size_t> shots = opt.shots, rows = opt.rows;
  if (shots.empty())
    for (std::size_t k = 1; k <= n; ++k) shots.push_back(k);
  if (rows.empty())
    for (std::size_t r = 0; r < schedule.rows.size(); ++r) rows.push_back(r);
  for (std::size_t k : shots)
    if (k == 0 || k > n) throw UsageError("sweep: k out of range");
  for (std::size_t r : rows)
    if (r >= schedule.rows.size()) throw UsageError("sweep: schedule row out of range");

  const WordEvaluator evaluator(base.params, base.config, word, base.vocab.encode(hs.test),
                                base.vocab.encode(data.full_test), base.vocab.encode(data.irrelevant));
  const WordMetrics before = evaluator.evaluate(base.params);
  const std::uint64_t base_hash = params_hash(base.params);

  ReplayBuffer replay;
  if (cfg.strategy == Strategy::optimize && cfg.replay_size > 0) {
    if (!hs.without_word_corpus) throw UsageError("sweep: replay needs the without-word corpus");
    replay = build_replay(base.vocab.encode(*hs.without_word_corpus), cfg.replay_size,
                          derive_seed(cfg.seed, "replay:" + hs.word), word);
  }
  std::vector<std::size_t> excluded = default_exclusions(base.vocab, word);
  excluded.insert(excluded.end(), opt.similarity_exclude.begin(), opt.similarity_exclude.end());

  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t k : shots)
    for (std::size_t r : rows) grid.emplace_back(k, r);
  std::vector<RunResult> results(grid.size());

  auto run_one = [&](std::size_t g) {
    const auto [k, row] = grid[g];
    std::vector<TokenIds> positives;
    for (std::size_t i = 0; i < k; ++i) positives.push_back(train[schedule.rows[row][i]]);
    FewShotConfig rc = cfg;
    rc.seed = run_seed(cfg.seed, hs.word, k, row);

    ParamSet params = base.params;
    RunResult r;
    r.base_hash = params_hash(params);
    if (r.base_hash != base_hash) throw NumericalError("sweep: run copy differs from the base checkpoint");
    const NewWordParams init = init_new_word(cfg.strategy == Strategy::centroid ? Init::centroid : cfg.init, positives,
                                             params, base.vocab, word);
    assign_trainable(params, word, init, cfg.mode);
    if (cfg.strategy == Strategy::optimize) r.loss_log = train_new_word(params, base.config, word, positives, replay, rc).loss;

    const WordMetrics after = evaluator.evaluate(params);
    r.word = hs.word;
    r.strategy = to_string(cfg.strategy);
    r.init = cfg.strategy == Strategy::centroid ? "centroid" : to_string(cfg.init);
    r.mode = to_string(cfg.mode);
    r.k = k;
    r.perm = row;
    r.ppl_new_before = before.ppl_new;
    r.ppl_new_after = after.ppl_new;
    r.pct_new = pct_change(before.ppl_new, after.ppl_new);
    r.ppl_full_before = before.ppl_full;
    r.ppl_full_after = after.ppl_full;
    r.pct_full = std::isnan(before.ppl_full) ? before.ppl_full : pct_change(before.ppl_full, after.ppl_full);
    r.lp_target = after.lp.target;
    r.lp_insentence = after.lp.insentence;
    r.lp_irrelevant = after.lp.irrelevant;
    r.seed = rc.seed;
    if (opt.similarity) r.similarity = similarity_map(params, word, excluded);
    results[g] = std::move(r);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, grid.size()));
  if (jobs == 1) {
    for (std::size_t g = 0; g < grid.size(); ++g) run_one(g);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (std::size_t g = next++; g < grid.size(); g = next++) {
        try {
          run_one(g);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace wordlearn
