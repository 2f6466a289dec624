#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "wordlearn/checkpoint.hpp"
#include "wordlearn/corpus.hpp"
#include "wordlearn/dropout.hpp"
#include "wordlearn/lm.hpp"

namespace wordlearn {

struct PretrainConfig {
  ModelConfig model;
  std::size_t epochs = 55;
  Real base_lr = 1.0;
  std::size_t decay_start_epoch = 14;
  Real decay = 1.0 / 1.15;
  std::size_t batch = 20;

  void validate() const {
    model.validate();
    if (!(base_lr > 0)) throw UsageError("pretrain: base_lr must be positive");
    if (!(decay > 0 && decay < 1)) throw UsageError("pretrain: decay must lie in (0, 1)");
    if (batch == 0) throw UsageError("pretrain: batch must be positive");
  }
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"model", c.model},         {"epochs", c.epochs}, {"base_lr", c.base_lr},
       {"decay_start_epoch", c.decay_start_epoch}, {"decay", c.decay},   {"batch", c.batch}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  j.at("model").get_to(c.model);
  c.epochs = j.at("epochs").get<std::size_t>();
  c.base_lr = j.at("base_lr").get<Real>();
  c.decay_start_epoch = j.at("decay_start_epoch").get<std::size_t>();
  c.decay = j.at("decay").get<Real>();
  c.batch = j.at("batch").get<std::size_t>();
}

/// Constant base_lr until decay_start_epoch, then multiplied by `decay`
/// once per epoch (the first decayed epoch already carries one factor).
inline Real lr_schedule(std::size_t epoch, const PretrainConfig& cfg) {
  if (epoch < cfg.decay_start_epoch) return cfg.base_lr;
  return cfg.base_lr * std::pow(cfg.decay, static_cast<Real>(epoch - cfg.decay_start_epoch + 1));
}

/// One pass over the stream: per unroll block forward (training), mean
/// cross-entropy, gradient, global-norm clip, SGD. Hidden state is carried
/// between blocks and starts from zero. Returns the mean block loss.
inline double train_epoch(ParamSet& params, const BatchStream& stream, Real lr, const PretrainConfig& cfg, Rng& rng) {
  const ModelConfig& mc = cfg.model;
  LstmState state = LstmState::zeros(mc, stream.batch());
  double total = 0;
  for (std::size_t i = 0; i < stream.num_blocks(); ++i) {
    auto [in, target] = stream.block(i);
    Tape tape;
    ModelVars vars = bind(tape, params, mc);
    ForwardOutput out = forward(tape, vars, mc, in, state, true, &rng);
    Var loss;
    try {
      loss = ops::softmax_cross_entropy(out.logits, target.ids, std::vector<Real>(target.ids.size(), Real(1)));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (block " + std::to_string(i) + " of " +
                           std::to_string(stream.num_blocks()) + ", lr " + std::to_string(lr) + ")");
    }
    GradMap grads = tape.gradients(loss);
    grads = clip_global_norm(std::move(grads), mc.clip_norm);
    sgd_step(params, grads, lr);
    total += loss.value().item();
    state = std::move(out.state);
  }
  return total / static_cast<double>(stream.num_blocks());
}

/// Indices that pretraining must never touch: the reserved slots and the
/// held-out words.
inline std::vector<std::size_t> frozen_indices(const Vocabulary& vocab, const std::vector<std::string>& held_out) {
  std::set<std::size_t> out(vocab.reserved().begin(), vocab.reserved().end());
  for (const auto& w : held_out) out.insert(vocab.index(w));
  return {out.begin(), out.end()};
}

/// Masks the frozen rows of the word-indexed parameters. The softmax rows
/// and biases of a never-seen word would otherwise still move through the
/// normaliser.
inline void freeze_word_rows(ParamSet& params, const std::vector<std::size_t>& frozen) {
  for (const auto& name : {names::embedding, names::softmax_w, names::softmax_b})
    params.set_mask(name, RowMask::all_except(params[name].rows(), frozen));
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_log;  // mean training loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, Real lr, double loss)>;

/// Trains a fresh model on a corpus from which the held-out words were
/// already removed. The vocabulary must contain the held-out words so that
/// they own (frozen) rows.
inline PretrainResult pretrain_run(const std::vector<Sentence>& corpus, const Vocabulary& vocab, PretrainConfig cfg,
                                   std::uint64_t seed, const std::vector<std::string>& held_out = {},
                                   const EpochCallback& on_epoch = {}) {
  cfg.model.vocab_size = vocab.size();
  cfg.validate();
  const std::vector<std::size_t> frozen = frozen_indices(vocab, held_out);
  const std::set<std::size_t> frozen_set(frozen.begin(), frozen.end());

  TokenIds tokens = concatenate(vocab.encode(corpus));
  for (std::size_t id : tokens) {
    if (frozen_set.count(id) != 0)
      throw DataError("pretrain: training corpus contains held-out or reserved token '" + vocab.token(id) + "'");
  }
  const BatchStream stream = batch_stream(std::move(tokens), cfg.batch, cfg.model.unroll_steps);

  Rng init_rng(derive_seed(seed, "init"));
  Rng drop_rng(derive_seed(seed, "dropout"));
  PretrainResult r;
  r.checkpoint.config = cfg.model;
  r.checkpoint.vocab = vocab;
  r.checkpoint.params = init_params(cfg.model, init_rng);
  freeze_word_rows(r.checkpoint.params, frozen);

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const Real lr = lr_schedule(e, cfg);
    const double loss = train_epoch(r.checkpoint.params, stream, lr, cfg, drop_rng);
    r.loss_log.push_back(loss);
    if (on_epoch) on_epoch(e, lr, loss);
  }
  r.checkpoint.params.clear_masks();

  std::vector<std::string> frozen_tokens;
  for (std::size_t i : frozen) frozen_tokens.push_back(vocab.token(i));
  r.checkpoint.metadata = {{"kind", "pretrain"},
                           {"seed", seed},
                           {"epochs_completed", cfg.epochs},
                           {"pretrain", cfg},
                           {"held_out_words", held_out},
                           {"frozen_rows", frozen_tokens},
                           {"freeze_policy", "held-out and reserved rows masked on embedding, softmax.w, softmax.b"},
                           {"loss_log", r.loss_log},
                           {"stream_tokens", stream.num_blocks() * cfg.batch * cfg.model.unroll_steps}};
  return r;
}

}  // namespace wordlearn
